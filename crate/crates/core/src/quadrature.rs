//! Adaptive Gauss–Kronrod (7/15) quadrature for matrix-valued integrands.

use crate::error::{OqwError, Result};
use crate::linalg::{self, ComplexMatrix};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the odd Kronrod nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 200_000;

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub value: ComplexMatrix,
    /// Sum of the per-panel |K15 − G7| estimates (max-abs entry).
    pub error: f64,
    pub panels: usize,
}

fn panel<F>(f: &F, a: f64, b: f64) -> Result<(ComplexMatrix, f64)>
where
    F: Fn(f64) -> Result<ComplexMatrix>,
{
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let centre = f(mid)?;
    let mut kronrod = centre.scale(WGK[7]);
    let mut gauss = centre.scale(WG[3]);
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(mid - dx)? + f(mid + dx)?;
        kronrod += pair.scale(WGK[k]);
        if k % 2 == 1 {
            gauss += pair.scale(WG[k / 2]);
        }
    }
    let err = linalg::max_abs(&(&kronrod - &gauss)) * half;
    Ok((kronrod.scale(half), err))
}

/// `∫_a^b f(t) dt` to absolute tolerance `tol`, starting from `initial`
/// equal panels. Each accepted panel meets its share of `tol` in
/// proportion to its length.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: f64, initial: usize) -> Result<Quadrature>
where
    F: Fn(f64) -> Result<ComplexMatrix>,
{
    if !(b > a) {
        return Err(OqwError::DimensionMismatch(format!("empty interval [{a}, {b}]")));
    }
    let width = b - a;
    let initial = initial.max(1);
    let mut stack: Vec<(f64, f64)> = (0..initial)
        .rev()
        .map(|k| {
            let lo = a + width * k as f64 / initial as f64;
            let hi = a + width * (k + 1) as f64 / initial as f64;
            (lo, hi)
        })
        .collect();
    let mut value: Option<ComplexMatrix> = None;
    let mut error = 0.0;
    let mut panels = 0;
    while let Some((lo, hi)) = stack.pop() {
        let (v, e) = panel(&f, lo, hi)?;
        let share = tol * (hi - lo) / width;
        if e <= share || (hi - lo) < width * 1e-13 {
            error += e;
            panels += 1;
            value = Some(match value {
                Some(acc) => acc + v,
                None => v,
            });
        } else {
            if panels + stack.len() > MAX_PANELS {
                return Err(OqwError::NonConvergent(format!(
                    "quadrature needs more than {MAX_PANELS} panels"
                )));
            }
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    Ok(Quadrature {
        value: value.expect("at least one panel"),
        error,
        panels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real;

    fn scalar(x: f64) -> ComplexMatrix {
        ComplexMatrix::from_element(1, 1, real(x))
    }

    #[test]
    fn polynomial_and_exponential() {
        let q = integrate(|t| Ok(scalar(t.powi(5))), 0.0, 2.0, 1e-12, 1).unwrap();
        assert!((q.value[(0, 0)].re - 64.0 / 6.0).abs() < 1e-12);
        let q = integrate(|t| Ok(scalar((-3.0 * t).exp())), 0.0, 40.0, 1e-12, 4).unwrap();
        assert!((q.value[(0, 0)].re - 1.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn oscillatory_integrand_refines() {
        let q = integrate(|t| Ok(scalar((10.0 * t).sin())), 0.0, 3.0, 1e-11, 1).unwrap();
        let exact = (1.0 - (30.0f64).cos()) / 10.0;
        assert!((q.value[(0, 0)].re - exact).abs() < 1e-10);
        assert!(q.panels > 1);
    }
}
