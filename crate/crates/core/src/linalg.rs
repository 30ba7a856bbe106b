//! Dense complex linear algebra over row-stacked vectorizations.
//!
//! `vec` stacks matrix rows, so `vec(A X Bᵀ) = (A ⊗ B) vec(X)` and the
//! conjugation `X ↦ B X B*` is represented by `B ⊗ conj(B)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{OqwError, Result};

pub type ComplexMatrix = DMatrix<C64>;
pub type VecState = DVector<C64>;

/// Condition estimates above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Builds a complex matrix from real rows.
pub fn real_matrix(rows: &[&[f64]]) -> ComplexMatrix {
    let r = rows.len();
    let cols = rows.first().map_or(0, |row| row.len());
    ComplexMatrix::from_fn(r, cols, |i, j| real(rows[i][j]))
}

/// Builds a complex matrix from rows of (re, im) pairs.
pub fn complex_matrix(rows: &[&[(f64, f64)]]) -> ComplexMatrix {
    let r = rows.len();
    let cols = rows.first().map_or(0, |row| row.len());
    ComplexMatrix::from_fn(r, cols, |i, j| c(rows[i][j].0, rows[i][j].1))
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// Matrix unit `E_ab` of order `n`.
pub fn matrix_unit(n: usize, a: usize, b: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(n, n);
    m[(a, b)] = ONE;
    m
}

fn ensure_square(a: &ComplexMatrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(OqwError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

fn perfect_square_root(dim: usize) -> Option<usize> {
    let r = (dim as f64).sqrt().round() as usize;
    (r * r == dim).then_some(r)
}

/// Row-major stacking of a square matrix.
pub fn vec(a: &ComplexMatrix) -> Result<VecState> {
    let n = ensure_square(a)?;
    Ok(VecState::from_fn(n * n, |k, _| a[(k / n, k % n)]))
}

/// Inverse of [`vec`].
pub fn devec(x: &VecState) -> Result<ComplexMatrix> {
    let n = perfect_square_root(x.len()).ok_or_else(|| {
        OqwError::DimensionMismatch(format!("length {} is not a perfect square", x.len()))
    })?;
    Ok(ComplexMatrix::from_fn(n, n, |r, c| x[r * n + c]))
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// `[A] = A ⊗ conj(A)`.
pub fn conj_rep(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_square(a)?;
    Ok(a.kronecker(&a.conjugate()))
}

/// `Σ V_i ⊗ conj(V_i)` for a Kraus family.
pub fn map_representation(kraus: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let first = kraus
        .first()
        .ok_or_else(|| OqwError::DimensionMismatch("empty Kraus family".into()))?;
    let n = ensure_square(first)?;
    let mut out = ComplexMatrix::zeros(n * n, n * n);
    for v in kraus {
        if ensure_square(v)? != n {
            return Err(OqwError::DimensionMismatch(format!(
                "Kraus operators of orders {} and {}",
                n,
                v.nrows()
            )));
        }
        out += conj_rep(v)?;
    }
    Ok(out)
}

/// Matrix exponential (Padé scaling-and-squaring).
pub fn expm(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(a.clone());
    }
    Ok(a.exp())
}

pub fn norm_one(a: &ComplexMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_vec(x: &VecState) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest singular value.
pub fn operator_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// 1-norm condition number; `inf` when LU breaks down.
pub fn condition_number(a: &ComplexMatrix) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    match a.clone().lu().try_inverse() {
        Some(inv) => norm_one(a) * norm_one(&inv),
        None => f64::INFINITY,
    }
}

/// Inverse with a condition-number guard.
pub fn invert(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_square(a)?;
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(OqwError::Singular {
            condition: f64::INFINITY,
        })?;
    let condition = norm_one(a) * norm_one(&inv);
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(OqwError::Singular { condition });
    }
    Ok(inv)
}

pub fn solve_linear(a: &ComplexMatrix, b: &VecState) -> Result<VecState> {
    let n = ensure_square(a)?;
    if b.len() != n {
        return Err(OqwError::DimensionMismatch(format!(
            "system of order {} with right-hand side of length {}",
            n,
            b.len()
        )));
    }
    let inv = invert(a)?;
    let mut x = &inv * b;
    // one step of iterative refinement
    let r = b - a * &x;
    x += &inv * r;
    Ok(x)
}

/// Solves `A X = B` for a matrix right-hand side.
pub fn solve_matrix(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let inv = invert(a)?;
    if b.nrows() != a.nrows() {
        return Err(OqwError::DimensionMismatch(format!(
            "system of order {} with right-hand side of {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let mut x = &inv * b;
    let r = b - a * &x;
    x += &inv * r;
    Ok(x)
}

pub fn determinant(a: &ComplexMatrix) -> Result<C64> {
    ensure_square(a)?;
    Ok(a.clone().lu().determinant())
}

#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<C64>,
    /// Unit-norm right eigenvectors stored as columns.
    pub vectors: ComplexMatrix,
}

fn schur(a: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let n = ensure_square(a)?;
    let scale = max_abs(a).max(1.0);
    let decomposition = nalgebra::linalg::Schur::try_new(a.clone(), 1e-15 * scale, 10_000 * n.max(1))
        .ok_or_else(|| OqwError::NonConvergent("Schur iteration".into()))?;
    Ok(decomposition.unpack())
}

pub fn eigenvalues(a: &ComplexMatrix) -> Result<Vec<C64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let (_, t) = schur(a)?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Eigenvalues and eigenvectors of a general complex matrix.
pub fn eig(a: &ComplexMatrix) -> Result<Eigen> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Eigen {
            values: Vec::new(),
            vectors: a.clone(),
        });
    }
    let (q, t) = schur(a)?;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let floor = 1e-14 * max_abs(&t).max(1e-300);
    let mut y = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = values[k];
        y[(k, k)] = ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for l in (j + 1)..=k {
                s += t[(j, l)] * y[(l, k)];
            }
            let mut d = t[(j, j)] - lambda;
            if d.norm() < floor {
                d = real(floor);
            }
            y[(j, k)] = -s / d;
        }
    }
    let mut vectors = q * y;
    for k in 0..n {
        let norm = vectors.column(k).norm();
        if norm > 0.0 {
            vectors.column_mut(k).unscale_mut(norm);
        }
    }
    Ok(Eigen { values, vectors })
}

pub fn spectral_radius(a: &ComplexMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Orthonormal basis (columns) of the numerical null space: singular
/// values at most `tol · max(σ_max, 1)`.
pub fn null_space(a: &ComplexMatrix, tol: f64) -> ComplexMatrix {
    let n = a.ncols();
    if a.nrows() < n {
        let mut padded = ComplexMatrix::zeros(n, n);
        padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        return null_space(&padded, tol);
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let cutoff = tol * sigma.iter().cloned().fold(1.0, f64::max);
    let columns: Vec<VecState> = (0..sigma.len())
        .filter(|&k| sigma[k] <= cutoff)
        .map(|k| v_t.row(k).adjoint())
        .collect();
    if columns.is_empty() {
        ComplexMatrix::zeros(n, 0)
    } else {
        ComplexMatrix::from_columns(&columns)
    }
}

/// `Tr(devec(x))`.
pub fn trace_v(x: &VecState) -> Result<C64> {
    let n = perfect_square_root(x.len()).ok_or_else(|| {
        OqwError::DimensionMismatch(format!("length {} is not a perfect square", x.len()))
    })?;
    Ok((0..n).map(|i| x[i * n + i]).sum())
}

pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).unscale(2.0)
}

pub fn is_hermitian(a: &ComplexMatrix, tol: f64) -> bool {
    a.nrows() == a.ncols() && max_abs(&(a - a.adjoint())) <= tol * max_abs(a).max(1.0)
}

/// Eigenvalues of the Hermitian part, ascending.
pub fn hermitian_eigenvalues(a: &ComplexMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut values: Vec<f64> = hermitian_part(a)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .collect();
    values.sort_by(|x, y| x.total_cmp(y));
    values
}

pub fn min_hermitian_eigenvalue(a: &ComplexMatrix) -> f64 {
    hermitian_eigenvalues(a).first().cloned().unwrap_or(0.0)
}

/// Hermitian with smallest eigenvalue ≥ −1e−10·‖A‖.
pub fn is_psd(a: &ComplexMatrix) -> bool {
    if !is_hermitian(a, 1e-9) {
        return false;
    }
    min_hermitian_eigenvalue(a) >= -1e-10 * operator_norm(a).max(1e-300)
}

/// `n²` densities spanning all matrices of order `n`:
/// `E_aa`, `(E_aa+E_bb+E_ab+E_ba)/2` and `(E_aa+E_bb−iE_ab+iE_ba)/2`.
pub fn density_basis(n: usize) -> Vec<ComplexMatrix> {
    let mut basis = Vec::with_capacity(n * n);
    for a in 0..n {
        basis.push(matrix_unit(n, a, a));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let mut x = ComplexMatrix::zeros(n, n);
            x[(a, a)] = real(0.5);
            x[(b, b)] = real(0.5);
            x[(a, b)] = real(0.5);
            x[(b, a)] = real(0.5);
            basis.push(x);
            let mut y = ComplexMatrix::zeros(n, n);
            y[(a, a)] = real(0.5);
            y[(b, b)] = real(0.5);
            y[(a, b)] = c(0.0, -0.5);
            y[(b, a)] = c(0.0, 0.5);
            basis.push(y);
        }
    }
    basis
}

/// Row functional `w` applied to `x`: `Σ w_k x_k`.
pub fn apply_functional(w: &VecState, x: &VecState) -> C64 {
    w.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> ComplexMatrix {
        // small deterministic LCG keeps these unit tests dependency free
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        ComplexMatrix::from_fn(n, n, |_, _| c(next(), next()))
    }

    #[test]
    fn vec_stacks_rows() {
        let a = complex_matrix(&[&[(1.0, 0.0), (2.0, 1.0)], &[(3.0, 0.0), (4.0, -1.0)]]);
        let v = vec(&a).unwrap();
        assert_eq!(v.as_slice(), &[c(1.0, 0.0), c(2.0, 1.0), c(3.0, 0.0), c(4.0, -1.0)]);
        assert_eq!(devec(&v).unwrap(), a);
        assert_eq!(vec(&identity(2)).unwrap().as_slice(), &[ONE, ZERO, ZERO, ONE]);
    }

    #[test]
    fn vec_rejects_rectangular() {
        assert!(matches!(
            vec(&ComplexMatrix::zeros(2, 3)),
            Err(OqwError::NotSquare { rows: 2, cols: 3 })
        ));
        assert!(devec(&VecState::zeros(3)).is_err());
        assert!(trace_v(&VecState::zeros(5)).is_err());
    }

    #[test]
    fn kron_matches_vec_identity() {
        for seed in 0..100 {
            let a = sample(2, seed);
            let b = sample(2, seed + 1000);
            let x = sample(2, seed + 2000);
            let lhs = kron(&a, &b) * vec(&x).unwrap();
            let rhs = vec(&(&a * &x * b.transpose())).unwrap();
            assert!(max_abs_vec(&(lhs - rhs)) < 1e-12);
        }
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
    }

    #[test]
    fn conj_rep_is_conjugation() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u1 = real_matrix(&[&[s, s], &[0.0, 0.0]]);
        let rep = conj_rep(&u1).unwrap();
        for k in 0..4 {
            assert!((rep[(0, k)] - real(0.5)).norm() < 1e-15);
            for r in 1..4 {
                assert_eq!(rep[(r, k)], ZERO);
            }
        }
        let b = sample(3, 5);
        let x = sample(3, 6);
        let lhs = conj_rep(&b).unwrap() * vec(&x).unwrap();
        let rhs = vec(&(&b * &x * b.adjoint())).unwrap();
        assert!(max_abs_vec(&(lhs - rhs)) < 1e-12);
        assert_eq!(conj_rep(&identity(3)).unwrap(), identity(9));
    }

    #[test]
    fn map_representation_of_flip_channel() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v1 = identity(2).scale(s);
        let v2 = real_matrix(&[&[0.0, s], &[s, 0.0]]);
        let rep = map_representation(&[v1, v2]).unwrap();
        let out = devec(&(rep * vec(&matrix_unit(2, 0, 0)).unwrap())).unwrap();
        assert!(max_abs(&(out - identity(2).scale(0.5))) < 1e-15);
        assert_eq!(map_representation(&[identity(2)]).unwrap(), identity(4));
        assert!(map_representation(&[identity(2), identity(3)]).is_err());
    }

    #[test]
    fn expm_basics() {
        assert!(max_abs(&(expm(&ComplexMatrix::zeros(3, 3)).unwrap() - identity(3))) < 1e-15);
        let d = real_matrix(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        let e = expm(&d).unwrap();
        assert!((e[(0, 0)].re - (-1f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)].re - (-2f64).exp()).abs() < 1e-15);
        for seed in 0..20 {
            let a = sample(4, seed);
            let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
            assert!(max_abs(&(prod - identity(4))) < 1e-12);
        }
    }

    #[test]
    fn expm_matches_series() {
        for seed in 0..20 {
            let mut a = sample(4, 77 + seed);
            a = a.unscale(operator_norm(&a));
            let mut term = identity(4);
            let mut series = identity(4);
            for k in 1..30 {
                term = (&term * &a).unscale(k as f64);
                series += &term;
            }
            assert!(max_abs(&(expm(&a).unwrap() - series)) < 1e-10);
        }
    }

    #[test]
    fn inverses_and_singularity() {
        assert_eq!(invert(&identity(3)).unwrap(), identity(3));
        let two = identity(3).scale(2.0);
        assert!(max_abs(&(invert(&two).unwrap() - identity(3).scale(0.5))) < 1e-15);
        let singular = real_matrix(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(invert(&singular), Err(OqwError::Singular { .. })));
        let a = sample(5, 11);
        let b = VecState::from_fn(5, |k, _| c(k as f64, 1.0));
        let x = solve_linear(&a, &b).unwrap();
        assert!((&a * x - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn eig_reconstructs() {
        for seed in 0..20 {
            let a = sample(6, 300 + seed);
            let e = eig(&a).unwrap();
            let lambda = ComplexMatrix::from_diagonal(&VecState::from_vec(e.values.clone()));
            let v_inv = invert(&e.vectors).unwrap();
            let recon = &e.vectors * lambda * v_inv;
            assert!(max_abs(&(recon - &a)) < 1e-8);
        }
    }

    #[test]
    fn stochastic_matrix_has_unit_eigenvalue() {
        let p = real_matrix(&[&[0.5, 0.2, 0.0], &[0.25, 0.3, 1.0], &[0.25, 0.5, 0.0]]);
        let values = eigenvalues(&p).unwrap();
        assert!(values.iter().any(|z| (z - ONE).norm() < 1e-12));
    }

    #[test]
    fn trace_functional() {
        assert_eq!(trace_v(&vec(&identity(2)).unwrap()).unwrap(), real(2.0));
        assert_eq!(trace_v(&vec(&matrix_unit(2, 0, 0)).unwrap()).unwrap(), ONE);
        for x in density_basis(3) {
            assert!((trace_v(&vec(&x).unwrap()).unwrap() - ONE).norm() < 1e-15);
            assert!(is_psd(&x));
        }
    }

    #[test]
    fn null_space_of_rank_deficient() {
        let a = real_matrix(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let n = null_space(&a, 1e-10);
        assert_eq!(n.ncols(), 1);
        assert!(max_abs(&(&a * &n)) < 1e-14);
    }
}
