//! Random densities and random primitive walks for property tests and oracles.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ergodic;
use crate::error::{OqwError, Result};
use crate::linalg::{self, c, ComplexMatrix};
use crate::walk::{BlockDensity, OqwModel};

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Density of order `n` drawn from the induced (Hilbert–Schmidt) measure.
pub fn random_density<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let g = ginibre(n, n, rng);
    let rho = &g * g.adjoint();
    let tr = rho.trace().re;
    linalg::hermitian_part(&rho.unscale(tr))
}

/// Block density with random site weights.
pub fn random_block_density<R: Rng + ?Sized>(sites: usize, n: usize, rng: &mut R) -> BlockDensity {
    let weights: Vec<f64> = (0..sites).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let components = weights
        .iter()
        .map(|w| random_density(n, rng).scale(w / total))
        .collect();
    BlockDensity::new(components).expect("random block density is valid")
}

/// Walk whose columns are random isometries: each column's stacked blocks
/// come from a QR factorization, with an identity admixture on the diagonal
/// block so that the walk is aperiodic.
pub fn random_walk<R: Rng + ?Sized>(sites: usize, n: usize, admixture: f64, rng: &mut R) -> OqwModel {
    let mut blocks = Vec::with_capacity(sites * sites);
    for j in 0..sites {
        let mut stacked = ginibre(sites * n, n, rng);
        let mut diag = stacked.view_mut((j * n, 0), (n, n));
        diag += linalg::identity(n).scale(admixture);
        let q = stacked.qr().q();
        for i in 0..sites {
            blocks.push(((i, j), q.view((i * n, 0), (n, n)).into_owned()));
        }
    }
    OqwModel::validated(sites, n, blocks).expect("QR columns are orthonormal")
}

/// Random walk that passes the primitivity test with a comfortable gap.
pub fn random_primitive_model<R: Rng + ?Sized>(sites: usize, n: usize, rng: &mut R) -> Result<OqwModel> {
    for _ in 0..100 {
        let model = random_walk(sites, n, 0.5, rng);
        let summary = ergodic::spectral_summary(&model.superoperator())?;
        if summary.primitive && summary.gap > 1e-3 {
            return Ok(model);
        }
    }
    Err(OqwError::NonConvergent(
        "no primitive sample in 100 draws".into(),
    ))
}

/// Column-stochastic matrix with strictly positive entries.
pub fn random_stochastic<R: Rng + ?Sized>(k: usize, rng: &mut R) -> ComplexMatrix {
    let mut p = ComplexMatrix::from_fn(k, k, |_, _| linalg::real(rng.random::<f64>() + 0.05));
    for j in 0..k {
        let s: f64 = p.column(j).iter().map(|z| z.re).sum();
        p.column_mut(j).unscale_mut(s);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn densities_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..5 {
            let rho = random_density(n, &mut rng);
            assert!(linalg::is_psd(&rho));
            assert!((rho.trace().re - 1.0).abs() < 1e-14);
        }
        let b = random_block_density(3, 2, &mut rng);
        assert!((b.total_trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_models_are_primitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, n) in [(2, 2), (3, 3), (4, 2)] {
            let m = random_primitive_model(k, n, &mut rng).unwrap();
            assert!(m.validate().trace_preserving);
        }
    }
}
