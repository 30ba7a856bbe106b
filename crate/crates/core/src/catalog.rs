//! Reference models with known closed-form answers. Sites are 0-based.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use crate::linalg::{self, c, real_matrix, ComplexMatrix};
use crate::walk::OqwModel;

/// `(1/√2)[[1,1],[0,0]]`.
pub fn upper_collapse() -> ComplexMatrix {
    real_matrix(&[&[1.0, 1.0], &[0.0, 0.0]]).scale(FRAC_1_SQRT_2)
}

/// `(1/√2)[[0,0],[1,−1]]`.
pub fn lower_collapse() -> ComplexMatrix {
    real_matrix(&[&[0.0, 0.0], &[1.0, -1.0]]).scale(FRAC_1_SQRT_2)
}

/// `(1/√3)[[1,1],[0,1]]`.
pub fn upper_shear() -> ComplexMatrix {
    real_matrix(&[&[1.0, 1.0], &[0.0, 1.0]]).scale(1.0 / 3f64.sqrt())
}

/// `(1/√3)[[1,0],[−1,1]]`.
pub fn lower_shear() -> ComplexMatrix {
    real_matrix(&[&[1.0, 0.0], &[-1.0, 1.0]]).scale(1.0 / 3f64.sqrt())
}

pub fn rotation(theta: f64) -> ComplexMatrix {
    let (s, co) = theta.sin_cos();
    real_matrix(&[&[co, -s], &[s, co]])
}

pub fn pauli_x() -> ComplexMatrix {
    real_matrix(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(2, 2);
    m[(0, 1)] = c(0.0, -1.0);
    m[(1, 0)] = c(0.0, 1.0);
    m
}

fn build(sites: usize, blocks: Vec<((usize, usize), ComplexMatrix)>) -> OqwModel {
    OqwModel::validated(sites, 2, blocks).expect("catalog model is trace preserving")
}

/// Nonunital two-site walk: collapses out of site 0, shears out of site 1.
pub fn two_site_nonunital() -> OqwModel {
    build(
        2,
        vec![
            ((0, 0), upper_collapse()),
            ((1, 0), lower_collapse()),
            ((0, 1), upper_shear()),
            ((1, 1), lower_shear()),
        ],
    )
}

/// Unital walk on a triangle with stationary state `I/6` at every site.
pub fn three_site_unital() -> OqwModel {
    let half = linalg::identity(2).scale(0.5);
    let down = real_matrix(&[&[1.0, 0.0], &[-1.0, 1.0]]).scale(0.5);
    let up = real_matrix(&[&[1.0, 1.0], &[0.0, 1.0]]).scale(0.5);
    build(
        3,
        vec![
            ((0, 0), half.clone()),
            ((1, 1), half.clone()),
            ((2, 2), half),
            ((0, 1), down.clone()),
            ((1, 2), down.clone()),
            ((2, 0), down),
            ((0, 2), up.clone()),
            ((2, 1), up.clone()),
            ((1, 0), up),
        ],
    )
}

/// Irreducible two-site walk used for the return-time constructions.
pub fn two_site_irreducible() -> OqwModel {
    build(
        2,
        vec![
            ((0, 0), lower_collapse()),
            ((0, 1), upper_shear()),
            ((1, 0), upper_collapse()),
            ((1, 1), lower_shear()),
        ],
    )
}

/// Two-site walk whose generator `Φ − I` has every block invertible.
pub fn two_site_complete() -> OqwModel {
    build(
        2,
        vec![
            ((0, 0), upper_shear()),
            ((0, 1), lower_shear()),
            ((1, 0), lower_shear()),
            ((1, 1), upper_shear()),
        ],
    )
}

/// Deterministic hopping by rotations: `π/4` out of site 0, `π/2` out of site 1.
pub fn rotation_hopping() -> OqwModel {
    build(
        2,
        vec![((0, 1), rotation(FRAC_PI_2)), ((1, 0), rotation(FRAC_PI_4))],
    )
}

/// Symmetric collapse walk: stays with the upper collapse, hops with the lower.
pub fn collapse_hopping() -> OqwModel {
    build(
        2,
        vec![
            ((0, 0), upper_collapse()),
            ((0, 1), lower_collapse()),
            ((1, 0), lower_collapse()),
            ((1, 1), upper_collapse()),
        ],
    )
}

/// Three-site walk with Pauli-type hops whose generator is used in continuous time.
pub fn three_site_pauli() -> OqwModel {
    let s = FRAC_1_SQRT_2;
    build(
        3,
        vec![
            ((0, 0), linalg::identity(2).scale(1.0 / 3f64.sqrt())),
            ((0, 1), real_matrix(&[&[1.0, 0.0], &[0.0, -1.0]]).scale(s)),
            ((1, 0), pauli_y().scale((2.0f64 / 3.0).sqrt())),
            ((1, 2), pauli_y().scale(s)),
            ((2, 2), pauli_y().scale(s)),
            ((2, 1), pauli_x().scale(s)),
        ],
    )
}

/// Column-convention Q-matrix on four vertices.
pub fn four_vertex_qmatrix() -> ComplexMatrix {
    real_matrix(&[
        &[-2.0, 2.0, 3.0, 0.0],
        &[1.0, -6.0, 3.0, 0.0],
        &[1.0, 2.0, -9.0, 1.0],
        &[0.0, 2.0, 3.0, -1.0],
    ])
}

/// Two-state chain that always switches.
pub fn flip_chain() -> OqwModel {
    let one = ComplexMatrix::from_element(1, 1, linalg::ONE);
    OqwModel::validated(2, 1, [((1, 0), one.clone()), ((0, 1), one)])
        .expect("flip chain is stochastic")
}
