//! First-visit monitoring: generating functions, their `z → 1` limits and
//! the hitting / mean hitting time operators.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{OqwError, Result};
use crate::linalg::{self, ComplexMatrix, ONE};
use crate::walk::{check_site_density, OqwModel, SiteLayout, SuperOperator};

/// Below this spectral radius of `ℚΦ̂` the resolvent is evaluated at `z = 1` directly.
pub const DIRECT_RADIUS: f64 = 1.0 - 1e-8;
/// Abel iterates beyond this magnitude signal a divergent limit.
pub const DIVERGENCE_BOUND: f64 = 1e8;
/// Branch probabilities below this are pruned.
pub const BRANCH_FLOOR: f64 = 1e-14;
/// Hitting probabilities below `1 − HIT_TOL` make the mean hitting time infinite.
pub const HIT_TOL: f64 = 1e-8;

const ABEL_ORDERS: std::ops::RangeInclusive<i32> = 10..=30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfKind {
    /// `ℙ_iΦ̂(𝕀 − zℚΦ̂)⁻¹ℙ_j`
    FirstVisit,
    /// `ℙ_iΦ̂(𝕀 − zℚΦ̂)⁻²ℙ_j`
    MeanHitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitMethod {
    Direct,
    Abel,
}

#[derive(Debug, Clone)]
pub enum Limit {
    Finite {
        value: ComplexMatrix,
        method: LimitMethod,
    },
    Divergent,
}

impl Limit {
    pub fn value(&self) -> Option<&ComplexMatrix> {
        match self {
            Limit::Finite { value, .. } => Some(value),
            Limit::Divergent => None,
        }
    }

    pub fn method(&self) -> Option<LimitMethod> {
        match self {
            Limit::Finite { method, .. } => Some(*method),
            Limit::Divergent => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Limit::Finite { .. })
    }
}

/// A monitored generating function: evolution restricted to avoid `avoid`,
/// read off at `target`, started from `source`.
#[derive(Debug, Clone)]
pub struct GeneratingFunction<'a> {
    pub phi: &'a SuperOperator,
    pub kind: GfKind,
    pub target: usize,
    pub source: usize,
    pub avoid: usize,
}

impl<'a> GeneratingFunction<'a> {
    pub fn first_visit(phi: &'a SuperOperator, target: usize, source: usize) -> Result<Self> {
        Self::build(phi, GfKind::FirstVisit, target, source, target)
    }

    pub fn mean_hitting(phi: &'a SuperOperator, target: usize, source: usize) -> Result<Self> {
        Self::build(phi, GfKind::MeanHitting, target, source, target)
    }

    /// First-visit function read at `target` while avoiding `source`:
    /// `ℙ_target Φ̂(𝕀 − zℚ_source Φ̂)⁻¹ℙ_source`.
    pub fn taboo(phi: &'a SuperOperator, target: usize, source: usize) -> Result<Self> {
        Self::build(phi, GfKind::FirstVisit, target, source, source)
    }

    fn build(
        phi: &'a SuperOperator,
        kind: GfKind,
        target: usize,
        source: usize,
        avoid: usize,
    ) -> Result<Self> {
        phi.layout.check_site(target)?;
        phi.layout.check_site(source)?;
        Ok(GeneratingFunction {
            phi,
            kind,
            target,
            source,
            avoid,
        })
    }

    fn monitored(&self) -> ComplexMatrix {
        self.phi.layout.complement(self.avoid) * &self.phi.matrix
    }

    /// Block `(target, source)` of the generating function at `z`.
    pub fn evaluate(&self, z: C64) -> Result<ComplexMatrix> {
        let monitored = self.monitored();
        self.evaluate_with(&monitored, z)
    }

    fn evaluate_with(&self, monitored: &ComplexMatrix, z: C64) -> Result<ComplexMatrix> {
        let layout = &self.phi.layout;
        let n = layout.total_dim();
        let resolvent_arg = linalg::identity(n) - monitored * z;
        let src = layout.slot(self.source);
        let dst = layout.slot(self.target);
        let inj = layout.projector(self.source).columns(src.offset, src.len()).into_owned();
        let mut x = linalg::solve_matrix(&resolvent_arg, &inj)?;
        if self.kind == GfKind::MeanHitting {
            x = linalg::solve_matrix(&resolvent_arg, &x)?;
        }
        let out = &self.phi.matrix * x;
        Ok(out.rows(dst.offset, dst.len()).into_owned())
    }

    /// Partial sum `Σ_{r<terms} ℙΦ̂(zℚΦ̂)^r ℙ` (first-visit) or its
    /// `(r+1)`-weighted version (mean hitting).
    pub fn partial_sum(&self, z: C64, terms: usize) -> ComplexMatrix {
        let layout = &self.phi.layout;
        let src = layout.slot(self.source);
        let dst = layout.slot(self.target);
        let monitored = self.monitored() * z;
        let mut x = layout.projector(self.source).columns(src.offset, src.len()).into_owned();
        let mut total = ComplexMatrix::zeros(dst.len(), src.len());
        for r in 0..terms {
            let step = (&self.phi.matrix * &x).rows(dst.offset, dst.len()).into_owned();
            let weight = match self.kind {
                GfKind::FirstVisit => 1.0,
                GfKind::MeanHitting => (r + 1) as f64,
            };
            total += step.scale(weight);
            x = &monitored * x;
        }
        total
    }

    /// `z → 1` limit.
    pub fn limit(&self) -> Result<Limit> {
        let monitored = self.monitored();
        let radius = linalg::spectral_radius(&monitored)?;
        if radius < DIRECT_RADIUS {
            if let Ok(value) = self.evaluate_with(&monitored, ONE) {
                return Ok(Limit::Finite {
                    value,
                    method: LimitMethod::Direct,
                });
            }
        }
        self.abel_limit(&monitored)
    }

    fn abel_limit(&self, monitored: &ComplexMatrix) -> Result<Limit> {
        let mut iterates = Vec::new();
        for m in ABEL_ORDERS {
            let z = C64::new(1.0 - 2f64.powi(-m), 0.0);
            let value = match self.evaluate_with(monitored, z) {
                Ok(v) => v,
                Err(OqwError::Singular { .. }) => return Ok(Limit::Divergent),
                Err(e) => return Err(e),
            };
            if linalg::max_abs(&value) > DIVERGENCE_BOUND {
                return Ok(Limit::Divergent);
            }
            iterates.push(value);
        }
        let len = iterates.len();
        let last = &iterates[len - 1];
        let prev = &iterates[len - 2];
        let before = &iterates[len - 3];
        let d_last = linalg::max_abs(&(last - prev));
        let d_prev = linalg::max_abs(&(prev - before));
        // a convergent Abel sequence has differences shrinking like 2^{-m}
        if d_last > 1e-6 * linalg::max_abs(last).max(1.0) && d_last > 0.75 * d_prev {
            return Ok(Limit::Divergent);
        }
        Ok(Limit::Finite {
            value: last.scale(2.0) - prev,
            method: LimitMethod::Abel,
        })
    }
}

pub fn first_visit_gf(phi: &SuperOperator, i: usize, j: usize, z: C64) -> Result<ComplexMatrix> {
    GeneratingFunction::first_visit(phi, i, j)?.evaluate(z)
}

pub fn mean_hitting_gf(phi: &SuperOperator, i: usize, j: usize, z: C64) -> Result<ComplexMatrix> {
    GeneratingFunction::mean_hitting(phi, i, j)?.evaluate(z)
}

/// `ℙ_j Φ̂(𝕀 − zℚ_x Φ̂)⁻¹ℙ_x`: first arrival at `j` before returning to `x`.
pub fn taboo_gf(phi: &SuperOperator, j: usize, x: usize, z: C64) -> Result<ComplexMatrix> {
    GeneratingFunction::taboo(phi, j, x)?.evaluate(z)
}

pub fn first_visit_limit(phi: &SuperOperator, i: usize, j: usize) -> Result<Limit> {
    GeneratingFunction::first_visit(phi, i, j)?.limit()
}

pub fn mean_hitting_limit(phi: &SuperOperator, i: usize, j: usize) -> Result<Limit> {
    GeneratingFunction::mean_hitting(phi, i, j)?.limit()
}

pub fn taboo_limit(phi: &SuperOperator, j: usize, x: usize) -> Result<Limit> {
    GeneratingFunction::taboo(phi, j, x)?.limit()
}

/// `Tr(X vec ρ)` for a block `X` mapping slot `j` to slot `i`.
pub fn block_trace(block: &ComplexMatrix, rho: &ComplexMatrix) -> Result<C64> {
    let x = linalg::vec(rho)?;
    if block.ncols() != x.len() {
        return Err(OqwError::DimensionMismatch(format!(
            "block with {} columns applied to a state of length {}",
            block.ncols(),
            x.len()
        )));
    }
    linalg::trace_v(&(block * x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingProbability {
    pub value: f64,
    pub method: LimitMethod,
    pub warning: Option<String>,
}

/// A mean time that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HittingTime {
    Finite(f64),
    Infinite,
}

impl HittingTime {
    pub fn value(&self) -> f64 {
        match self {
            HittingTime::Finite(v) => *v,
            HittingTime::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, HittingTime::Finite(_))
    }
}

impl std::fmt::Display for HittingTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HittingTime::Finite(v) => write!(f, "{}", v),
            HittingTime::Infinite => write!(f, "inf"),
        }
    }
}

fn site_dim(phi: &SuperOperator, site: usize) -> Result<usize> {
    phi.layout.check_site(site)?;
    Ok(phi.layout.slot(site).dim)
}

fn probability_from(limit: &Limit, rho: &ComplexMatrix) -> Result<HittingProbability> {
    match limit {
        Limit::Finite { value, method } => {
            let p = block_trace(value, rho)?.re;
            let warning = (*method == LimitMethod::Abel)
                .then(|| "resolvent singular at z = 1; value is an Abel limit".to_string());
            Ok(HittingProbability {
                value: p,
                method: *method,
                warning,
            })
        }
        Limit::Divergent => Err(OqwError::Divergent(
            "first-visit generating function".into(),
        )),
    }
}

/// Probability of ever reaching `i` from `ρ` at `j` (1 when `i = j`).
pub fn hitting_probability(
    phi: &SuperOperator,
    i: usize,
    j: usize,
    rho: &ComplexMatrix,
) -> Result<HittingProbability> {
    site_dim(phi, i)?;
    check_site_density(rho, site_dim(phi, j)?)?;
    if i == j {
        return Ok(HittingProbability {
            value: 1.0,
            method: LimitMethod::Direct,
            warning: None,
        });
    }
    probability_from(&first_visit_limit(phi, i, j)?, rho)
}

/// Probability of ever returning to `i` from `ρ` at `i`.
pub fn return_probability(
    phi: &SuperOperator,
    i: usize,
    rho: &ComplexMatrix,
) -> Result<HittingProbability> {
    check_site_density(rho, site_dim(phi, i)?)?;
    probability_from(&first_visit_limit(phi, i, i)?, rho)
}

fn time_from(
    probability: &Limit,
    mean: &Limit,
    rho: &ComplexMatrix,
) -> Result<HittingTime> {
    let h = match probability {
        Limit::Finite { value, .. } => block_trace(value, rho)?.re,
        Limit::Divergent => return Ok(HittingTime::Infinite),
    };
    if h < 1.0 - HIT_TOL {
        return Ok(HittingTime::Infinite);
    }
    match mean {
        Limit::Finite { value, .. } => Ok(HittingTime::Finite(block_trace(value, rho)?.re)),
        Limit::Divergent => Ok(HittingTime::Infinite),
    }
}

/// Mean number of steps to reach `i` from `ρ` at `j`; 0 when `i = j`,
/// infinite when `i` is missed with positive probability.
pub fn mean_hitting_time(
    phi: &SuperOperator,
    i: usize,
    j: usize,
    rho: &ComplexMatrix,
) -> Result<HittingTime> {
    site_dim(phi, i)?;
    check_site_density(rho, site_dim(phi, j)?)?;
    if i == j {
        return Ok(HittingTime::Finite(0.0));
    }
    time_from(
        &first_visit_limit(phi, i, j)?,
        &mean_hitting_limit(phi, i, j)?,
        rho,
    )
}

/// `lim_{z→1} ℙ_iΦ̂(𝕀 − zℚ_iΦ̂)⁻²ℙ_i`.
pub fn return_time_operator(phi: &SuperOperator, i: usize) -> Result<Limit> {
    mean_hitting_limit(phi, i, i)
}

pub fn mean_return_time(phi: &SuperOperator, i: usize, rho: &ComplexMatrix) -> Result<HittingTime> {
    check_site_density(rho, site_dim(phi, i)?)?;
    time_from(
        &first_visit_limit(phi, i, i)?,
        &return_time_operator(phi, i)?,
        rho,
    )
}

/// Block grids `Ĥ`, `K̂`, `D̂ = diag(k̂_ii)` and `N̂ = K̂ − D̂`.
#[derive(Debug, Clone)]
pub struct HittingOperators {
    pub layout: SiteLayout,
    pub h: ComplexMatrix,
    pub k: ComplexMatrix,
    pub d: ComplexMatrix,
    pub n: ComplexMatrix,
    /// Pairs `(i, j)` whose mean hitting limit diverged; their `K̂` blocks are zero.
    pub divergent: Vec<(usize, usize)>,
    /// Pairs whose limit needed the Abel fallback.
    pub abel: Vec<(usize, usize)>,
}

impl HittingOperators {
    pub fn h_block(&self, i: usize, j: usize) -> ComplexMatrix {
        crate::walk::extract_block(&self.h, &self.layout, i, j)
    }

    pub fn k_block(&self, i: usize, j: usize) -> ComplexMatrix {
        crate::walk::extract_block(&self.k, &self.layout, i, j)
    }

    pub fn d_block(&self, i: usize) -> ComplexMatrix {
        crate::walk::extract_block(&self.d, &self.layout, i, i)
    }

    pub fn n_block(&self, i: usize, j: usize) -> ComplexMatrix {
        crate::walk::extract_block(&self.n, &self.layout, i, j)
    }

    pub fn all_finite(&self) -> bool {
        self.divergent.is_empty()
    }
}

pub fn assemble_hitting_operators(phi: &SuperOperator) -> Result<HittingOperators> {
    let layout = phi.layout.clone();
    let k = layout.sites();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let limits: Vec<(usize, usize, Limit, Limit)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            Ok((
                i,
                j,
                first_visit_limit(phi, i, j)?,
                mean_hitting_limit(phi, i, j)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = layout.total_dim();
    let mut h = ComplexMatrix::zeros(n, n);
    let mut kk = ComplexMatrix::zeros(n, n);
    let mut divergent = Vec::new();
    let mut abel = Vec::new();
    for (i, j, f, g) in limits {
        let a = layout.slot(i);
        let b = layout.slot(j);
        if let Some(v) = f.value() {
            h.view_mut((a.offset, b.offset), (a.len(), b.len())).copy_from(v);
        }
        match &g {
            Limit::Finite { value, method } => {
                kk.view_mut((a.offset, b.offset), (a.len(), b.len()))
                    .copy_from(value);
                if *method == LimitMethod::Abel || f.method() == Some(LimitMethod::Abel) {
                    abel.push((i, j));
                }
            }
            Limit::Divergent => divergent.push((i, j)),
        }
        if !f.is_finite() && !divergent.contains(&(i, j)) {
            divergent.push((i, j));
        }
    }
    let mut d = ComplexMatrix::zeros(n, n);
    for i in 0..k {
        let a = layout.slot(i);
        let block = kk.view((a.offset, a.offset), (a.len(), a.len())).into_owned();
        d.view_mut((a.offset, a.offset), (a.len(), a.len()))
            .copy_from(&block);
    }
    let nn = &kk - &d;
    Ok(HittingOperators {
        layout,
        h,
        k: kk,
        d,
        n: nn,
        divergent,
        abel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningCheck {
    pub lhs: HittingTime,
    pub rhs: HittingTime,
    /// `None` when either side is infinite.
    pub residual: Option<f64>,
    pub skipped: bool,
    pub pruned_branches: usize,
}

/// First-step decomposition `k_ij(ρ) = 1 + Σ_{l≠i} p_l k_il(ρ′_l)`.
/// For `i = j` the left side is the mean return time.
pub fn conditioning_check(
    model: &OqwModel,
    i: usize,
    j: usize,
    rho: &ComplexMatrix,
) -> Result<ConditioningCheck> {
    let phi = model.superoperator();
    let lhs = if i == j {
        mean_return_time(&phi, i, rho)?
    } else {
        mean_hitting_time(&phi, i, j, rho)?
    };
    let mut total = 1.0;
    let mut finite = true;
    let mut pruned = 0;
    for (l, b) in model.column(j) {
        if l == i {
            continue;
        }
        let next = b * rho * b.adjoint();
        let p = next.trace().re;
        if p < BRANCH_FLOOR {
            pruned += 1;
            continue;
        }
        match mean_hitting_time(&phi, i, l, &next.unscale(p))? {
            HittingTime::Finite(v) => total += p * v,
            HittingTime::Infinite => finite = false,
        }
    }
    let rhs = if finite {
        HittingTime::Finite(total)
    } else {
        HittingTime::Infinite
    };
    let (residual, skipped) = match (lhs, rhs) {
        (HittingTime::Finite(a), HittingTime::Finite(b)) => (Some((a - b).abs()), false),
        _ => (None, true),
    };
    Ok(ConditioningCheck {
        lhs,
        rhs,
        residual,
        skipped,
        pruned_branches: pruned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::{matrix_unit, max_abs, real, real_matrix};
    use crate::walk::{embed_classical, StochasticConvention};

    fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
        a.shape() == b.shape() && max_abs(&(a - b)) <= tol
    }

    #[test]
    fn one_step_block_at_zero() {
        let model = catalog::two_site_nonunital();
        let phi = model.superoperator();
        let f = first_visit_gf(&phi, 1, 0, real(0.0)).unwrap();
        assert!(close(&f, &phi.block(1, 0), 1e-15));
    }

    #[test]
    fn resolvent_matches_neumann_series() {
        let phi = catalog::three_site_unital().superoperator();
        for (i, j) in [(0, 1), (2, 0), (1, 1)] {
            for z in [0.3, 0.9] {
                for gf in [
                    GeneratingFunction::first_visit(&phi, i, j).unwrap(),
                    GeneratingFunction::mean_hitting(&phi, i, j).unwrap(),
                ] {
                    let exact = gf.evaluate(real(z)).unwrap();
                    let series = gf.partial_sum(real(z), 600);
                    assert!(close(&exact, &series, 1e-8));
                }
            }
        }
    }

    #[test]
    fn flip_chain_return_time_is_two() {
        let model = catalog::flip_chain();
        let phi = model.superoperator();
        let one = linalg::identity(1);
        assert_eq!(hitting_probability(&phi, 1, 0, &one).unwrap().value, 1.0);
        assert!((mean_return_time(&phi, 0, &one).unwrap().value() - 2.0).abs() < 1e-12);
        let k = return_time_operator(&phi, 1).unwrap();
        assert!((k.value().unwrap()[(0, 0)].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_walk_never_arrives() {
        let phi = OqwModel::identity_walk(2, 2).superoperator();
        let rho = matrix_unit(2, 0, 0);
        let h = hitting_probability(&phi, 1, 0, &rho).unwrap();
        assert!(h.value.abs() < 1e-12);
        assert_eq!(mean_hitting_time(&phi, 1, 0, &rho).unwrap(), HittingTime::Infinite);
        assert_eq!(mean_hitting_time(&phi, 0, 0, &rho).unwrap(), HittingTime::Finite(0.0));
        let check = conditioning_check(&OqwModel::identity_walk(2, 2), 1, 0, &rho).unwrap();
        assert!(check.skipped);
    }

    #[test]
    fn classical_three_cycle_hits_everything() {
        let p = real_matrix(&[&[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5], &[0.5, 0.5, 0.0]]);
        let phi = embed_classical(&p, StochasticConvention::Column)
            .unwrap()
            .superoperator();
        let ops = assemble_hitting_operators(&phi).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ops.h[(i, j)].re - 1.0).abs() < 1e-12);
            }
            // return time 3, hitting time 2 from a neighbour
            assert!((ops.d[(i, i)].re - 3.0).abs() < 1e-12);
        }
        assert!((ops.n[(0, 1)].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_densities() {
        let phi = catalog::two_site_nonunital().superoperator();
        let not_psd = real_matrix(&[&[1.5, 0.0], &[0.0, -0.5]]);
        assert!(hitting_probability(&phi, 1, 0, &not_psd).is_err());
        assert!(hitting_probability(&phi, 1, 0, &linalg::identity(3)).is_err());
        assert!(first_visit_gf(&phi, 2, 0, real(0.5)).is_err());
    }

    #[test]
    fn abel_limit_matches_direct_limit() {
        let phi = catalog::two_site_nonunital().superoperator();
        let gf = GeneratingFunction::mean_hitting(&phi, 1, 0).unwrap();
        let direct = gf.limit().unwrap();
        assert_eq!(direct.method(), Some(LimitMethod::Direct));
        let abel = gf.abel_limit(&gf.monitored()).unwrap();
        assert!(close(direct.value().unwrap(), abel.value().unwrap(), 1e-8));
    }

    #[test]
    fn absorbing_chain_is_transient_from_start() {
        // site 0 stays with probability 0.4, else falls into absorbing site 1
        let p = real_matrix(&[&[0.4, 0.0], &[0.6, 1.0]]);
        let phi = embed_classical(&p, StochasticConvention::Column)
            .unwrap()
            .superoperator();
        let one = linalg::identity(1);
        let back = return_probability(&phi, 0, &one).unwrap();
        assert!((back.value - 0.4).abs() < 1e-9);
        assert_eq!(mean_return_time(&phi, 0, &one).unwrap(), HittingTime::Infinite);
        let into = mean_hitting_time(&phi, 1, 0, &one).unwrap();
        assert!((into.value() - 1.0 / 0.6).abs() < 1e-9);
        assert_eq!(mean_hitting_time(&phi, 0, 1, &one).unwrap(), HittingTime::Infinite);
    }

    #[test]
    fn conditioning_on_first_step() {
        let model = catalog::two_site_nonunital();
        for rho in [matrix_unit(2, 0, 0), real_matrix(&[&[0.5, 0.25], &[0.25, 0.5]])] {
            for (i, j) in [(1, 0), (0, 1), (0, 0), (1, 1)] {
                let check = conditioning_check(&model, i, j, &rho).unwrap();
                assert!(check.residual.unwrap() <= 1e-8, "{:?}", check);
            }
        }
        let rho = linalg::complex_matrix(&[&[(0.5, 0.0), (0.0, 0.3)], &[(0.0, -0.3), (0.5, 0.0)]]);
        let check = conditioning_check(&catalog::three_site_unital(), 2, 0, &rho).unwrap();
        assert!(check.residual.unwrap() <= 1e-8);
    }
}
