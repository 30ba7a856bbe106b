//! Stationary states, limit channel, fundamental matrix and the identities
//! tying them to mean hitting times; recurrence diagnostics.

use num_complex::Complex64 as C64;

use crate::error::{OqwError, Result};
use crate::linalg::{self, ComplexMatrix, VecState, ONE};
use crate::monitoring::{self, HittingOperators, Limit};
use crate::walk::{check_site_density, BlockDensity, SuperOperator};

/// Spectral gap below which a channel is not considered primitive.
pub const GAP_TOL: f64 = 1e-8;
/// Relative singular-value cutoff for fixed-point spaces.
const NULL_TOL: f64 = 1e-9;
/// Eigenvalues this close to 1 are counted as the unit eigenvalue.
const UNIT_CLUSTER: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct StationaryState {
    pub density: BlockDensity,
    /// Fixed vector normalized to unit total trace.
    pub vector: VecState,
    /// `max |Φ̂ v − v|`.
    pub residual: f64,
    pub unique: bool,
    pub eigenspace_dim: usize,
}

/// Unique normalized fixed point of `Φ̂`.
pub fn stationary_state(phi: &SuperOperator) -> Result<StationaryState> {
    let n = phi.dim();
    let kernel = linalg::null_space(&(&phi.matrix - linalg::identity(n)), NULL_TOL);
    match kernel.ncols() {
        0 => Err(OqwError::InvalidModel("eigenvalue 1 is absent".into())),
        1 => {
            let v: VecState = kernel.column(0).into_owned();
            normalized_state(phi, v, 1)
        }
        d => Err(OqwError::DegenerateFixedPoint { dimension: d }),
    }
}

fn normalized_state(phi: &SuperOperator, v: VecState, eigenspace_dim: usize) -> Result<StationaryState> {
    let total = phi.layout.total_trace(&v);
    if total.norm() < 1e-12 {
        return Err(OqwError::InvalidModel("fixed point has zero trace".into()));
    }
    let vector = v.map(|x| x / total);
    let density = BlockDensity::from_vec(&phi.layout, &vector)?;
    let vector = density.to_vec(&phi.layout)?;
    let residual = linalg::max_abs_vec(&(phi.apply(&vector) - &vector));
    Ok(StationaryState {
        density,
        vector,
        residual,
        unique: eigenspace_dim == 1,
        eigenspace_dim,
    })
}

#[derive(Debug, Clone)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<C64>,
    /// Eigenvalues within 1e−6 of 1.
    pub unit_multiplicity: usize,
    /// Eigenvalues with modulus above `1 − GAP_TOL`.
    pub peripheral: usize,
    /// `1 − max |λ|` over the eigenvalues outside the unit cluster.
    pub gap: f64,
    pub primitive: bool,
}

pub fn spectral_summary(phi: &SuperOperator) -> Result<SpectralSummary> {
    let eigenvalues = linalg::eigenvalues(&phi.matrix)?;
    let unit_multiplicity = eigenvalues
        .iter()
        .filter(|z| (*z - ONE).norm() < UNIT_CLUSTER)
        .count();
    let peripheral = eigenvalues
        .iter()
        .filter(|z| z.norm() > 1.0 - GAP_TOL)
        .count();
    let second = eigenvalues
        .iter()
        .filter(|z| (*z - ONE).norm() >= UNIT_CLUSTER)
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let gap = 1.0 - second;
    Ok(SpectralSummary {
        primitive: unit_multiplicity == 1 && peripheral == 1 && gap > GAP_TOL,
        eigenvalues,
        unit_multiplicity,
        peripheral,
        gap,
    })
}

#[derive(Debug, Clone)]
pub struct LimitChannel {
    pub omega: SuperOperator,
    /// `max |Φ̂^{2^m} − Ω̂|` at the last squaring.
    pub power_check: f64,
    pub squarings: u32,
    /// Power iteration agrees within 1e−9.
    pub validated: bool,
}

/// Spectral projection onto the fixed space of a primitive channel.
pub fn limit_channel(phi: &SuperOperator) -> Result<LimitChannel> {
    let summary = spectral_summary(phi)?;
    if !summary.primitive {
        return Err(OqwError::NotPrimitive(format!(
            "{} eigenvalue(s) near 1, {} on the unit circle, gap {:.3e}",
            summary.unit_multiplicity, summary.peripheral, summary.gap
        )));
    }
    let n = phi.dim();
    let shifted = &phi.matrix - linalg::identity(n);
    let right = linalg::null_space(&shifted, NULL_TOL);
    let left = linalg::null_space(&shifted.transpose(), NULL_TOL);
    if right.ncols() != 1 || left.ncols() != 1 {
        return Err(OqwError::NotPrimitive(format!(
            "fixed space of dimension {}",
            right.ncols().max(left.ncols())
        )));
    }
    let v = right.column(0);
    let u = left.column(0);
    let pairing: C64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let omega = (v * u.transpose()).map(|x| x / pairing);

    let mut power = phi.matrix.clone();
    let mut squarings = 0;
    while squarings < 64 {
        let next = &power * &power;
        let step = linalg::max_abs(&(&next - &power));
        power = next;
        squarings += 1;
        if step < 1e-14 {
            break;
        }
    }
    let power_check = linalg::max_abs(&(&power - &omega));
    Ok(LimitChannel {
        omega: phi.with_matrix(omega),
        power_check,
        squarings,
        validated: power_check <= 1e-9,
    })
}

#[derive(Debug, Clone)]
pub struct FundamentalMatrix {
    pub z: SuperOperator,
    pub omega: SuperOperator,
    pub spectral_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaOneResiduals {
    /// `‖ẐΩ̂ − Ω̂‖`
    pub z_omega: f64,
    /// `‖Ω̂Ẑ − Ω̂‖`
    pub omega_z: f64,
    /// `‖Ẑ(𝕀 − Φ̂) − (𝕀 − Ω̂)‖`
    pub z_left: f64,
    /// `‖(𝕀 − Φ̂)Ẑ − (𝕀 − Ω̂)‖`
    pub z_right: f64,
}

impl LemmaOneResiduals {
    pub fn max(&self) -> f64 {
        self.z_omega.max(self.omega_z).max(self.z_left).max(self.z_right)
    }
}

/// `Ẑ = (𝕀 − Φ̂ + Ω̂)⁻¹`.
pub fn fundamental_matrix(phi: &SuperOperator, omega: &SuperOperator) -> Result<FundamentalMatrix> {
    let n = phi.dim();
    let arg = linalg::identity(n) - &phi.matrix + &omega.matrix;
    let z = linalg::invert(&arg).map_err(|e| match e {
        OqwError::Singular { condition } => OqwError::NotPrimitive(format!(
            "I - Phi + Omega is singular (condition {:.3e})",
            condition
        )),
        other => other,
    })?;
    let summary = spectral_summary(phi)?;
    Ok(FundamentalMatrix {
        z: phi.with_matrix(z),
        omega: omega.clone(),
        spectral_gap: summary.gap,
    })
}

impl FundamentalMatrix {
    pub fn lemma_one(&self, phi: &SuperOperator) -> LemmaOneResiduals {
        let n = phi.dim();
        let id = linalg::identity(n);
        let z = &self.z.matrix;
        let w = &self.omega.matrix;
        let gen = &id - &phi.matrix;
        let target = &id - w;
        LemmaOneResiduals {
            z_omega: linalg::max_abs(&(z * w - w)),
            omega_z: linalg::max_abs(&(w * z - w)),
            z_left: linalg::max_abs(&(z * &gen - &target)),
            z_right: linalg::max_abs(&(&gen * z - &target)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormulaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl FormulaCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        FormulaCheck {
            lhs,
            rhs,
            residual: (lhs - rhs).abs(),
        }
    }
}

/// Row functional `X ↦ Tr(devec(block · X))` of a block whose rows form one slot.
pub fn trace_functional(block: &ComplexMatrix) -> VecState {
    let d = (block.nrows() as f64).sqrt().round() as usize;
    let mut row = VecState::zeros(block.ncols());
    for a in 0..d {
        row += block.row(a * d + a).transpose();
    }
    row
}

fn identity_functional(d: usize) -> VecState {
    linalg::vec(&linalg::identity(d)).expect("identity is square")
}

/// Everything needed for the hitting-time identities of a primitive walk.
#[derive(Debug, Clone)]
pub struct ErgodicAnalysis {
    pub phi: SuperOperator,
    pub stationary: StationaryState,
    pub limit: LimitChannel,
    pub fundamental: FundamentalMatrix,
    pub hitting: HittingOperators,
}

impl ErgodicAnalysis {
    pub fn new(phi: &SuperOperator) -> Result<Self> {
        if phi.layout.internal_dim().is_none() || !phi.layout.is_block_layout() {
            return Err(OqwError::Unsupported(
                "hitting identities need equal-dimension block sites".into(),
            ));
        }
        let limit = limit_channel(phi)?;
        let stationary = stationary_state(phi)?;
        let fundamental = fundamental_matrix(phi, &limit.omega)?;
        let hitting = monitoring::assemble_hitting_operators(phi)?;
        if !hitting.all_finite() {
            return Err(OqwError::Divergent(format!(
                "mean hitting operators diverge for pairs {:?}",
                hitting.divergent
            )));
        }
        Ok(ErgodicAnalysis {
            phi: phi.clone(),
            stationary,
            limit,
            fundamental,
            hitting,
        })
    }

    fn block(&self, m: &ComplexMatrix, i: usize, j: usize) -> ComplexMatrix {
        crate::walk::extract_block(m, &self.phi.layout, i, j)
    }

    fn dim(&self) -> usize {
        self.phi.layout.slot(0).dim
    }

    /// `D̂Ẑ`.
    pub fn dz(&self) -> ComplexMatrix {
        &self.hitting.d * &self.fundamental.z.matrix
    }

    /// `L̂ = K̂ − (K̂ − D̂)Φ̂`.
    pub fn l_hat(&self) -> ComplexMatrix {
        &self.hitting.k - &self.hitting.n * &self.phi.matrix
    }

    /// Mean hitting time of `i` from `ρ` at `j`, both as `Tr(N̂_ij ρ)` and via `D̂Ẑ`.
    pub fn mhtf1(&self, rho: &ComplexMatrix, i: usize, j: usize) -> Result<FormulaCheck> {
        self.phi.layout.check_site(i)?;
        self.phi.layout.check_site(j)?;
        check_site_density(rho, self.dim())?;
        let x = linalg::vec(rho)?;
        let lhs = linalg::trace_v(&(self.hitting.n_block(i, j) * &x))?.re;
        let dz = self.dz();
        let diff = self.block(&dz, i, i) - self.block(&dz, i, j);
        let rhs = linalg::trace_v(&(diff * &x))?.re;
        Ok(FormulaCheck::new(lhs, rhs))
    }

    /// Mean hitting time of `j` from the stationary state: `Tr(Σ_i k̂_ji π_i)`
    /// against `Tr((D̂Ẑ)_jj Σ_i ĥ_ji π_i)`.
    pub fn mhtf2(&self, j: usize) -> Result<FormulaCheck> {
        self.phi.layout.check_site(j)?;
        let layout = &self.phi.layout;
        let d2 = layout.slot(j).len();
        let mut n_pi = VecState::zeros(d2);
        let mut f_pi = VecState::zeros(d2);
        for i in 0..layout.sites() {
            let pi_i = layout.slot_vector(i, &self.stationary.vector);
            n_pi += self.hitting.k_block(j, i) * &pi_i;
            f_pi += self.hitting.h_block(j, i) * &pi_i;
        }
        let lhs = linalg::trace_v(&n_pi)?.re;
        let dz = self.dz();
        let rhs = linalg::trace_v(&(self.block(&dz, j, j) * f_pi))?.re;
        Ok(FormulaCheck::new(lhs, rhs))
    }

    /// `max_{i,j} ‖t·L̂_ij − t‖` as functionals.
    pub fn lemma_two_residual(&self) -> f64 {
        let l = self.l_hat();
        let t = identity_functional(self.dim());
        let k = self.phi.sites();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let row = trace_functional(&self.block(&l, i, j));
                worst = worst.max(linalg::max_abs_vec(&(row - &t)));
            }
        }
        worst
    }

    /// `max_{i,j}` of the functional residual of
    /// `N̂_ij = (D̂Ẑ)_ii − (D̂Ẑ)_ij + (L̂Ẑ)_ij − (L̂Ẑ)_ii`.
    pub fn lemma_three_residual(&self) -> f64 {
        let dz = self.dz();
        let lz = self.l_hat() * &self.fundamental.z.matrix;
        let k = self.phi.sites();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let rhs = self.block(&dz, i, i) - self.block(&dz, i, j) + self.block(&lz, i, j)
                    - self.block(&lz, i, i);
                let diff = self.hitting.n_block(i, j) - rhs;
                worst = worst.max(linalg::max_abs_vec(&trace_functional(&diff)));
            }
        }
        worst
    }
}

pub fn mhtf1_verify(phi: &SuperOperator, rho: &ComplexMatrix, i: usize, j: usize) -> Result<FormulaCheck> {
    ErgodicAnalysis::new(phi)?.mhtf1(rho, i, j)
}

pub fn mhtf2_verify(phi: &SuperOperator, j: usize) -> Result<FormulaCheck> {
    ErgodicAnalysis::new(phi)?.mhtf2(j)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacCheck {
    pub expected_return: f64,
    pub inverse_trace: f64,
    pub residual: f64,
}

/// Mean return time to `x` from the normalized stationary component against `1/Tr π_x`.
pub fn kac_verify(phi: &SuperOperator, x: usize) -> Result<KacCheck> {
    phi.layout.check_site(x)?;
    let verdict = irreducibility_check(phi)?;
    if !verdict.irreducible {
        return Err(OqwError::Reducible(verdict.describe()));
    }
    let pi = stationary_state(phi)?;
    let component = pi.density.component(x);
    let weight = component.trace().re;
    let k = match monitoring::return_time_operator(phi, x)? {
        Limit::Finite { value, .. } => value,
        Limit::Divergent => return Err(OqwError::Divergent("return time operator".into())),
    };
    let expected_return = monitoring::block_trace(&k, &component.unscale(weight))?.re;
    let inverse_trace = 1.0 / weight;
    Ok(KacCheck {
        expected_return,
        inverse_trace,
        residual: (expected_return - inverse_trace).abs(),
    })
}

#[derive(Debug, Clone)]
pub struct FirstReturnStationary {
    pub state: StationaryState,
    /// Fixed point of the first-return map at the base site, unit trace.
    pub return_fixed_point: ComplexMatrix,
    /// Unnormalized components `F_{j←x}(1) ρ_x` (with `ρ_x` of unit trace).
    pub components: Vec<ComplexMatrix>,
}

/// Builds the stationary state from the first-return fixed point at `x`.
pub fn stationary_via_first_return(phi: &SuperOperator, x: usize) -> Result<FirstReturnStationary> {
    phi.layout.check_site(x)?;
    let layout = &phi.layout;
    let first_return = match monitoring::first_visit_limit(phi, x, x)? {
        Limit::Finite { value, .. } => value,
        Limit::Divergent => return Err(OqwError::Divergent("first return map".into())),
    };
    let eig = linalg::eig(&first_return)?;
    let near_one: Vec<usize> = (0..eig.values.len())
        .filter(|&k| (eig.values[k] - ONE).norm() < UNIT_CLUSTER)
        .collect();
    let index = match near_one.as_slice() {
        [] => {
            return Err(OqwError::Reducible(
                "first return map has no fixed point; base site is not recurrent".into(),
            ))
        }
        [k] => *k,
        many => {
            return Err(OqwError::DegenerateFixedPoint {
                dimension: many.len(),
            })
        }
    };
    let v: VecState = eig.vectors.column(index).into_owned();
    let raw = linalg::devec(&v)?;
    let tr = raw.trace();
    if tr.norm() < 1e-12 {
        return Err(OqwError::InvalidModel("first return fixed point is traceless".into()));
    }
    let fixed = linalg::hermitian_part(&raw.map(|z| z / tr));
    if !linalg::is_psd(&fixed) {
        return Err(OqwError::InvalidModel(
            "first return fixed point is not positive semidefinite".into(),
        ));
    }
    let base = linalg::vec(&fixed)?;
    let mut components = Vec::with_capacity(layout.sites());
    for j in 0..layout.sites() {
        if j == x {
            components.push(fixed.clone());
            continue;
        }
        let taboo = match monitoring::taboo_limit(phi, j, x)? {
            Limit::Finite { value, .. } => value,
            Limit::Divergent => return Err(OqwError::Divergent("taboo map".into())),
        };
        components.push(linalg::hermitian_part(&linalg::devec(&(taboo * &base))?));
    }
    let mut vector = VecState::zeros(layout.total_dim());
    for (j, comp) in components.iter().enumerate() {
        vector += layout.embed(j, comp)?;
    }
    let state = normalized_state(phi, vector, 1)?;
    Ok(FirstReturnStationary {
        state,
        return_fixed_point: fixed,
        components,
    })
}

#[derive(Debug, Clone)]
pub struct IrreducibilityVerdict {
    pub irreducible: bool,
    pub unique_fixed_point: bool,
    pub faithful: bool,
    /// `min_i λ_min(π_i)/Tr(π_i)` (0 if some component vanishes).
    pub min_relative_eigenvalue: f64,
    /// `accessibility[i][j]`: the block from `j` to `i` is nonzero.
    pub accessibility: Vec<Vec<bool>>,
    pub strongly_connected: bool,
}

impl IrreducibilityVerdict {
    pub fn describe(&self) -> String {
        format!(
            "unique fixed point: {}, faithful: {} (min relative eigenvalue {:.3e}), strongly connected: {}",
            self.unique_fixed_point, self.faithful, self.min_relative_eigenvalue, self.strongly_connected
        )
    }
}

fn strongly_connected(adj: &[Vec<bool>]) -> bool {
    let k = adj.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..k {
                let edge = if forward { adj[v][u] } else { adj[u][v] };
                if edge && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    k == 0 || (reach(true) && reach(false))
}

/// Unique fixed point with every site component positive definite.
pub fn irreducibility_check(phi: &SuperOperator) -> Result<IrreducibilityVerdict> {
    let k = phi.sites();
    let accessibility: Vec<Vec<bool>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| linalg::max_abs(&phi.block(i, j)) > 1e-14)
                .collect()
        })
        .collect();
    let connected = strongly_connected(&accessibility);
    let (unique, faithful, min_rel) = match stationary_state(phi) {
        Ok(pi) => {
            let mut min_rel = f64::INFINITY;
            for comp in pi.density.components() {
                let tr = comp.trace().re;
                let rel = if tr > 0.0 {
                    linalg::min_hermitian_eigenvalue(comp) / tr
                } else {
                    0.0
                };
                min_rel = min_rel.min(rel);
            }
            (true, min_rel > 1e-10, min_rel)
        }
        Err(OqwError::DegenerateFixedPoint { .. }) => (false, false, 0.0),
        Err(e) => return Err(e),
    };
    Ok(IrreducibilityVerdict {
        irreducible: unique && faithful,
        unique_fixed_point: unique,
        faithful,
        min_relative_eigenvalue: min_rel,
        accessibility,
        strongly_connected: connected,
    })
}

#[derive(Debug, Clone)]
pub struct SiteRecurrence {
    pub site: usize,
    /// Smallest return probability over a spanning set of densities.
    pub min_return_probability: f64,
    pub monitored_recurrent: bool,
    /// `Σ_{n≤horizon} p_ii(n)` for each density of the spanning set.
    pub sjk_partial_sums: Vec<f64>,
    /// Smallest late-time growth rate of the partial sums.
    pub sjk_slope: f64,
    pub sjk_divergent: bool,
    /// `monitored_recurrent == sjk_divergent`.
    pub consistent: bool,
}

#[derive(Debug, Clone)]
pub struct RecurrenceReport {
    pub horizon: usize,
    pub sites: Vec<SiteRecurrence>,
    pub irreducible: bool,
    /// For irreducible walks all sites share the monitored verdict.
    pub class_consistent: bool,
}

/// Partial sums are called divergent when their late slope exceeds this.
pub const SLOPE_TOL: f64 = 1e-6;
/// Return probability counted as 1.
pub const RETURN_TOL: f64 = 1e-6;

/// Late-time slope of partial sums: growth over the second half per step.
pub fn late_slope(sums: &[f64]) -> f64 {
    let h = sums.len();
    if h < 2 {
        return 0.0;
    }
    let mid = h / 2;
    (sums[h - 1] - sums[mid - 1]) / (h - mid) as f64
}

pub fn recurrence_report(phi: &SuperOperator, horizon: usize) -> Result<RecurrenceReport> {
    let layout = &phi.layout;
    let mut sites = Vec::with_capacity(layout.sites());
    for i in 0..layout.sites() {
        let slot = layout.slot(i);
        let basis = linalg::density_basis(slot.dim);
        let back = monitoring::first_visit_limit(phi, i, i)?;
        let min_return_probability = match back.value() {
            Some(f) => basis
                .iter()
                .map(|rho| monitoring::block_trace(f, rho).map(|z| z.re))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min),
            None => f64::INFINITY,
        };
        let mut states = ComplexMatrix::zeros(layout.total_dim(), basis.len());
        for (b, rho) in basis.iter().enumerate() {
            states.set_column(b, &layout.embed(i, rho)?);
        }
        let t = layout.site_trace_row(i);
        let mut running = vec![0.0; basis.len()];
        let mut sums: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); basis.len()];
        for _ in 0..horizon {
            states = &phi.matrix * states;
            for b in 0..basis.len() {
                running[b] += linalg::apply_functional(&t, &states.column(b).into_owned()).re;
                sums[b].push(running[b]);
            }
        }
        let sjk_slope = sums
            .iter()
            .map(|s| late_slope(s))
            .fold(f64::INFINITY, f64::min);
        let monitored_recurrent = min_return_probability >= 1.0 - RETURN_TOL;
        let sjk_divergent = sjk_slope > SLOPE_TOL;
        sites.push(SiteRecurrence {
            site: i,
            min_return_probability,
            monitored_recurrent,
            sjk_partial_sums: running,
            sjk_slope,
            sjk_divergent,
            consistent: monitored_recurrent == sjk_divergent,
        });
    }
    let irreducible = irreducibility_check(phi)?.irreducible;
    let class_consistent = !irreducible
        || sites
            .iter()
            .all(|s| s.monitored_recurrent == sites[0].monitored_recurrent);
    Ok(RecurrenceReport {
        horizon,
        sites,
        irreducible,
        class_consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::{max_abs, real_matrix};
    use crate::walk::{embed_classical, OqwModel, StochasticConvention};

    fn cycle3() -> SuperOperator {
        let p = real_matrix(&[&[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5], &[0.5, 0.5, 0.0]]);
        embed_classical(&p, StochasticConvention::Column)
            .unwrap()
            .superoperator()
    }

    #[test]
    fn unital_walk_has_maximally_mixed_stationary_state() {
        let pi = stationary_state(&catalog::three_site_unital().superoperator()).unwrap();
        for i in 0..3 {
            assert!(max_abs(&(pi.density.component(i) - linalg::identity(2).scale(1.0 / 6.0))) < 1e-12);
        }
        assert!(pi.residual < 1e-12);
        assert!(pi.unique);
    }

    #[test]
    fn identity_walk_is_rejected() {
        let phi = OqwModel::identity_walk(2, 2).superoperator();
        assert!(matches!(limit_channel(&phi), Err(OqwError::NotPrimitive(_))));
        assert!(matches!(
            stationary_state(&phi),
            Err(OqwError::DegenerateFixedPoint { dimension: 8 })
        ));
        assert!(!irreducibility_check(&phi).unwrap().irreducible);
    }

    #[test]
    fn classical_limit_is_rank_one() {
        let phi = cycle3();
        let lc = limit_channel(&phi).unwrap();
        assert!(lc.validated);
        for i in 0..3 {
            for j in 0..3 {
                assert!((lc.omega.matrix[(i, j)].re - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classical_fundamental_matrix_matches_series() {
        let phi = cycle3();
        let lc = limit_channel(&phi).unwrap();
        let fm = fundamental_matrix(&phi, &lc.omega).unwrap();
        let mut series = lc.omega.matrix.clone();
        let mut power = linalg::identity(3);
        for _ in 0..200 {
            series += &power - &lc.omega.matrix;
            power = &power * &phi.matrix;
        }
        let err = max_abs(&(fm.z.matrix - series));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn converged_channel_has_identity_fundamental_matrix() {
        // every column is the same distribution: Φ̂ = Ω̂
        let p = real_matrix(&[&[0.2, 0.2, 0.2], &[0.3, 0.3, 0.3], &[0.5, 0.5, 0.5]]);
        let phi = embed_classical(&p, StochasticConvention::Column)
            .unwrap()
            .superoperator();
        let lc = limit_channel(&phi).unwrap();
        let fm = fundamental_matrix(&phi, &lc.omega).unwrap();
        assert!(max_abs(&(fm.z.matrix - linalg::identity(3))) < 1e-12);
    }

    #[test]
    fn lemma_one_on_unital_walk() {
        let phi = catalog::three_site_unital().superoperator();
        let lc = limit_channel(&phi).unwrap();
        let fm = fundamental_matrix(&phi, &lc.omega).unwrap();
        assert!(fm.lemma_one(&phi).max() < 1e-10);
    }

    #[test]
    fn flip_chain_kac() {
        let phi = catalog::flip_chain().superoperator();
        let kac = kac_verify(&phi, 0).unwrap();
        assert!((kac.expected_return - 2.0).abs() < 1e-12);
        assert!(kac.residual < 1e-12);
    }

    #[test]
    fn unital_kac_is_three() {
        let phi = catalog::three_site_unital().superoperator();
        for x in 0..3 {
            let kac = kac_verify(&phi, x).unwrap();
            assert!((kac.inverse_trace - 3.0).abs() < 1e-10);
            assert!(kac.residual < 1e-8);
        }
    }

    #[test]
    fn first_return_reconstruction_every_base() {
        for model in [catalog::two_site_nonunital(), catalog::three_site_unital()] {
            let phi = model.superoperator();
            let pi = stationary_state(&phi).unwrap();
            for x in 0..model.sites() {
                let rebuilt = stationary_via_first_return(&phi, x).unwrap();
                assert!(linalg::max_abs_vec(&(&rebuilt.state.vector - &pi.vector)) < 1e-8);
            }
        }
    }

    #[test]
    fn recurrence_of_transient_and_recurrent_sites() {
        let p = real_matrix(&[&[0.4, 0.0], &[0.6, 1.0]]);
        let phi = embed_classical(&p, StochasticConvention::Column)
            .unwrap()
            .superoperator();
        let report = recurrence_report(&phi, 400).unwrap();
        assert!(!report.sites[0].monitored_recurrent);
        assert!(!report.sites[0].sjk_divergent);
        assert!(report.sites[1].monitored_recurrent);
        assert!(report.sites[1].sjk_divergent);
        assert!(report.sites.iter().all(|s| s.consistent));

        let id = recurrence_report(&OqwModel::identity_walk(2, 2).superoperator(), 50).unwrap();
        assert!(id.sites.iter().all(|s| s.monitored_recurrent && s.sjk_divergent));
    }
}
