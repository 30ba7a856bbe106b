//! Continuous-time generators: construction, local rates, Poisson-monitored
//! hitting, the continuous fundamental matrix, Kac on `M_n` and skeleton
//! recurrence.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::ergodic::{self, RecurrenceReport, SLOPE_TOL};
use crate::error::{OqwError, Result};
use crate::linalg::{self, c, real, ComplexMatrix, VecState, ONE};
use crate::quadrature;
use crate::walk::{check_site_density, extract_block, validate_qmatrix, BlockDensity, OqwModel, SiteLayout, SuperOperator};

/// Simple undirected graph on `0..vertices`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a >= vertices || b >= vertices {
                return Err(OqwError::InvalidModel(format!(
                    "edge ({a}, {b}) out of range for {vertices} vertices"
                )));
            }
            if a == b {
                return Err(OqwError::InvalidModel(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if list.contains(&e) {
                return Err(OqwError::InvalidModel(format!("repeated edge ({a}, {b})")));
            }
            list.push(e);
        }
        list.sort_unstable();
        Ok(Graph {
            vertices,
            edges: list,
        })
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(OqwError::InvalidModel(format!("a cycle needs 3 vertices, got {n}")));
        }
        Graph::new(n, (0..n).map(|k| (k, (k + 1) % n)))
    }

    pub fn path(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(OqwError::InvalidModel(format!("a path needs 2 vertices, got {n}")));
        }
        Graph::new(n, (0..n - 1).map(|k| (k, k + 1)))
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == v || *b == v).count()
    }

    pub fn laplacian(&self) -> ComplexMatrix {
        let n = self.vertices;
        ComplexMatrix::from_fn(n, n, |j, k| {
            if j == k {
                real(self.degree(j) as f64)
            } else if self.adjacent(j, k) {
                real(-1.0)
            } else {
                linalg::ZERO
            }
        })
    }

    /// `M_jk = 1/deg(k)` on edges: column `k` is the uniform law over the
    /// neighbours of `k`.
    pub fn transition_matrix(&self) -> ComplexMatrix {
        let n = self.vertices;
        ComplexMatrix::from_fn(n, n, |j, k| {
            if j != k && self.adjacent(j, k) {
                real(1.0 / self.degree(k) as f64)
            } else {
                linalg::ZERO
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum GeneratorKind {
    PhiMinusIdentity(OqwModel),
    GraphInduced(Graph),
    ClassicalQ(ComplexMatrix),
    Raw,
}

/// A Lindblad generator in block form, `𝓛̂`, with its site layout.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub kind: GeneratorKind,
    pub generator: SuperOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCondition {
    pub to: usize,
    pub from: usize,
    pub condition: f64,
    pub invertible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletenessReport {
    pub complete: bool,
    pub blocks: Vec<BlockCondition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub site: usize,
    /// `q_{i;ρ} = −Tr^v(𝓛̂_ii vec ρ)`.
    pub rate: f64,
    /// Rate of jumping to each site (zero at `site`).
    pub off_rates: Vec<f64>,
    /// `(1 − p_ii(h))/h` at `h = 1e−6`.
    pub small_t_rate: f64,
    /// `p_ji(h)/h` at `h = 1e−6`.
    pub small_t_off_rates: Vec<f64>,
    /// `rate − Σ off_rates`; zero for trace-preserving generators.
    pub leak: f64,
}

impl RateProfile {
    /// Jump probabilities `q_ij/q_i`.
    pub fn jump_probabilities(&self) -> Vec<f64> {
        self.off_rates
            .iter()
            .map(|q| if self.rate > 0.0 { q / self.rate } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldingPoint {
    pub t: f64,
    /// Extrapolated `lim_n Tr^v([ℙ_i e^{(t/n)𝓛̂} ℙ_i]ⁿ vec ρ)`.
    pub survival: f64,
    pub exponential: f64,
    pub deviation: f64,
    /// `|s(2¹⁰) − s(2⁹)|`.
    pub refinement_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldingTimeCheck {
    pub rate: f64,
    pub points: Vec<HoldingPoint>,
    pub max_deviation: f64,
}

pub const RATE_STEP: f64 = 1e-6;

impl GeneratorModel {
    /// `𝓛 = Φ − 𝕀` for a trace-preserving walk.
    pub fn phi_minus_identity(model: &OqwModel) -> Result<Self> {
        let report = model.validate();
        if !report.trace_preserving {
            return Err(OqwError::InvalidModel(format!(
                "walk is not trace preserving (defect {:.3e})",
                report.max_defect
            )));
        }
        let phi = model.superoperator();
        let n = phi.dim();
        let generator = phi.with_matrix(&phi.matrix - linalg::identity(n));
        Ok(GeneratorModel {
            kind: GeneratorKind::PhiMinusIdentity(model.clone()),
            generator,
        })
    }

    /// `𝓛(ρ) = i[ρ, L] + Σ_jk (B_jk ρ B_jk* − ½{B_jk* B_jk, ρ})` with
    /// `B_jk = √M_jk |j⟩⟨k|`, on `M_n` with vertices as diagonal units.
    pub fn graph_induced(graph: &Graph) -> Result<Self> {
        let n = graph.vertices();
        if n == 0 {
            return Err(OqwError::InvalidModel("graph has no vertices".into()));
        }
        let lap = graph.laplacian();
        let m = graph.transition_matrix();
        let id = linalg::identity(n);
        let mut gen = (linalg::kron(&id, &lap.transpose()) - linalg::kron(&lap, &id)) * c(0.0, 1.0);
        for j in 0..n {
            for k in 0..n {
                let w = m[(j, k)].re;
                if w <= 0.0 {
                    continue;
                }
                // B ⊗ B̄ = M_jk E_jk ⊗ E_jk and B*B = M_jk E_kk, kept free of square roots
                let jump = linalg::matrix_unit(n, j, k);
                let bb = linalg::matrix_unit(n, k, k);
                gen += linalg::kron(&jump, &jump).scale(w)
                    - (linalg::kron(&bb, &id) + linalg::kron(&id, &bb)).scale(0.5 * w);
            }
        }
        Ok(GeneratorModel {
            kind: GeneratorKind::GraphInduced(graph.clone()),
            generator: SuperOperator::new(gen, SiteLayout::diagonal(n))?,
        })
    }

    /// Column-convention Q-matrix acting on one-dimensional sites.
    pub fn classical_q(q: &ComplexMatrix) -> Result<Self> {
        let report = validate_qmatrix(q)?;
        if let Some(worst) = report.worst {
            return Err(OqwError::InvalidModel(format!(
                "not a Q-matrix: {:?} at ({}, {}) = {}",
                worst.kind, worst.row, worst.col, worst.value
            )));
        }
        let k = q.nrows();
        Ok(GeneratorModel {
            kind: GeneratorKind::ClassicalQ(q.clone()),
            generator: SuperOperator::new(q.clone(), SiteLayout::uniform(k, 1))?,
        })
    }

    pub fn raw(matrix: ComplexMatrix, layout: SiteLayout) -> Result<Self> {
        Ok(GeneratorModel {
            kind: GeneratorKind::Raw,
            generator: SuperOperator::new(matrix, layout)?,
        })
    }

    pub fn layout(&self) -> &SiteLayout {
        &self.generator.layout
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.generator.matrix
    }

    pub fn sites(&self) -> usize {
        self.generator.sites()
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    /// `max_x |Tr(𝓛̂ x)|` over unit coordinate vectors.
    pub fn trace_annihilation_defect(&self) -> f64 {
        let t = self.layout().trace_row();
        let row = self.matrix().transpose() * t;
        linalg::max_abs_vec(&row)
    }

    /// `e^{t𝓛̂}`.
    pub fn propagator(&self, t: f64) -> Result<ComplexMatrix> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(OqwError::InvalidModel(format!("time {t} must be finite and nonnegative")));
        }
        linalg::expm(&self.matrix().scale(t))
    }

    pub fn evolve(&self, t: f64, x: &VecState) -> Result<VecState> {
        Ok(self.propagator(t)? * x)
    }

    /// `Λ_t ρ` for walk-structured generators.
    pub fn semigroup_apply(&self, t: f64, rho: &BlockDensity) -> Result<BlockDensity> {
        let layout = self.layout();
        if !layout.is_block_layout() {
            return Err(OqwError::Unsupported(
                "block densities need a generator whose sites tile the space".into(),
            ));
        }
        let y = self.evolve(t, &rho.to_vec(layout)?)?;
        let components = (0..layout.sites())
            .map(|i| linalg::hermitian_part(&layout.extract(i, &y)))
            .collect();
        Ok(BlockDensity::from_components_unchecked(components))
    }

    fn site_state(&self, site: usize, rho: &ComplexMatrix) -> Result<VecState> {
        let layout = self.layout();
        layout.check_site(site)?;
        check_site_density(rho, layout.slot(site).dim)?;
        layout.embed(site, rho)
    }

    /// `p_{ij;ρ}(t) = Tr^v(ℙ_i Λ_t ℙ_j vec ρ)`: from `ρ` at `j` to site `i`.
    pub fn transition_prob(&self, i: usize, j: usize, rho: &ComplexMatrix, t: f64) -> Result<f64> {
        self.layout().check_site(i)?;
        let y = self.evolve(t, &self.site_state(j, rho)?)?;
        Ok(self.layout().site_trace(i, &y).re)
    }

    pub fn rates(&self, i: usize, rho: &ComplexMatrix) -> Result<RateProfile> {
        let x = self.site_state(i, rho)?;
        let layout = self.layout();
        let y = self.generator.apply(&x);
        let k = layout.sites();
        let rate = -layout.site_trace(i, &y).re;
        let off_rates: Vec<f64> = (0..k)
            .map(|j| if j == i { 0.0 } else { layout.site_trace(j, &y).re })
            .collect();
        let moved = self.propagator(RATE_STEP)? * &x;
        let small_t_rate = (1.0 - layout.site_trace(i, &moved).re) / RATE_STEP;
        let small_t_off_rates = (0..k)
            .map(|j| if j == i { 0.0 } else { layout.site_trace(j, &moved).re / RATE_STEP })
            .collect();
        let leak = rate - off_rates.iter().sum::<f64>();
        Ok(RateProfile {
            site: i,
            rate,
            off_rates,
            small_t_rate,
            small_t_off_rates,
            leak,
        })
    }

    /// Per-block invertibility of `𝓛̂_ij`.
    pub fn completeness_check(&self) -> CompletenessReport {
        let k = self.sites();
        let mut blocks = Vec::with_capacity(k * k);
        for to in 0..k {
            for from in 0..k {
                let b = self.generator.block(to, from);
                let condition = if linalg::max_abs(&b) == 0.0 {
                    f64::INFINITY
                } else {
                    linalg::condition_number(&b)
                };
                blocks.push(BlockCondition {
                    to,
                    from,
                    condition,
                    invertible: condition < linalg::SINGULAR_CONDITION,
                });
            }
        }
        CompletenessReport {
            complete: blocks.iter().all(|b| b.invertible),
            blocks,
        }
    }

    /// Survival at site `i` from the product of monitored short-time steps,
    /// `n = 2⁸, 2⁹, 2¹⁰`, Richardson-extrapolated in `1/n`.
    pub fn holding_time_check(&self, i: usize, rho: &ComplexMatrix, times: &[f64]) -> Result<HoldingTimeCheck> {
        let x = self.site_state(i, rho)?;
        let layout = self.layout();
        let xi = layout.slot_vector(i, &x);
        let rate = self.rates(i, rho)?.rate;
        let mut points = Vec::with_capacity(times.len());
        for &t in times {
            let survival_at = |power: u32| -> Result<f64> {
                let n = 1u64 << power;
                let step = self.propagator(t / n as f64)?;
                let mut b = extract_block(&step, layout, i, i);
                for _ in 0..power {
                    b = &b * &b;
                }
                let y = b * &xi;
                let d = layout.slot(i).dim;
                Ok((0..d).map(|a| y[a * d + a].re).sum())
            };
            let s9 = survival_at(9)?;
            let s10 = survival_at(10)?;
            let survival = 2.0 * s10 - s9;
            let exponential = (-rate * t).exp();
            points.push(HoldingPoint {
                t,
                survival,
                exponential,
                deviation: (survival - exponential).abs(),
                refinement_gap: (s10 - s9).abs(),
            });
        }
        let max_deviation = points.iter().map(|p| p.deviation).fold(0.0, f64::max);
        Ok(HoldingTimeCheck {
            rate,
            points,
            max_deviation,
        })
    }

    /// `e^{δ𝓛̂}` as a discrete-time operator with the same layout.
    pub fn skeleton(&self, delta: f64) -> Result<SuperOperator> {
        if !(delta > 0.0) {
            return Err(OqwError::InvalidModel(format!("skeleton step {delta} must be positive")));
        }
        Ok(self.generator.with_matrix(self.propagator(delta)?))
    }

    /// Kernel vector of `𝓛̂` with unit total trace.
    pub fn stationary_vector(&self) -> Result<VecState> {
        let kernel = linalg::null_space(self.matrix(), NULL_TOL);
        match kernel.ncols() {
            0 => Err(OqwError::InvalidModel("generator has no stationary state".into())),
            1 => {
                let v: VecState = kernel.column(0).into_owned();
                let total = self.layout().trace_row().dot(&v);
                if total.norm() < 1e-12 {
                    return Err(OqwError::InvalidModel("stationary vector is traceless".into()));
                }
                Ok(v.map(|z| z / total))
            }
            d => Err(OqwError::DegenerateFixedPoint { dimension: d }),
        }
    }
}

const NULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    /// `det M_λ`.
    pub determinant: C64,
    pub m_condition: f64,
    /// Spectrum of `ℚ_f M_λ⁻¹` (empty when `M_λ` is singular).
    pub eigenvalues: Vec<C64>,
    pub spectral_radius: f64,
    pub m_invertible: bool,
    pub contractive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonHitting {
    pub probability: f64,
    pub mean_time: f64,
}

/// Hitting of `target` when site occupation is measured at Poisson(λ) times.
#[derive(Debug, Clone)]
pub struct PoissonHittingProblem<'a> {
    pub generator: &'a GeneratorModel,
    pub target: usize,
    pub rate: f64,
    /// `M_λ = 𝕀 − 𝓛̂/λ`.
    pub m: ComplexMatrix,
    /// `N_λ = M_λ − ℚ_f`.
    pub n: ComplexMatrix,
    q: ComplexMatrix,
}

impl<'a> PoissonHittingProblem<'a> {
    pub fn new(generator: &'a GeneratorModel, target: usize, rate: f64) -> Result<Self> {
        generator.layout().check_site(target)?;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(OqwError::InvalidModel(format!("measurement rate {rate} must be positive")));
        }
        let d = generator.dim();
        let m = linalg::identity(d) - generator.matrix().unscale(rate);
        let q = generator.layout().complement(target);
        let n = &m - &q;
        Ok(PoissonHittingProblem {
            generator,
            target,
            rate,
            m,
            n,
            q,
        })
    }

    pub fn hypothesis_report(&self) -> Result<HypothesisReport> {
        let determinant = linalg::determinant(&self.m)?;
        let m_condition = linalg::condition_number(&self.m);
        let m_invertible = m_condition < linalg::SINGULAR_CONDITION;
        if !m_invertible {
            return Ok(HypothesisReport {
                determinant,
                m_condition,
                eigenvalues: Vec::new(),
                spectral_radius: f64::INFINITY,
                m_invertible,
                contractive: false,
            });
        }
        let m_inv = linalg::invert(&self.m)?;
        let eigenvalues = linalg::eigenvalues(&(&self.q * m_inv))?;
        let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Ok(HypothesisReport {
            determinant,
            m_condition,
            eigenvalues,
            spectral_radius,
            m_invertible,
            contractive: spectral_radius < 1.0,
        })
    }

    fn verify(&self) -> Result<()> {
        let report = self.hypothesis_report()?;
        if !report.m_invertible {
            let smallest = linalg::eigenvalues(&self.m)?
                .into_iter()
                .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap_or(linalg::ZERO);
            return Err(OqwError::HypothesisViolation {
                detail: format!("M_lambda is singular at lambda = {}", self.rate),
                eigenvalue: smallest,
            });
        }
        if !report.contractive {
            let worst = report
                .eigenvalues
                .iter()
                .copied()
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap_or(linalg::ZERO);
            return Err(OqwError::HypothesisViolation {
                detail: format!(
                    "Q_f M_lambda^-1 has spectral radius {} >= 1 at lambda = {}",
                    report.spectral_radius, self.rate
                ),
                eigenvalue: worst,
            });
        }
        Ok(())
    }

    /// `p_h = Tr^v(ℙ_f N_λ⁻¹ ρ)`, `τ_h = λ⁻¹ Tr^v(ℙ_f N_λ⁻² ρ)` for `ρ` at `start ≠ target`.
    pub fn solve(&self, start: usize, rho: &ComplexMatrix) -> Result<PoissonHitting> {
        if start == self.target {
            return Err(OqwError::Unsupported("start site equals the target".into()));
        }
        let x = self.generator.site_state(start, rho)?;
        self.verify()?;
        // λN_λ has entries of order one even for large λ
        let scaled = self.n.scale(self.rate);
        let once = linalg::solve_linear(&scaled, &x)?;
        let twice = linalg::solve_linear(&scaled, &once)?;
        let layout = self.generator.layout();
        let probability = self.rate * layout.site_trace(self.target, &once).re;
        let mean_time = self.rate * layout.site_trace(self.target, &twice).re;
        Ok(PoissonHitting {
            probability,
            mean_time,
        })
    }
}

pub fn poisson_hitting(
    g: &GeneratorModel,
    target: usize,
    start: usize,
    rho: &ComplexMatrix,
    rate: f64,
) -> Result<PoissonHitting> {
    PoissonHittingProblem::new(g, target, rate)?.solve(start, rho)
}

/// Rates used for the `λ → ∞` fit and its residual check.
pub const FIT_RATES: [f64; 2] = [1e5, 1e6];
pub const CHECK_RATE: f64 = 1e4;
pub const FIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CtHittingLimit {
    /// `a` in `τ_h(λ) ≈ a + b/λ`.
    pub value: f64,
    pub slope: f64,
    /// Fit residual at `λ = 10⁴`.
    pub residual: f64,
    /// `(λ, τ_h(λ))` for `λ = 10³ … 10⁶`.
    pub ladder: Vec<(f64, f64)>,
}

/// `lim_{λ→∞} τ_h(λ)`: the mean hitting time without measurement back-action.
pub fn mean_hitting_ct(g: &GeneratorModel, target: usize, start: usize, rho: &ComplexMatrix) -> Result<CtHittingLimit> {
    let rates = [1e3, CHECK_RATE, FIT_RATES[0], FIT_RATES[1]];
    let ladder = rates
        .par_iter()
        .map(|&l| poisson_hitting(g, target, start, rho, l).map(|h| (l, h.mean_time)))
        .collect::<Result<Vec<_>>>()?;
    let (t5, t6) = (ladder[2].1, ladder[3].1);
    let slope = (t5 - t6) / (1.0 / FIT_RATES[0] - 1.0 / FIT_RATES[1]);
    let value = t6 - slope / FIT_RATES[1];
    let residual = (ladder[1].1 - (value + slope / CHECK_RATE)).abs();
    if residual > FIT_TOL * value.abs().max(1.0) {
        return Err(OqwError::NonConvergent(format!(
            "a + b/lambda fit misses lambda = 1e4 by {residual:.3e}"
        )));
    }
    Ok(CtHittingLimit {
        value,
        slope,
        residual,
        ladder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtLemmaOne {
    /// `‖ẐΩ̂‖`
    pub z_omega: f64,
    /// `‖Ω̂Ẑ‖`
    pub omega_z: f64,
    /// `‖−Ẑ𝓛̂ − (𝕀 − Ω̂)‖`
    pub z_left: f64,
    /// `‖−𝓛̂Ẑ − (𝕀 − Ω̂)‖`
    pub z_right: f64,
}

impl CtLemmaOne {
    pub fn max(&self) -> f64 {
        self.z_omega.max(self.omega_z).max(self.z_left).max(self.z_right)
    }
}

#[derive(Debug, Clone)]
pub struct CtFundamentalMatrix {
    /// `∫₀^T (Λ_t − Ω̂) dt`.
    pub z: SuperOperator,
    pub omega: SuperOperator,
    /// Smallest decay rate `−Re μ` over the nonzero spectrum of `𝓛̂`.
    pub gap: f64,
    pub horizon: f64,
    pub quadrature_error: f64,
    pub panels: usize,
    /// `‖Ẑ − ((Ω̂ − 𝓛̂)⁻¹ − Ω̂)‖`.
    pub closed_form_residual: f64,
}

impl CtFundamentalMatrix {
    pub fn lemma_one(&self, g: &GeneratorModel) -> CtLemmaOne {
        let id = linalg::identity(g.dim());
        let z = &self.z.matrix;
        let w = &self.omega.matrix;
        let l = g.matrix();
        let target = &id - w;
        CtLemmaOne {
            z_omega: linalg::max_abs(&(z * w)),
            omega_z: linalg::max_abs(&(w * z)),
            z_left: linalg::max_abs(&(-(z * l) - &target)),
            z_right: linalg::max_abs(&(-(l * z) - &target)),
        }
    }
}

pub const CT_QUAD_TOL: f64 = 1e-10;
pub const CT_MAX_HORIZON: f64 = 1e4;

/// Spectral projection onto `ker 𝓛̂` and the decay gap of the rest.
pub fn ct_limit(g: &GeneratorModel) -> Result<(SuperOperator, f64)> {
    let eig = linalg::eigenvalues(g.matrix())?;
    let zeros = eig.iter().filter(|z| z.norm() < 1e-8).count();
    if zeros != 1 {
        return Err(OqwError::NotPrimitive(format!("kernel of the generator has dimension {zeros}")));
    }
    let gap = eig
        .iter()
        .filter(|z| z.norm() >= 1e-8)
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    if !(gap > 1e-8) {
        return Err(OqwError::NotPrimitive(format!("zero spectral gap ({gap:.3e})")));
    }
    let l = g.matrix();
    let right = linalg::null_space(l, NULL_TOL);
    let left = linalg::null_space(&l.transpose(), NULL_TOL);
    if right.ncols() != 1 || left.ncols() != 1 {
        return Err(OqwError::NotPrimitive("kernel of the generator is not one-dimensional".into()));
    }
    let v = right.column(0);
    let u = left.column(0);
    let pairing: C64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let omega = (v * u.transpose()).map(|x| x / pairing);
    Ok((g.generator.with_matrix(omega), gap))
}

/// `Ẑ_ij = ∫₀^∞ ℙ_i(Λ_t − Ω̂)ℙ_j dt` by adaptive quadrature on `[0, T]`,
/// `T = min(50/gap, 10⁴)`.
pub fn ct_fundamental_matrix(g: &GeneratorModel) -> Result<CtFundamentalMatrix> {
    let (omega, gap) = ct_limit(g)?;
    let horizon = (50.0 / gap).min(CT_MAX_HORIZON);
    let l = g.matrix().clone();
    let w = omega.matrix.clone();
    let panels = ((horizon * gap).ceil() as usize).clamp(4, 256);
    let quad = quadrature::integrate(
        |t| Ok(linalg::expm(&l.scale(t))? - &w),
        0.0,
        horizon,
        CT_QUAD_TOL,
        panels,
    )?;
    let closed = linalg::invert(&(&w - &l))? - &w;
    let closed_form_residual = linalg::max_abs(&(&quad.value - closed));
    Ok(CtFundamentalMatrix {
        z: g.generator.with_matrix(quad.value),
        omega,
        gap,
        horizon,
        quadrature_error: quad.error,
        panels: quad.panels,
        closed_form_residual,
    })
}

#[derive(Debug, Clone)]
pub struct ResolventIntegrals {
    /// `A = ∫ Λ_t λe^{−λt} dt`.
    pub a: ComplexMatrix,
    /// `B = ∫ tΛ_t λe^{−λt} dt`.
    pub b: ComplexMatrix,
    /// `‖M_λ A − 𝕀‖`
    pub a_residual: f64,
    /// `‖M_λ B − A/λ‖`
    pub b_residual: f64,
    pub quadrature_error: f64,
}

/// The two exponential-weighted semigroup integrals behind the Poisson formulas.
pub fn resolvent_integrals(g: &GeneratorModel, rate: f64) -> Result<ResolventIntegrals> {
    if !(rate > 0.0) {
        return Err(OqwError::InvalidModel(format!("rate {rate} must be positive")));
    }
    let l = g.matrix().clone();
    let horizon = 80.0 / rate;
    let weight = |t: f64| rate * (-rate * t).exp();
    let a = quadrature::integrate(
        |t| Ok(linalg::expm(&l.scale(t))?.scale(weight(t))),
        0.0,
        horizon,
        CT_QUAD_TOL,
        16,
    )?;
    let b = quadrature::integrate(
        |t| Ok(linalg::expm(&l.scale(t))?.scale(t * weight(t))),
        0.0,
        horizon,
        CT_QUAD_TOL,
        16,
    )?;
    let m = linalg::identity(g.dim()) - l.unscale(rate);
    let a_residual = linalg::max_abs(&(&m * &a.value - linalg::identity(g.dim())));
    let b_residual = linalg::max_abs(&(&m * &b.value - a.value.unscale(rate)));
    Ok(ResolventIntegrals {
        a: a.value,
        b: b.value,
        a_residual,
        b_residual,
        quadrature_error: a.error + b.error,
    })
}

/// Linear functionals giving continuous-time mean hitting and return times
/// under continuous site monitoring (`λ → ∞`).
#[derive(Debug, Clone)]
pub struct CtHittingFunctionals {
    pub layout: SiteLayout,
    /// `hitting[i][j]`: functional on slot `j` giving `E_{j;ρ}(D^i)`; zero for `j = i`.
    pub hitting: Vec<Vec<VecState>>,
    /// `returns[i]`: functional on slot `i` giving `E_{i;ρ}(D^{i+})`.
    pub returns: Vec<VecState>,
    /// `weighted[i] = −returns[i]·𝓛̂_ii`: return time weighted by the exit rate.
    pub weighted: Vec<VecState>,
}

fn slot_trace_functional(layout: &SiteLayout, site: usize) -> VecState {
    let d = layout.slot(site).dim;
    linalg::vec(&linalg::identity(d)).expect("identity is square")
}

/// Solves `w 𝓛̂_QQ = −t_Q` (time to reach `i`) and the first-exit
/// decomposition of the return time, for every site `i`.
pub fn ct_hitting_functionals(g: &GeneratorModel) -> Result<CtHittingFunctionals> {
    let layout = g.layout().clone();
    if !layout.is_block_layout() {
        return Err(OqwError::Unsupported(
            "hitting functionals need sites that tile the space".into(),
        ));
    }
    let k = layout.sites();
    let l = g.matrix();
    let mut hitting = Vec::with_capacity(k);
    let mut returns = Vec::with_capacity(k);
    let mut weighted = Vec::with_capacity(k);
    for i in 0..k {
        let own = layout.slot(i).range();
        let others: Vec<usize> = (0..layout.total_dim()).filter(|r| !own.contains(r)).collect();
        let lqq = l.select_rows(&others).select_columns(&others);
        let mut t_q = VecState::zeros(others.len());
        for (pos, &r) in others.iter().enumerate() {
            t_q[pos] = layout.trace_row()[r];
        }
        let w = linalg::solve_linear(&lqq.transpose(), &(-t_q))?;
        let mut full = VecState::zeros(layout.total_dim());
        for (pos, &r) in others.iter().enumerate() {
            full[r] = w[pos];
        }
        let rows: Vec<VecState> = (0..k)
            .map(|j| {
                if j == i {
                    VecState::zeros(layout.slot(j).len())
                } else {
                    layout.slot_vector(j, &full)
                }
            })
            .collect();
        let own_cols: Vec<usize> = own.clone().collect();
        let lqi = l.select_rows(&others).select_columns(&own_cols);
        let lii = extract_block(l, &layout, i, i);
        let t_i = slot_trace_functional(&layout, i);
        // D̃_i = t_i + w 𝓛̂_Qi and returns d_i solve d_i 𝓛̂_ii = −D̃_i
        let tilde = &t_i + lqi.transpose() * &w;
        let d = linalg::solve_linear(&lii.transpose(), &(-&tilde))?;
        hitting.push(rows);
        returns.push(d);
        weighted.push(tilde);
    }
    Ok(CtHittingFunctionals {
        layout,
        hitting,
        returns,
        weighted,
    })
}

impl CtHittingFunctionals {
    pub fn hitting_time(&self, target: usize, start: usize, rho: &ComplexMatrix) -> Result<f64> {
        if target == start {
            return Ok(0.0);
        }
        Ok(linalg::apply_functional(&self.hitting[target][start], &linalg::vec(rho)?).re)
    }

    pub fn return_time(&self, site: usize, rho: &ComplexMatrix) -> Result<f64> {
        Ok(linalg::apply_functional(&self.returns[site], &linalg::vec(rho)?).re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtMhtfCheck {
    /// `lim_{λ→∞} τ_h`: mean time to hit `i` from `ρ` at `j`.
    pub lhs: f64,
    /// Same quantity from the hitting functional.
    pub functional_lhs: f64,
    /// `Tr([(D̃Ẑ)_ii − (D̃Ẑ)_ij]ρ)` with the rate-weighted return functional.
    pub rhs: f64,
    pub residual: f64,
    /// The same right side with the plain return-time functional.
    pub literal_rhs: f64,
    pub literal_residual: f64,
}

/// Continuous-time mean hitting time formula for walk-structured generators.
pub fn mhtf_ct_verify(g: &GeneratorModel, rho: &ComplexMatrix, i: usize, j: usize) -> Result<CtMhtfCheck> {
    let layout = g.layout();
    layout.check_site(i)?;
    layout.check_site(j)?;
    check_site_density(rho, layout.slot(j).dim)?;
    if layout.slot(i).dim != layout.slot(j).dim {
        return Err(OqwError::Unsupported("sites of different internal dimension".into()));
    }
    if i == j {
        return Ok(CtMhtfCheck {
            lhs: 0.0,
            functional_lhs: 0.0,
            rhs: 0.0,
            residual: 0.0,
            literal_rhs: 0.0,
            literal_residual: 0.0,
        });
    }
    let fm = ct_fundamental_matrix(g)?;
    let functionals = ct_hitting_functionals(g)?;
    let lhs = mean_hitting_ct(g, i, j, rho)?.value;
    let functional_lhs = functionals.hitting_time(i, j, rho)?;
    let x = linalg::vec(rho)?;
    let zii = fm.z.block(i, i);
    let zij = fm.z.block(i, j);
    let side = |f: &VecState| -> f64 {
        let a = zii.transpose() * f;
        let b = zij.transpose() * f;
        (linalg::apply_functional(&a, &x) - linalg::apply_functional(&b, &x)).re
    };
    let rhs = side(&functionals.weighted[i]);
    let literal_rhs = side(&functionals.returns[i]);
    Ok(CtMhtfCheck {
        lhs,
        functional_lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        literal_rhs,
        literal_residual: (lhs - literal_rhs).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtKacSite {
    pub site: usize,
    pub rate: f64,
    /// Stationary weight of the monitored jump process.
    pub stationary: f64,
    /// `(1/q_i)(1 + Σ_{j≠i} q_ji E_j(D^i))`.
    pub return_time: f64,
    /// `1/(q_i π_i)`.
    pub kac_value: f64,
    pub residual: f64,
    /// `E_j(D^i)` from the jump rates, indexed by `j` (zero at `i`).
    pub hitting_times: Vec<f64>,
    /// Same times from the `λ → ∞` Poisson limit.
    pub poisson_hitting_times: Vec<f64>,
    pub poisson_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtKacReport {
    /// Jump-rate Q-matrix (column convention) read off the diagonal units.
    pub jump_rates: ComplexMatrix,
    pub sites: Vec<CtKacSite>,
    /// Diagonal of the stationary state of the semigroup itself.
    pub semigroup_diagonal: Vec<f64>,
    pub max_residual: f64,
}

fn classical_hitting_times(q: &ComplexMatrix, target: usize) -> Result<Vec<f64>> {
    let k = q.nrows();
    let others: Vec<usize> = (0..k).filter(|&j| j != target).collect();
    let sub = q.select_rows(&others).select_columns(&others).transpose();
    let rhs = VecState::from_element(others.len(), real(-1.0));
    let e = linalg::solve_linear(&sub, &rhs)?;
    let mut out = vec![0.0; k];
    for (pos, &j) in others.iter().enumerate() {
        out[j] = e[pos].re;
    }
    Ok(out)
}

/// Kac's lemma for generators whose vertices carry no internal degree.
pub fn ct_kac_mn(g: &GeneratorModel) -> Result<CtKacReport> {
    let layout = g.layout();
    if layout.slots().iter().any(|s| s.dim != 1) {
        return Err(OqwError::Unsupported(
            "continuous-time Kac needs one-dimensional vertices".into(),
        ));
    }
    let k = layout.sites();
    let l = g.matrix();
    let jump_rates = ComplexMatrix::from_fn(k, k, |a, b| real(l[(layout.slot(a).offset, layout.slot(b).offset)].re));
    let kernel = linalg::null_space(&jump_rates, NULL_TOL);
    if kernel.ncols() != 1 {
        return Err(OqwError::Reducible(format!(
            "jump process has {} stationary laws",
            kernel.ncols()
        )));
    }
    let v = kernel.column(0);
    let total: C64 = v.iter().sum();
    let pi: Vec<f64> = v.iter().map(|z| (z / total).re).collect();
    let stationary = g.stationary_vector()?;
    let semigroup_diagonal = (0..k).map(|i| layout.site_trace(i, &stationary).re).collect();
    let one = ComplexMatrix::from_element(1, 1, ONE);
    let mut sites = Vec::with_capacity(k);
    for i in 0..k {
        let rate = -jump_rates[(i, i)].re;
        if !(rate > 0.0) {
            return Err(OqwError::InvalidModel(format!("vertex {i} has zero exit rate")));
        }
        let hitting_times = classical_hitting_times(&jump_rates, i)?;
        let flow: f64 = (0..k)
            .filter(|&j| j != i)
            .map(|j| jump_rates[(j, i)].re * hitting_times[j])
            .sum();
        let return_time = (1.0 + flow) / rate;
        let kac_value = 1.0 / (rate * pi[i]);
        let poisson_hitting_times = (0..k)
            .map(|j| {
                if j == i {
                    Ok(0.0)
                } else {
                    mean_hitting_ct(g, i, j, &one).map(|h| h.value)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let poisson_residual = hitting_times
            .iter()
            .zip(&poisson_hitting_times)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sites.push(CtKacSite {
            site: i,
            rate,
            stationary: pi[i],
            return_time,
            kac_value,
            residual: (return_time - kac_value).abs(),
            hitting_times,
            poisson_hitting_times,
            poisson_residual,
        });
    }
    let max_residual = sites.iter().map(|s| s.residual).fold(0.0, f64::max);
    Ok(CtKacReport {
        jump_rates,
        sites,
        semigroup_diagonal,
        max_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonVerdict {
    pub delta: f64,
    pub sjk_slope: f64,
    pub sjk_divergent: bool,
    pub monitored_recurrent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtSiteRecurrence {
    pub site: usize,
    /// `min_ρ ∫₀^T p_ii;ρ(t) dt` over a spanning set of densities.
    pub integral: f64,
    /// Smallest late-time growth rate of the integral.
    pub integral_slope: f64,
    pub recurrent: bool,
    pub skeletons: Vec<SkeletonVerdict>,
    /// The continuous verdict matches every skeleton's SJK verdict.
    pub agree: bool,
}

#[derive(Debug, Clone)]
pub struct CtRecurrenceReport {
    pub horizon: f64,
    pub deltas: Vec<f64>,
    pub sites: Vec<CtSiteRecurrence>,
    pub skeleton_reports: Vec<RecurrenceReport>,
    pub verdicts_agree: bool,
}

const INTEGRAL_STEPS: usize = 4000;

/// Recurrence from `∫ p_ii(t) dt` against SJK recurrence of δ-skeletons.
pub fn ct_recurrence_report(g: &GeneratorModel, deltas: &[f64], horizon: f64) -> Result<CtRecurrenceReport> {
    if !(horizon > 0.0) || deltas.is_empty() {
        return Err(OqwError::InvalidModel("recurrence needs a positive horizon and at least one step".into()));
    }
    let layout = g.layout();
    let skeleton_reports = deltas
        .iter()
        .map(|&d| {
            let steps = (horizon / d).ceil() as usize;
            ergodic::recurrence_report(&g.skeleton(d)?, steps.max(2))
        })
        .collect::<Result<Vec<_>>>()?;
    let h = horizon / INTEGRAL_STEPS as f64;
    let step = g.propagator(h)?;
    let mut sites = Vec::with_capacity(layout.sites());
    for i in 0..layout.sites() {
        let basis = linalg::density_basis(layout.slot(i).dim);
        let mut integral = f64::INFINITY;
        let mut integral_slope = f64::INFINITY;
        for rho in &basis {
            let mut x = layout.embed(i, rho)?;
            let mut prev = layout.site_trace(i, &x).re;
            let mut running = 0.0;
            let mut half = 0.0;
            for s in 1..=INTEGRAL_STEPS {
                x = &step * x;
                let p = layout.site_trace(i, &x).re;
                running += 0.5 * h * (prev + p);
                prev = p;
                if s == INTEGRAL_STEPS / 2 {
                    half = running;
                }
            }
            integral = integral.min(running);
            integral_slope = integral_slope.min((running - half) / (0.5 * horizon));
        }
        let recurrent = integral_slope > SLOPE_TOL;
        let skeletons: Vec<SkeletonVerdict> = deltas
            .iter()
            .zip(&skeleton_reports)
            .map(|(&delta, r)| SkeletonVerdict {
                delta,
                sjk_slope: r.sites[i].sjk_slope,
                sjk_divergent: r.sites[i].sjk_divergent,
                monitored_recurrent: r.sites[i].monitored_recurrent,
            })
            .collect();
        let agree = skeletons.iter().all(|s| s.sjk_divergent == recurrent);
        sites.push(CtSiteRecurrence {
            site: i,
            integral,
            integral_slope,
            recurrent,
            skeletons,
            agree,
        });
    }
    let verdicts_agree = sites.iter().all(|s| s.agree);
    Ok(CtRecurrenceReport {
        horizon,
        deltas: deltas.to_vec(),
        sites,
        skeleton_reports,
        verdicts_agree,
    })
}
