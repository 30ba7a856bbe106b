//! Monte Carlo quantum trajectories and exact path enumeration, used as an
//! independent check on the analytic hitting quantities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::continuous::GeneratorModel;
use crate::error::{OqwError, Result};
use crate::linalg::{self, ComplexMatrix, VecState};
use crate::walk::{check_site_density, embed_classical, OqwModel, StochasticConvention};

/// Running mean and variance (Welford), mergeable across threads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct McEstimate {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl McEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut est = Self::new();
        for x in samples {
            est.push(x);
        }
        est
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan's pairwise combination.
    pub fn merge(&self, other: &McEstimate) -> McEstimate {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let wa = self.count as f64 / n;
        let wb = other.count as f64 / n;
        McEstimate {
            count: self.count + other.count,
            mean: self.mean * wa + other.mean * wb,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * wb,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    /// Sample standard deviation over `√count`.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    /// `|mean − value|` in standard errors; zero spread counts as exact.
    pub fn deviation(&self, value: f64) -> f64 {
        let gap = (self.mean - value).abs();
        let se = self.std_error();
        if se > 0.0 {
            gap / se
        } else if gap <= 1e-12 * value.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, value: f64, sigmas: f64) -> bool {
        self.deviation(value) <= sigmas
    }
}

/// Independent generator for trajectory `stream` under `master`.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

pub const BRANCH_FLOOR: f64 = 1e-14;
pub const DEFAULT_DISCRETE_HORIZON: usize = 10_000;
pub const DEFAULT_POISSON_HORIZON: usize = 10_000;

/// `(to, Tr(B_to,from ρ B*), B ρ B*)` for every block leaving `from`.
fn branches(model: &OqwModel, from: usize, rho: &ComplexMatrix) -> Vec<(usize, f64, ComplexMatrix)> {
    model
        .column(from)
        .map(|(to, b)| {
            let out = b * rho * b.adjoint();
            let p = out.trace().re;
            (to, p, out)
        })
        .collect()
}

/// Branch probabilities `p(from → i) = Tr(B_i,from ρ B_i,from*)` indexed by
/// destination, with branches below [`BRANCH_FLOOR`] merged into the largest.
pub fn branch_probabilities(model: &OqwModel, from: usize, rho: &ComplexMatrix) -> Result<Vec<f64>> {
    model.layout().check_site(from)?;
    check_site_density(rho, model.dim())?;
    let mut p = vec![0.0; model.sites()];
    for (to, w, _) in branches(model, from, rho) {
        p[to] += w;
    }
    merge_small(&mut p)?;
    Ok(p)
}

fn merge_small(p: &mut [f64]) -> Result<()> {
    let (largest, top) = p
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if !(top >= BRANCH_FLOOR) {
        return Err(OqwError::InvalidDensity(
            "every branch probability is below 1e-14".into(),
        ));
    }
    let mut moved = 0.0;
    for (k, v) in p.iter_mut().enumerate() {
        if k != largest && *v < BRANCH_FLOOR {
            moved += v.max(0.0);
            *v = 0.0;
        }
    }
    p[largest] += moved;
    Ok(())
}

fn pick<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// One step of the quantum trajectory: jump to `i` with probability
/// `Tr(B_ij ρ B_ij*)` and renormalize.
pub fn discrete_trajectory_step<R: Rng + ?Sized>(
    model: &OqwModel,
    from: usize,
    rho: &ComplexMatrix,
    rng: &mut R,
) -> Result<(usize, ComplexMatrix)> {
    let list = branches(model, from, rho);
    let mut p = vec![0.0; model.sites()];
    for (to, w, _) in &list {
        p[*to] += w;
    }
    merge_small(&mut p)?;
    let to = pick(&p, rng);
    let sum = list
        .into_iter()
        .filter(|(t, _, _)| *t == to)
        .fold(ComplexMatrix::zeros(model.dim(), model.dim()), |acc, (_, _, m)| acc + m);
    let trace = sum.trace().re;
    Ok((to, linalg::hermitian_part(&sum).unscale(trace)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub site: usize,
    pub density: ComplexMatrix,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Hit { step: usize, time: f64 },
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub master_seed: u64,
    pub stream: u64,
    pub points: Vec<TrajectoryPoint>,
    pub termination: Termination,
}

/// Records a discrete trajectory until it reaches `target` (after at least one
/// step) or `horizon` steps elapse.
pub fn discrete_trajectory(
    model: &OqwModel,
    start: usize,
    rho: &ComplexMatrix,
    target: Option<usize>,
    horizon: usize,
    master_seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    model.layout().check_site(start)?;
    check_site_density(rho, model.dim())?;
    let mut rng = stream_rng(master_seed, stream);
    let mut site = start;
    let mut state = rho.clone();
    let mut points = vec![TrajectoryPoint {
        site,
        density: state.clone(),
        time: 0.0,
    }];
    let mut termination = Termination::Horizon;
    for step in 1..=horizon {
        let (to, next) = discrete_trajectory_step(model, site, &state, &mut rng)?;
        site = to;
        state = next;
        points.push(TrajectoryPoint {
            site,
            density: state.clone(),
            time: step as f64,
        });
        if Some(site) == target {
            termination = Termination::Hit {
                step,
                time: step as f64,
            };
            break;
        }
    }
    Ok(TrajectoryRecord {
        master_seed,
        stream,
        points,
        termination,
    })
}

/// Monte Carlo hitting estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McHitting {
    /// Indicator of reaching the target within the horizon.
    pub probability: McEstimate,
    /// `T·1{T ≤ horizon}`: estimates `Σ r b_r` (the mean time when `h = 1`).
    pub mean_time: McEstimate,
    /// Fraction of paths still running at the horizon.
    pub censored: f64,
}

/// Per-path outcome: `Some(time)` on a hit, `None` when censored.
fn aggregate(outcomes: Vec<Option<f64>>) -> McHitting {
    let mut probability = McEstimate::new();
    let mut mean_time = McEstimate::new();
    let mut censored = 0usize;
    for o in &outcomes {
        match o {
            Some(t) => {
                probability.push(1.0);
                mean_time.push(*t);
            }
            None => {
                censored += 1;
                probability.push(0.0);
                mean_time.push(0.0);
            }
        }
    }
    McHitting {
        probability,
        mean_time,
        censored: censored as f64 / outcomes.len().max(1) as f64,
    }
}

fn run_paths<F>(samples: usize, path: F) -> Result<Vec<Option<f64>>>
where
    F: Fn(u64) -> Result<Option<f64>> + Sync + Send,
{
    if samples == 0 {
        return Err(OqwError::InvalidModel("at least one sample is required".into()));
    }
    (0..samples as u64).into_par_iter().map(&path).collect()
}

/// First visit to `target` from `ρ` at `start` (first return when they coincide).
pub fn mc_hitting(
    model: &OqwModel,
    target: usize,
    start: usize,
    rho: &ComplexMatrix,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<McHitting> {
    model.layout().check_site(target)?;
    model.layout().check_site(start)?;
    check_site_density(rho, model.dim())?;
    let outcomes = run_paths(samples, |stream| {
        let mut rng = stream_rng(seed, stream);
        let mut site = start;
        let mut state = rho.clone();
        for step in 1..=horizon {
            let (to, next) = discrete_trajectory_step(model, site, &state, &mut rng)?;
            if to == target {
                return Ok(Some(step as f64));
            }
            site = to;
            state = next;
        }
        Ok(None)
    })?;
    Ok(aggregate(outcomes))
}

/// Continuous-time jump process: exponential clock of `rate`, then one
/// discrete trajectory step of `model`.
#[derive(Debug, Clone)]
pub struct Uniformized {
    pub model: OqwModel,
    pub rate: f64,
}

/// Uniformization of `Φ − 𝕀` (rate 1) or of a jump-rate Q-matrix
/// (`P = 𝕀 + Q/c`, `c = max q_i`). Generators on `M_n` use their jump rates.
pub fn uniformize(g: &GeneratorModel) -> Result<Uniformized> {
    use crate::continuous::GeneratorKind;
    match &g.kind {
        GeneratorKind::PhiMinusIdentity(model) => Ok(Uniformized {
            model: model.clone(),
            rate: 1.0,
        }),
        GeneratorKind::ClassicalQ(q) => uniformize_q(q),
        _ => {
            let layout = g.layout();
            if layout.slots().iter().any(|s| s.dim != 1) {
                return Err(OqwError::Unsupported(
                    "no trajectory law for this generator".into(),
                ));
            }
            let k = layout.sites();
            let l = g.matrix();
            let q = ComplexMatrix::from_fn(k, k, |a, b| {
                linalg::real(l[(layout.slot(a).offset, layout.slot(b).offset)].re)
            });
            uniformize_q(&q)
        }
    }
}

fn uniformize_q(q: &ComplexMatrix) -> Result<Uniformized> {
    let k = q.nrows();
    let c = (0..k).map(|i| -q[(i, i)].re).fold(0.0, f64::max);
    if !(c > 0.0) {
        return Err(OqwError::InvalidModel("jump process never moves".into()));
    }
    let p = linalg::identity(k) + q.unscale(c);
    let p = p.map(|z| linalg::real(z.re.max(0.0)));
    Ok(Uniformized {
        model: embed_classical(&p, StochasticConvention::Column)?,
        rate: c,
    })
}

/// Hitting time of `target` for the jump process; when `start == target`
/// this is the return time `D^{i+}` (leave, then come back).
pub fn mc_ct_hitting(
    u: &Uniformized,
    target: usize,
    start: usize,
    rho: &ComplexMatrix,
    samples: usize,
    horizon_jumps: usize,
    seed: u64,
) -> Result<McHitting> {
    let model = &u.model;
    model.layout().check_site(target)?;
    model.layout().check_site(start)?;
    check_site_density(rho, model.dim())?;
    let clock = Exp::new(u.rate).map_err(|e| OqwError::InvalidModel(e.to_string()))?;
    let outcomes = run_paths(samples, |stream| {
        let mut rng = stream_rng(seed, stream);
        let mut site = start;
        let mut state = rho.clone();
        let mut left = start != target;
        let mut t = 0.0;
        for _ in 0..horizon_jumps {
            t += clock.sample(&mut rng);
            let (to, next) = discrete_trajectory_step(model, site, &state, &mut rng)?;
            if to != site {
                left = true;
            }
            if left && to == target {
                return Ok(Some(t));
            }
            site = to;
            state = next;
        }
        Ok(None)
    })?;
    Ok(aggregate(outcomes))
}

/// `x ↦ e^{t𝓛̂}x`, through a cached eigendecomposition when it is well
/// conditioned.
enum Propagator {
    Spectral {
        vectors: ComplexMatrix,
        inverse: ComplexMatrix,
        values: Vec<num_complex::Complex64>,
    },
    Dense(ComplexMatrix),
}

impl Propagator {
    fn new(l: &ComplexMatrix) -> Self {
        if let Ok(eig) = linalg::eig(l) {
            if linalg::condition_number(&eig.vectors) <= 1e8 {
                if let Ok(inverse) = linalg::invert(&eig.vectors) {
                    let d = ComplexMatrix::from_diagonal(&VecState::from_vec(eig.values.clone()));
                    let rebuilt = &eig.vectors * d * &inverse;
                    if linalg::max_abs(&(rebuilt - l)) <= 1e-10 * linalg::max_abs(l).max(1.0) {
                        return Propagator::Spectral {
                            vectors: eig.vectors,
                            inverse,
                            values: eig.values,
                        };
                    }
                }
            }
        }
        Propagator::Dense(l.clone())
    }

    fn apply(&self, t: f64, x: &VecState) -> Result<VecState> {
        match self {
            Propagator::Spectral {
                vectors,
                inverse,
                values,
            } => {
                let mut y = inverse * x;
                for (k, v) in values.iter().enumerate() {
                    y[k] *= (v * t).exp();
                }
                Ok(vectors * y)
            }
            Propagator::Dense(l) => Ok(linalg::expm(&l.scale(t))? * x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonMc {
    pub hitting: McHitting,
    /// First inter-measurement interval of every path, for distribution checks.
    pub first_gaps: Vec<f64>,
}

/// Measured evolution: exponential(λ) intervals of `e^{Δt𝓛̂}`, then a
/// `{ℙ_f, ℚ_f}` measurement with Born probabilities.
#[allow(clippy::too_many_arguments)]
pub fn mc_poisson_hitting(
    g: &GeneratorModel,
    target: usize,
    start: usize,
    rho: &ComplexMatrix,
    rate: f64,
    samples: usize,
    horizon_jumps: usize,
    seed: u64,
) -> Result<PoissonMc> {
    let layout = g.layout();
    layout.check_site(target)?;
    layout.check_site(start)?;
    if start == target {
        return Err(OqwError::Unsupported("start site equals the target".into()));
    }
    check_site_density(rho, layout.slot(start).dim)?;
    let clock = Exp::new(rate).map_err(|e| OqwError::InvalidModel(format!("rate {rate}: {e}")))?;
    let x0 = layout.embed(start, rho)?;
    let keep: Vec<f64> = layout.complement(target).diagonal().iter().map(|z| z.re).collect();
    let propagator = Propagator::new(g.matrix());
    let runs: Vec<(Option<f64>, f64)> = (0..samples.max(1) as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = stream_rng(seed, stream);
            let mut x = x0.clone();
            let mut t = 0.0;
            let mut first = 0.0;
            for n in 0..horizon_jumps {
                let gap = clock.sample(&mut rng);
                if n == 0 {
                    first = gap;
                }
                t += gap;
                x = propagator.apply(gap, &x)?;
                let total = layout.total_trace(&x).re;
                let p = (layout.site_trace(target, &x).re / total).clamp(0.0, 1.0);
                if rng.random::<f64>() < p {
                    return Ok((Some(t), first));
                }
                for (v, k) in x.iter_mut().zip(&keep) {
                    *v *= *k;
                }
                let rest = layout.total_trace(&x).re;
                if !(rest > 0.0) {
                    return Err(OqwError::InvalidDensity("state vanished after measurement".into()));
                }
                x.unscale_mut(rest);
            }
            Ok((None, first))
        })
        .collect::<Result<Vec<_>>>()?;
    if samples == 0 {
        return Err(OqwError::InvalidModel("at least one sample is required".into()));
    }
    let first_gaps = runs.iter().map(|r| r.1).collect();
    let hitting = aggregate(runs.into_iter().map(|r| r.0).collect());
    Ok(PoissonMc {
        hitting,
        first_gaps,
    })
}

pub const ENUMERATION_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEnumeration {
    pub horizon: usize,
    /// `Σ_{r≤H} b_r`: a lower bound for the hitting probability.
    pub probability: f64,
    /// `Σ_{r≤H} r b_r`.
    pub mean_time: f64,
    /// Mass of paths still avoiding the target at step `H`.
    pub tail_probability: f64,
    /// `m_H (H + 1/(1 − ρ))` with `ρ` the spectral radius of the monitored operator.
    pub tail_mean: f64,
    pub monitored_radius: f64,
    pub branches: u64,
}

/// Exact sum over all paths from `start` that first reach `target` within
/// `horizon` steps.
pub fn enumerate_paths(
    model: &OqwModel,
    target: usize,
    start: usize,
    rho: &ComplexMatrix,
    horizon: usize,
) -> Result<PathEnumeration> {
    let k = model.sites();
    model.layout().check_site(target)?;
    model.layout().check_site(start)?;
    check_site_density(rho, model.dim())?;

    // count branches before walking them
    let mut live = vec![0u64; k];
    live[start] = 1;
    let mut branches: u64 = 0;
    for _ in 0..horizon {
        let mut next = vec![0u64; k];
        for (from, &count) in live.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (to, _) in model.column(from) {
                branches = branches.saturating_add(count);
                if to != target {
                    next[to] = next[to].saturating_add(count);
                }
            }
        }
        if branches > ENUMERATION_BUDGET {
            return Err(OqwError::BudgetExceeded {
                branches,
                limit: ENUMERATION_BUDGET,
            });
        }
        live = next;
    }

    let mut hits = vec![0.0; horizon + 1];
    let mut survival = 0.0;
    let mut stack: Vec<(usize, usize, ComplexMatrix)> = vec![(start, 0, rho.clone())];
    while let Some((site, depth, sigma)) = stack.pop() {
        if depth == horizon {
            survival += sigma.trace().re;
            continue;
        }
        for (to, b) in model.column(site) {
            let next = b * &sigma * b.adjoint();
            if to == target {
                hits[depth + 1] += next.trace().re;
            } else {
                stack.push((to, depth + 1, next));
            }
        }
    }
    let probability = hits.iter().sum();
    let mean_time = hits.iter().enumerate().map(|(r, b)| r as f64 * b).sum();
    let phi = model.superoperator();
    let monitored = phi.layout.complement(target) * &phi.matrix;
    let monitored_radius = linalg::spectral_radius(&monitored)?;
    let tail_mean = if survival == 0.0 {
        0.0
    } else if monitored_radius < 1.0 {
        survival * (horizon as f64 + 1.0 / (1.0 - monitored_radius))
    } else {
        f64::INFINITY
    };
    Ok(PathEnumeration {
        horizon,
        probability,
        mean_time,
        tail_probability: survival,
        tail_mean,
        monitored_radius,
        branches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    /// `D(√n + 0.12 + 0.11/√n)`.
    pub scaled: f64,
    pub reject_at_1pct: bool,
}

/// Kolmogorov–Smirnov test against exponential(`rate`), fully specified.
pub fn ks_exponential(samples: &[f64], rate: f64) -> KsTest {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let f = 1.0 - (-rate * x).exp();
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    let root = n.sqrt();
    let scaled = d * (root + 0.12 + 0.11 / root);
    KsTest {
        statistic: d,
        scaled,
        reject_at_1pct: scaled > 1.628,
    }
}
