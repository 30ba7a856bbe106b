use oqw_core::catalog;
use oqw_core::continuous::{self, GeneratorModel, Graph};
use oqw_core::linalg::{self, real_matrix, ComplexMatrix};
use oqw_core::monitoring;
use oqw_core::sampling;
use oqw_core::trajectory::{self, McEstimate, Termination};
use oqw_core::walk::{embed_classical, OqwModel, StochasticConvention};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 100_000;
const SIGMAS: f64 = 3.0;

fn e(a: usize) -> ComplexMatrix {
    linalg::matrix_unit(2, a, a)
}

fn one() -> ComplexMatrix {
    ComplexMatrix::from_element(1, 1, linalg::ONE)
}

fn assert_within(est: &McEstimate, value: f64, what: &str) {
    assert!(
        est.within(value, SIGMAS),
        "{what}: MC {} ± {} vs {value}",
        est.mean,
        est.std_error()
    );
}

#[test]
fn branch_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for trial in 0..1000 {
        let sites = 2 + trial % 3;
        let n = 1 + trial % 3;
        let model = sampling::random_walk(sites, n, 0.1, &mut rng);
        let rho = sampling::random_density(n, &mut rng);
        let from = trial % sites;
        let p = trajectory::branch_probabilities(&model, from, &rho).unwrap();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
    }
}

#[test]
fn trajectories_are_reproducible() {
    let model = catalog::three_site_unital();
    let a = trajectory::discrete_trajectory(&model, 0, &e(0), Some(2), 500, 11, 4).unwrap();
    let b = trajectory::discrete_trajectory(&model, 0, &e(0), Some(2), 500, 11, 4).unwrap();
    assert_eq!(a, b);
    let free = |stream| trajectory::discrete_trajectory(&model, 0, &e(0), None, 50, 11, stream).unwrap();
    assert_ne!(free(4).points, free(5).points);
    assert!(matches!(a.termination, Termination::Hit { .. }));
    for p in &a.points {
        assert!((p.density.trace().re - 1.0).abs() < 1e-12);
        assert!(linalg::min_hermitian_eigenvalue(&p.density) >= -1e-12);
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let serial = trajectory::mc_hitting(&model, 2, 0, &e(0), 2000, 1000, 5).unwrap();
    let parallel = pool.install(|| trajectory::mc_hitting(&model, 2, 0, &e(0), 2000, 1000, 5).unwrap());
    assert_eq!(serial, parallel);
}

#[test]
fn nonunital_discrete_hitting() {
    let model = catalog::two_site_nonunital();
    let mc = trajectory::mc_hitting(&model, 1, 0, &e(0), SAMPLES, trajectory::DEFAULT_DISCRETE_HORIZON, 1).unwrap();
    assert_eq!(mc.censored, 0.0);
    assert_within(&mc.probability, 1.0, "h21");
    assert_within(&mc.mean_time, 2.0, "k21");

    let back = trajectory::mc_hitting(&model, 0, 1, &e(0), SAMPLES, trajectory::DEFAULT_DISCRETE_HORIZON, 2).unwrap();
    assert_within(&back.mean_time, 3.0, "E2(T1)");

    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let rho = sampling::random_density(2, &mut rng);
    let mc = trajectory::mc_hitting(&model, 1, 0, &rho, SAMPLES, trajectory::DEFAULT_DISCRETE_HORIZON, 3).unwrap();
    assert_within(&mc.mean_time, 2.0 * (1.0 + rho[(0, 1)].re), "k21 random density");
}

#[test]
fn discrete_return_time_matches_kac() {
    let model = catalog::three_site_unital();
    let phi = model.superoperator();
    let analytic = monitoring::mean_return_time(&phi, 0, &e(1)).unwrap();
    let mc = trajectory::mc_hitting(&model, 0, 0, &e(1), SAMPLES, trajectory::DEFAULT_DISCRETE_HORIZON, 4).unwrap();
    assert_within(&mc.mean_time, analytic.value(), "return time");
}

#[test]
fn poisson_measured_hitting() {
    let rotation = GeneratorModel::phi_minus_identity(&catalog::rotation_hopping()).unwrap();
    let mc = trajectory::mc_poisson_hitting(&rotation, 1, 0, &e(0), 1.0, SAMPLES, trajectory::DEFAULT_POISSON_HORIZON, 5).unwrap();
    assert_within(&mc.hitting.probability, 1.0, "p_h rotation");
    assert_within(&mc.hitting.mean_time, 3.0, "tau_h rotation");
    let ks = trajectory::ks_exponential(&mc.first_gaps[..10_000], 1.0);
    assert!(!ks.reject_at_1pct, "KS {}", ks.scaled);

    let collapse = GeneratorModel::phi_minus_identity(&catalog::collapse_hopping()).unwrap();
    let mc = trajectory::mc_poisson_hitting(&collapse, 1, 0, &e(0), 2.0, SAMPLES, trajectory::DEFAULT_POISSON_HORIZON, 6).unwrap();
    assert_within(&mc.hitting.mean_time, 3.0, "tau_h collapse");
    let ks = trajectory::ks_exponential(&mc.first_gaps[..10_000], 2.0);
    assert!(!ks.reject_at_1pct, "KS {}", ks.scaled);

    let pauli = GeneratorModel::phi_minus_identity(&catalog::three_site_pauli()).unwrap();
    let mc = trajectory::mc_poisson_hitting(&pauli, 0, 1, &e(0), 2.0, SAMPLES, trajectory::DEFAULT_POISSON_HORIZON, 7).unwrap();
    let analytic = continuous::poisson_hitting(&pauli, 0, 1, &e(0), 2.0).unwrap().mean_time;
    assert!((analytic - (4.0 + 11.0 / 6.0)).abs() < 1e-10);
    assert_within(&mc.hitting.mean_time, analytic, "tau_h three-site");
}

#[test]
fn poisson_measured_classical_chain_at_high_rate() {
    let g = GeneratorModel::classical_q(&catalog::four_vertex_qmatrix()).unwrap();
    let rate = 1000.0;
    let mc = trajectory::mc_poisson_hitting(&g, 0, 3, &one(), rate, 20_000, 100_000, 8).unwrap();
    assert_eq!(mc.hitting.censored, 0.0);
    let analytic = continuous::poisson_hitting(&g, 0, 3, &one(), rate).unwrap().mean_time;
    assert_within(&mc.hitting.mean_time, analytic, "tau_h(1000)");
    assert_within(&mc.hitting.mean_time, 2.375, "tau_h limit");
    let ks = trajectory::ks_exponential(&mc.first_gaps[..10_000], rate);
    assert!(!ks.reject_at_1pct);
}

#[test]
fn jump_process_hitting_limits() {
    let cases: Vec<(GeneratorModel, usize, usize, ComplexMatrix, f64)> = vec![
        (GeneratorModel::classical_q(&catalog::four_vertex_qmatrix()).unwrap(), 0, 3, one(), 2.375),
        (GeneratorModel::phi_minus_identity(&catalog::three_site_pauli()).unwrap(), 0, 1, e(0), 4.0),
        (GeneratorModel::graph_induced(&Graph::cycle(3).unwrap()).unwrap(), 1, 0, one(), 2.0),
        (GeneratorModel::graph_induced(&Graph::cycle(3).unwrap()).unwrap(), 1, 2, one(), 2.0),
        (GeneratorModel::graph_induced(&Graph::path(3).unwrap()).unwrap(), 1, 0, one(), 1.0),
        (GeneratorModel::graph_induced(&Graph::path(3).unwrap()).unwrap(), 2, 0, one(), 4.0),
    ];
    for (k, (g, target, start, rho, value)) in cases.into_iter().enumerate() {
        let analytic = continuous::mean_hitting_ct(&g, target, start, &rho).unwrap().value;
        assert!((analytic - value).abs() < 1e-4);
        let u = trajectory::uniformize(&g).unwrap();
        let mc = trajectory::mc_ct_hitting(&u, target, start, &rho, SAMPLES, 100_000, 20 + k as u64).unwrap();
        assert_within(&mc.mean_time, value, &format!("case {k}"));
    }
}

#[test]
fn jump_process_return_times() {
    let g = GeneratorModel::graph_induced(&Graph::path(3).unwrap()).unwrap();
    let report = continuous::ct_kac_mn(&g).unwrap();
    let u = trajectory::uniformize(&g).unwrap();
    for site in &report.sites {
        let mc = trajectory::mc_ct_hitting(&u, site.site, site.site, &one(), SAMPLES, 100_000, 30 + site.site as u64).unwrap();
        assert_within(&mc.mean_time, site.kac_value, "return time");
    }
}

#[test]
fn enumeration_brackets_nonunital_hitting() {
    let model = catalog::two_site_nonunital();
    let mut last = (0.0, 0.0);
    for horizon in [1, 5, 10, 20, 30] {
        let en = trajectory::enumerate_paths(&model, 1, 0, &e(0), horizon).unwrap();
        assert!(en.probability >= last.0 - 1e-15 && en.mean_time >= last.1 - 1e-15);
        assert!(en.probability <= 1.0 + 1e-12 && en.mean_time <= 2.0 + 1e-12);
        assert!(1.0 - en.probability <= en.tail_probability + 1e-12);
        assert!(2.0 - en.mean_time <= en.tail_mean + 1e-12);
        last = (en.probability, en.mean_time);
    }
    let en = trajectory::enumerate_paths(&model, 1, 0, &e(0), 30).unwrap();
    assert!(en.tail_probability < 1e-8);
}

#[test]
fn enumeration_matches_classical_first_passage() {
    let p = real_matrix(&[&[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5], &[0.5, 0.5, 0.0]]);
    let model = embed_classical(&p, StochasticConvention::Column).unwrap();
    // first passage 0 → 1 on the triangle: b_r = (1/2)^r
    for horizon in [1, 4, 12] {
        let en = trajectory::enumerate_paths(&model, 1, 0, &one(), horizon).unwrap();
        let prob: f64 = (1..=horizon).map(|r| 0.5f64.powi(r as i32)).sum();
        let mean: f64 = (1..=horizon).map(|r| r as f64 * 0.5f64.powi(r as i32)).sum();
        assert!((en.probability - prob).abs() < 1e-14);
        assert!((en.mean_time - mean).abs() < 1e-13);
        assert!((en.monitored_radius - 0.5).abs() < 1e-12);
    }
}

#[test]
fn enumeration_budget_is_enforced() {
    let model = catalog::three_site_unital();
    let err = trajectory::enumerate_paths(&model, 2, 0, &e(0), 40).unwrap_err();
    assert!(matches!(err, oqw_core::error::OqwError::BudgetExceeded { .. }));
    let walk = OqwModel::identity_walk(2, 1);
    let en = trajectory::enumerate_paths(&walk, 1, 0, &one(), 10).unwrap();
    assert_eq!(en.probability, 0.0);
    assert_eq!(en.tail_probability, 1.0);
}
