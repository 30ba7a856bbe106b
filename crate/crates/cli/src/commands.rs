//! One function per subcommand. Sites are 1-based in every quantity name.

use std::path::{Path, PathBuf};

use clap::Parser;
use oqw_core::continuous::{self, PoissonHittingProblem};
use oqw_core::ergodic::{self, ErgodicAnalysis};
use oqw_core::error::OqwError;
use oqw_core::monitoring::{self, HittingTime};
use oqw_core::trajectory;
use oqw_core::walk::validate_qmatrix;

use crate::model::{Check, Expected, InputError, LoadedModel, ModelKind};
use crate::report::{Provenance, Report, Value};
use crate::{
    CheckAllArgs, Cli, CliError, Command, HittingArgs, HittingMode, KacArgs, MhtfArgs, RecurrenceArgs,
    SimulateArgs, StationaryArgs, Which, BUNDLED_MODELS,
};

type Outcome = Result<Report, CliError>;

pub const STATIONARY_TOL: f64 = 1e-10;
pub const DISCRETE_TOL: f64 = 1e-8;
pub const CT_TOL: f64 = 1e-6;
pub const GENERATOR_TOL: f64 = 1e-10;
pub const CHECK_TOL: f64 = 1e-8;
pub const RECURRENCE_STEPS: usize = 600;
pub const RECURRENCE_HORIZON: f64 = 200.0;
pub const DEFAULT_DELTAS: [f64; 3] = [0.1, 0.5, 2.0];
/// Jump limit for continuous-time trajectories.
pub const JUMP_HORIZON: usize = 100_000;

fn echo(command: &Command) -> String {
    match command {
        Command::Validate(a) => format!("validate {}", a.file.display()),
        Command::Hitting(a) => {
            let mut s = format!("hitting {} --from {} --to {} --mode {:?}", a.file.display(), a.from, a.to, a.mode);
            if let Some(st) = &a.state {
                s.push_str(&format!(" --state {st}"));
            }
            if let Some(l) = a.lambda {
                s.push_str(&format!(" --lambda {l}"));
            }
            s.to_lowercase().replace("ctlimit", "ct-limit")
        }
        Command::Stationary(a) => format!("stationary {}{}", a.file.display(), if a.ct { " --ct" } else { "" }),
        Command::Mhtf(a) => {
            let which = match a.which {
                Which::First => "1",
                Which::Stationary => "2",
                Which::Continuous => "ct",
            };
            let mut s = format!("mhtf {} --which {which}", a.file.display());
            if let Some(st) = &a.state {
                s.push_str(&format!(" --state {st}"));
            }
            s
        }
        Command::Kac(a) => format!("kac {}{}", a.file.display(), if a.ct { " --ct" } else { "" }),
        Command::Recurrence(a) => {
            let mut s = format!("recurrence {}", a.file.display());
            for d in &a.delta {
                s.push_str(&format!(" --delta {d}"));
            }
            if a.ct {
                s.push_str(" --ct");
            }
            s
        }
        Command::Simulate(a) => {
            let mut s = format!(
                "simulate {} --from {} --to {} --samples {} --seed {}",
                a.file.display(),
                a.from,
                a.to,
                a.samples,
                a.seed
            );
            if let Some(st) = &a.state {
                s.push_str(&format!(" --state {st}"));
            }
            if let Some(l) = a.lambda {
                s.push_str(&format!(" --lambda {l}"));
            }
            if a.jump {
                s.push_str(" --jump");
            }
            s
        }
        Command::CheckAll(a) => {
            let paths: Vec<String> = a.paths.iter().map(|p| p.display().to_string()).collect();
            format!("check-all {}", paths.join(" ")).trim_end().to_string()
        }
    }
}

pub fn run(command: &Command, model: &LoadedModel) -> Outcome {
    let mut report = Report::new(echo(command), model.digest.clone());
    match command {
        Command::Validate(_) => validate(model, &mut report)?,
        Command::Hitting(a) => hitting(a, model, &mut report)?,
        Command::Stationary(a) => stationary(a, model, &mut report)?,
        Command::Mhtf(a) => mhtf(a, model, &mut report)?,
        Command::Kac(a) => kac(a, model, &mut report)?,
        Command::Recurrence(a) => recurrence(a, model, &mut report)?,
        Command::Simulate(a) => simulate(a, model, &mut report)?,
        Command::CheckAll(_) => {
            return Err(InputError::Invalid("check-all takes model paths, not a loaded model".into()).into())
        }
    }
    Ok(report)
}

pub fn run_without_model(command: &Command) -> Outcome {
    match command {
        Command::CheckAll(a) => check_all(a),
        other => Err(InputError::Invalid(format!("{} needs a model file", echo(other))).into()),
    }
}

fn site_name(i: usize) -> usize {
    i + 1
}

fn validate(model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    let file = &model.file;
    report.info("kind", Value::Text(format!("{:?}", file.kind).to_lowercase()), Provenance::Input);
    report.real("sites", file.sites as f64, Provenance::Input);
    report.real("internal_dim", file.internal_dim as f64, Provenance::Input);
    if let Some(walk) = &model.walk {
        let v = walk.validate();
        report.require("trace_preserving", v.trace_preserving);
        report.flag("unital", v.unital);
        report.real("trace_defect", v.max_defect, Provenance::Analytic);
        report.real("unital_defect", v.unital_defect, Provenance::Analytic);
    }
    if file.kind == ModelKind::Qmatrix {
        let q = model.generator()?.matrix().clone();
        let check = validate_qmatrix(&q)?;
        report.require("q_matrix", check.valid);
        if let Some(worst) = check.worst {
            report.note(format!("worst Q-matrix violation: {worst:?}"));
        }
    }
    if let Some(g) = &model.generator {
        report.residual("generator.trace_defect", g.trace_annihilation_defect(), GENERATOR_TOL, Provenance::Analytic);
        let completeness = g.completeness_check();
        report.flag("generator.complete", completeness.complete);
        for b in completeness.blocks.iter().filter(|b| !b.invertible) {
            report.note(format!("generator block ({},{}) is singular", site_name(b.to), site_name(b.from)));
        }
    }
    for name in file.densities.keys() {
        report.info(format!("density.{name}"), Value::Text("valid".into()), Provenance::Input);
    }
    Ok(())
}

fn time_value(t: HittingTime) -> Value {
    Value::Real(t.value())
}

fn hitting(a: &HittingArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    let from = model.site(a.from, "--from")?;
    let to = model.site(a.to, "--to")?;
    let rho = model.file.density(a.state.as_deref())?;
    match a.mode {
        HittingMode::Discrete => {
            let phi = model.walk()?.superoperator();
            if from == to {
                let h = monitoring::return_probability(&phi, to, &rho)?;
                report.real("h", h.value, Provenance::Analytic);
                if let Some(w) = h.warning {
                    report.note(w);
                }
                let k = monitoring::mean_return_time(&phi, to, &rho)?;
                report.info("k", time_value(k), Provenance::Analytic);
            } else {
                let h = monitoring::hitting_probability(&phi, to, from, &rho)?;
                report.real("h", h.value, Provenance::Analytic);
                if let Some(w) = h.warning {
                    report.note(w);
                }
                let k = monitoring::mean_hitting_time(&phi, to, from, &rho)?;
                report.info("k", time_value(k), Provenance::Analytic);
            }
        }
        HittingMode::Poisson => {
            let lambda = a
                .lambda
                .ok_or_else(|| InputError::Invalid("--mode poisson needs --lambda".into()))?;
            let g = model.generator()?;
            let problem = PoissonHittingProblem::new(g, to, lambda)?;
            let hyp = problem.hypothesis_report()?;
            report.info(
                "det_M",
                Value::Complex(hyp.determinant.re, hyp.determinant.im),
                Provenance::Analytic,
            );
            report.real("spectral_radius", hyp.spectral_radius, Provenance::Analytic);
            let h = problem.solve(from, &rho)?;
            report.real("p_h", h.probability, Provenance::Analytic);
            report.real("tau_h", h.mean_time, Provenance::Analytic);
        }
        HittingMode::CtLimit => {
            let g = model.generator()?;
            let limit = continuous::mean_hitting_ct(g, to, from, &rho)?;
            report.real("tau_limit", limit.value, Provenance::Extrapolated);
            report.real("slope", limit.slope, Provenance::Extrapolated);
            report.residual("fit_residual", limit.residual, continuous::FIT_TOL, Provenance::Extrapolated);
            for (l, tau) in &limit.ladder {
                report.real(format!("tau_h({l:e})"), *tau, Provenance::Analytic);
            }
        }
    }
    Ok(())
}

fn stationary(a: &StationaryArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    if a.ct || model.walk.is_none() {
        let g = model.generator()?;
        let v = g.stationary_vector()?;
        let layout = g.layout();
        for i in 0..layout.sites() {
            report.real(format!("pi_{}.trace", site_name(i)), layout.site_trace(i, &v).re, Provenance::Analytic);
            report.matrix(&format!("pi_{}", site_name(i)), &layout.extract(i, &v), Provenance::Analytic);
        }
        let residual = oqw_core::linalg::max_abs_vec(&(g.matrix() * &v));
        report.residual("generator_residual", residual, STATIONARY_TOL, Provenance::Analytic);
        let (_, gap) = continuous::ct_limit(g)?;
        report.real("gap", gap, Provenance::Analytic);
        return Ok(());
    }
    let phi = model.walk()?.superoperator();
    let pi = ergodic::stationary_state(&phi)?;
    report.require("unique", pi.unique);
    for i in 0..pi.density.sites() {
        report.real(format!("pi_{}.trace", site_name(i)), pi.density.site_trace(i), Provenance::Analytic);
        report.matrix(&format!("pi_{}", site_name(i)), pi.density.component(i), Provenance::Analytic);
    }
    report.residual("fixed_point_residual", pi.residual, STATIONARY_TOL, Provenance::Analytic);
    let summary = ergodic::spectral_summary(&phi)?;
    report.flag("primitive", summary.primitive);
    report.real("gap", summary.gap, Provenance::Analytic);
    let verdict = ergodic::irreducibility_check(&phi)?;
    report.flag("faithful", verdict.faithful);
    report.flag("irreducible", verdict.irreducible);
    if summary.primitive {
        let lc = ergodic::limit_channel(&phi)?;
        report.require("limit_channel_validated", lc.validated);
        report.real("limit_power_check", lc.power_check, Provenance::Analytic);
    }
    Ok(())
}

fn mhtf(a: &MhtfArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    match a.which {
        Which::First | Which::Stationary => {
            let tol = a.tol.unwrap_or(DISCRETE_TOL);
            let phi = model.walk()?.superoperator();
            let analysis = ErgodicAnalysis::new(&phi)?;
            let k = phi.sites();
            if a.which == Which::First {
                let rho = model.file.density(a.state.as_deref())?;
                for j in 0..k {
                    for i in (0..k).filter(|&i| i != j) {
                        let check = analysis.mhtf1(&rho, i, j)?;
                        let name = format!("E{}(T{})", site_name(j), site_name(i));
                        report.real(&name, check.lhs, Provenance::Analytic);
                        report.residual(format!("{name}.residual"), check.residual, tol, Provenance::Analytic);
                    }
                }
            } else {
                for j in 0..k {
                    let check = analysis.mhtf2(j)?;
                    let name = format!("E_pi(T{})", site_name(j));
                    report.real(&name, check.lhs, Provenance::Analytic);
                    report.residual(format!("{name}.residual"), check.residual, tol, Provenance::Analytic);
                }
            }
            let lemma = analysis.fundamental.lemma_one(&phi);
            report.residual("lemma1", lemma.max(), tol, Provenance::Analytic);
            report.residual("lemma2", analysis.lemma_two_residual(), tol, Provenance::Analytic);
            report.residual("lemma3", analysis.lemma_three_residual(), tol, Provenance::Analytic);
        }
        Which::Continuous => {
            let tol = a.tol.unwrap_or(CT_TOL);
            let g = model.generator()?;
            let rho = model.file.density(a.state.as_deref())?;
            let k = g.sites();
            for j in 0..k {
                for i in (0..k).filter(|&i| i != j) {
                    let check = continuous::mhtf_ct_verify(g, &rho, i, j)?;
                    let name = format!("E{}(T{})", site_name(j), site_name(i));
                    report.real(&name, check.lhs, Provenance::Quadrature);
                    report.residual(format!("{name}.residual"), check.residual, tol, Provenance::Quadrature);
                    report.real(format!("{name}.literal_residual"), check.literal_residual, Provenance::Quadrature);
                }
            }
            let fm = continuous::ct_fundamental_matrix(g)?;
            report.residual("lemma1", fm.lemma_one(g).max(), DISCRETE_TOL, Provenance::Quadrature);
            report.residual("closed_form", fm.closed_form_residual, DISCRETE_TOL, Provenance::Quadrature);
        }
    }
    Ok(())
}

fn kac(a: &KacArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    if a.ct {
        let tol = a.tol.unwrap_or(CT_TOL);
        let g = model.generator()?;
        let kac = continuous::ct_kac_mn(g)?;
        for s in &kac.sites {
            let i = site_name(s.site);
            report.real(format!("pi_{i}"), s.stationary, Provenance::Analytic);
            report.real(format!("return_time_{i}"), s.return_time, Provenance::Analytic);
            report.real(format!("kac_{i}"), s.kac_value, Provenance::Analytic);
            report.residual(format!("kac_{i}.residual"), s.residual, tol, Provenance::Analytic);
            report.real(format!("kac_{i}.poisson_residual"), s.poisson_residual, Provenance::Analytic);
        }
        for (i, d) in kac.semigroup_diagonal.iter().enumerate() {
            report.real(format!("semigroup_pi_{}", site_name(i)), *d, Provenance::Analytic);
        }
        return Ok(());
    }
    let tol = a.tol.unwrap_or(DISCRETE_TOL);
    let phi = model.walk()?.superoperator();
    for x in 0..phi.sites() {
        let check = ergodic::kac_verify(&phi, x)?;
        let i = site_name(x);
        report.real(format!("return_time_{i}"), check.expected_return, Provenance::Analytic);
        report.real(format!("inverse_trace_{i}"), check.inverse_trace, Provenance::Analytic);
        report.residual(format!("kac_{i}.residual"), check.residual, tol, Provenance::Analytic);
    }
    Ok(())
}

fn recurrence(a: &RecurrenceArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    if a.ct || !a.delta.is_empty() || model.walk.is_none() {
        let g = model.generator()?;
        let mut deltas: Vec<f64> = DEFAULT_DELTAS.to_vec();
        for &d in &a.delta {
            if !(d > 0.0) || !d.is_finite() {
                return Err(InputError::Invalid(format!("--delta {d} must be positive")).into());
            }
            if !deltas.contains(&d) {
                deltas.push(d);
            }
        }
        let r = continuous::ct_recurrence_report(g, &deltas, RECURRENCE_HORIZON)?;
        for s in &r.sites {
            let i = site_name(s.site);
            report.flag(format!("recurrent_{i}"), s.recurrent);
            report.real(format!("integral_slope_{i}"), s.integral_slope, Provenance::Quadrature);
            for sk in &s.skeletons {
                report.flag(format!("skeleton({}).monitored_{i}", sk.delta), sk.monitored_recurrent);
                report.real(format!("skeleton({}).sjk_slope_{i}", sk.delta), sk.sjk_slope, Provenance::Analytic);
            }
            report.require(format!("agree_{i}"), s.agree);
        }
        for (d, sk) in deltas.iter().zip(&r.skeleton_reports) {
            let consistent = sk.class_consistent && sk.sites.iter().all(|s| s.consistent);
            report.require(format!("skeleton({d}).consistent"), consistent);
        }
        report.require("verdicts_agree", r.verdicts_agree);
        return Ok(());
    }
    let phi = model.walk()?.superoperator();
    let r = ergodic::recurrence_report(&phi, RECURRENCE_STEPS)?;
    for s in &r.sites {
        let i = site_name(s.site);
        report.flag(format!("monitored_recurrent_{i}"), s.monitored_recurrent);
        report.real(format!("min_return_probability_{i}"), s.min_return_probability, Provenance::Analytic);
        report.flag(format!("sjk_divergent_{i}"), s.sjk_divergent);
        report.real(format!("sjk_slope_{i}"), s.sjk_slope, Provenance::Analytic);
        report.require(format!("consistent_{i}"), s.consistent);
    }
    report.flag("irreducible", r.irreducible);
    report.require("class_consistent", r.class_consistent);
    Ok(())
}

fn simulate(a: &SimulateArgs, model: &LoadedModel, report: &mut Report) -> Result<(), CliError> {
    let from = model.site(a.from, "--from")?;
    let to = model.site(a.to, "--to")?;
    let rho = model.file.density(a.state.as_deref())?;
    if a.samples == 0 {
        return Err(InputError::Invalid("--samples must be positive".into()).into());
    }
    let (mc, analytic, method) = if let Some(lambda) = a.lambda {
        let g = model.generator()?;
        let horizon = a.horizon.unwrap_or(trajectory::DEFAULT_POISSON_HORIZON);
        let mc = trajectory::mc_poisson_hitting(g, to, from, &rho, lambda, a.samples, horizon, a.seed)?;
        let analytic = if from == to {
            None
        } else {
            Some(continuous::poisson_hitting(g, to, from, &rho, lambda)?.mean_time)
        };
        (mc.hitting, analytic, "poisson")
    } else if a.jump || model.walk.is_none() {
        let g = model.generator()?;
        let u = trajectory::uniformize(g)?;
        let horizon = a.horizon.unwrap_or(JUMP_HORIZON);
        let mc = trajectory::mc_ct_hitting(&u, to, from, &rho, a.samples, horizon, a.seed)?;
        let analytic = match continuous::ct_hitting_functionals(g) {
            Ok(f) if from == to => f.return_time(to, &rho)?,
            Ok(f) => f.hitting_time(to, from, &rho)?,
            // vertex layouts without coherence blocks
            Err(OqwError::Unsupported(_)) if from == to => continuous::ct_kac_mn(g)?.sites[to].return_time,
            Err(OqwError::Unsupported(_)) => continuous::mean_hitting_ct(g, to, from, &rho)?.value,
            Err(e) => return Err(e.into()),
        };
        (mc, Some(analytic), "jump")
    } else {
        let walk = model.walk()?;
        let phi = walk.superoperator();
        let horizon = a.horizon.unwrap_or(trajectory::DEFAULT_DISCRETE_HORIZON);
        let mc = trajectory::mc_hitting(walk, to, from, &rho, a.samples, horizon, a.seed)?;
        let analytic = if from == to {
            monitoring::mean_return_time(&phi, to, &rho)?
        } else {
            monitoring::mean_hitting_time(&phi, to, from, &rho)?
        };
        (mc, Some(analytic.value()).filter(|v| v.is_finite()), "discrete")
    };
    report.info("method", Value::Text(method.into()), Provenance::Input);
    report.real("samples", a.samples as f64, Provenance::Input);
    report.real("seed", a.seed as f64, Provenance::Input);
    report.real(
        "h_mc",
        mc.probability.mean,
        Provenance::MonteCarlo {
            std_error: mc.probability.std_error(),
        },
    );
    report.real(
        "k_mc",
        mc.mean_time.mean,
        Provenance::MonteCarlo {
            std_error: mc.mean_time.std_error(),
        },
    );
    report.real("censored", mc.censored, Provenance::MonteCarlo { std_error: 0.0 });
    if let Some(value) = analytic {
        report.real("k_analytic", value, Provenance::Analytic);
        let se = mc.mean_time.std_error();
        report.residual("k_deviation_sigmas", mc.mean_time.deviation(value), a.sigmas, Provenance::MonteCarlo {
            std_error: se,
        });
    }
    Ok(())
}

fn model_paths(args: &CheckAllArgs) -> Result<Vec<PathBuf>, InputError> {
    let roots = if args.paths.is_empty() {
        vec![PathBuf::from(BUNDLED_MODELS)]
    } else {
        args.paths.clone()
    };
    let mut files = Vec::new();
    for root in roots {
        if root.is_dir() {
            let entries = std::fs::read_dir(&root).map_err(|source| InputError::Io {
                path: root.display().to_string(),
                source,
            })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(root);
        }
    }
    Ok(files)
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Parses a declared check's arguments against the file it came from.
fn check_command(check: &Check, path: &Path) -> Result<Command, InputError> {
    let mut argv = vec!["oqw".to_string()];
    let mut it = check.args.iter();
    let sub = it
        .next()
        .ok_or_else(|| InputError::Invalid("check has empty args".into()))?;
    argv.push(sub.clone());
    argv.push(path.display().to_string());
    argv.extend(it.cloned());
    Cli::try_parse_from(&argv)
        .map(|cli| cli.command)
        .map_err(|e| InputError::Invalid(format!("check {:?}: {}", check.args, e.kind())))
}

/// Compares one declared check; returns the observed value, tolerance and verdict.
fn judge(check: &Check, report: &Report) -> (Value, Option<f64>, Provenance, bool) {
    let Some(quantity) = &check.quantity else {
        return (Value::Flag(report.passed()), None, Provenance::Analytic, report.passed());
    };
    let Some(row) = report.find(quantity) else {
        return (Value::Text(format!("missing {quantity}")), None, Provenance::Analytic, false);
    };
    let own = row.pass != Some(false);
    let (tol, ok) = match (&check.expected, row.value.as_real()) {
        (None, _) => (None, own),
        (Some(Expected::Number(want)), Some(got)) => {
            let tol = match (check.sigmas, &row.provenance) {
                (Some(s), Provenance::MonteCarlo { std_error }) => s * std_error,
                _ => check.tolerance.unwrap_or(CHECK_TOL),
            };
            (Some(tol), (got - want).abs() <= tol)
        }
        (Some(Expected::Number(_)), None) => (None, false),
        (Some(Expected::Flag(want)), _) => (None, row.value == Value::Flag(*want)),
        (Some(Expected::Word(want)), _) => (None, &row.value.render() == want),
    };
    (row.value.clone(), tol, row.provenance.clone(), ok && own)
}

fn check_all(args: &CheckAllArgs) -> Outcome {
    let files = model_paths(args)?;
    if files.is_empty() {
        return Err(InputError::Invalid("no model files found".into()).into());
    }
    let mut texts = String::new();
    let mut checked = Vec::new();
    for path in &files {
        let model = LoadedModel::from_path(path)?;
        texts.push_str(&model.digest);
        checked.push((path, model));
    }
    let mut report = Report::new(echo(&Command::CheckAll(CheckAllArgs { paths: args.paths.clone() })), crate::report::digest(&texts));
    for (path, model) in &checked {
        let name = label(path);
        let valid = run(&Command::Validate(crate::FileArg { file: (*path).clone() }), model)?;
        report.require(format!("{name}: validate"), valid.passed());
        for check in &model.file.checks {
            let what = format!(
                "{name}: {}{}",
                check.args.join(" "),
                check.quantity.as_deref().map(|q| format!(" -> {q}")).unwrap_or_default()
            );
            let command = check_command(check, path)?;
            match run(&command, model) {
                Ok(r) => {
                    let (value, tolerance, provenance, pass) = judge(check, &r);
                    report.rows.push(crate::report::Row {
                        quantity: what,
                        value,
                        tolerance,
                        provenance,
                        pass: Some(pass),
                    });
                }
                Err(e) => {
                    report.require(what, false);
                    report.note(format!("{name}: {e}"));
                }
            }
        }
    }
    let failed = report.rows.iter().filter(|r| r.pass == Some(false)).count();
    report.note(format!("{} files, {} checks, {failed} failed", checked.len(), report.rows.len()));
    Ok(report)
}
