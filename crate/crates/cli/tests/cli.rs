use std::path::{Path, PathBuf};
use std::process::Command;

use oqw_cli::model::{self, ModelFile};
use oqw_cli::{LoadedModel, BUNDLED_MODELS, EXIT_CHECK_FAILED, EXIT_HYPOTHESIS, EXIT_INPUT, EXIT_PASS};
use oqw_core::catalog;
use oqw_core::linalg::max_abs;

fn bundled(name: &str) -> PathBuf {
    Path::new(BUNDLED_MODELS).join(format!("{name}.json"))
}

struct Run {
    stdout: String,
    stderr: String,
    code: i32,
}

fn oqw(args: &[&str]) -> Run {
    oqw_env(args, &[])
}

fn oqw_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oqw"));
    cmd.args(args).env_remove("OQW_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
        code: out.status.code().unwrap(),
    }
}

/// Value column of a CSV row.
fn csv_value(csv: &str, quantity: &str) -> String {
    csv::Reader::from_reader(csv.as_bytes())
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == quantity)
        .unwrap_or_else(|| panic!("{quantity} missing from\n{csv}"))[1]
        .to_string()
}

fn csv_number(csv: &str, quantity: &str) -> f64 {
    csv_value(csv, quantity).parse().unwrap()
}

fn bundled_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(BUNDLED_MODELS)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("oqw-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn model_files_round_trip() {
    for path in bundled_files() {
        let (file, _) = ModelFile::read(&path).unwrap();
        let again = ModelFile::parse(&file.to_json()).unwrap();
        assert_eq!(file, again, "{}", path.display());
        assert_eq!(file.to_json(), again.to_json());
    }
    for walk in [catalog::two_site_nonunital(), catalog::three_site_pauli(), catalog::flip_chain()] {
        let file = model::walk_file(&walk);
        let parsed = ModelFile::parse(&file.to_json()).unwrap();
        assert_eq!(parsed.walk().unwrap().unwrap(), walk);
    }
}

#[test]
fn bundled_files_encode_the_reference_models() {
    let pairs = [
        ("nonunital-two-site", catalog::two_site_nonunital()),
        ("unital-three-site", catalog::three_site_unital()),
        ("irreducible-two-site", catalog::two_site_irreducible()),
        ("complete-two-site", catalog::two_site_complete()),
        ("rotation-hopping", catalog::rotation_hopping()),
        ("collapse-hopping", catalog::collapse_hopping()),
        ("pauli-three-site", catalog::three_site_pauli()),
        ("flip-chain", catalog::flip_chain()),
    ];
    for (name, walk) in pairs {
        let loaded = LoadedModel::from_path(&bundled(name)).unwrap();
        let phi = loaded.walk().unwrap().superoperator();
        // decimal files round the irrational entries to the nearest double
        assert!(max_abs(&(phi.matrix - walk.superoperator().matrix)) <= 1e-15, "{name}");
    }
    let q = LoadedModel::from_path(&bundled("four-vertex-chain")).unwrap();
    let reference = oqw_core::continuous::GeneratorModel::classical_q(&catalog::four_vertex_qmatrix()).unwrap();
    assert_eq!(q.generator().unwrap().matrix(), reference.matrix());
}

#[test]
fn validate_reports_unitality() {
    let run = oqw(&["--format", "csv", "validate", bundled("nonunital-two-site").to_str().unwrap()]);
    assert_eq!(run.code, EXIT_PASS);
    assert_eq!(csv_value(&run.stdout, "trace_preserving"), "true");
    assert_eq!(csv_value(&run.stdout, "unital"), "false");

    let run = oqw(&["--format", "csv", "validate", bundled("cycle-3").to_str().unwrap()]);
    assert_eq!(run.code, EXIT_PASS);
    assert_eq!(csv_value(&run.stdout, "kind"), "graph");
    assert_eq!(csv_number(&run.stdout, "generator.trace_defect"), 0.0);
}

#[test]
fn malformed_files_are_input_errors() {
    let wrong_block = temp_file(
        "wrong-block.json",
        r#"{"format_version": 1, "kind": "oqw", "sites": 2, "internal_dim": 2,
            "blocks": {"1,1": [[[1, 0]]]}}"#,
    );
    let run = oqw(&["validate", wrong_block.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_INPUT);
    assert!(run.stderr.contains("block 1,1 is 1x1"), "{}", run.stderr);

    let syntax = temp_file("syntax.json", "{\"format_version\": 1,\n \"kind\": \"oqw\"\n \"sites\": 2}");
    let run = oqw(&["validate", syntax.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_INPUT);
    assert!(run.stderr.contains("line 3"), "{}", run.stderr);

    let not_tp = temp_file(
        "not-trace-preserving.json",
        r#"{"format_version": 1, "kind": "oqw", "sites": 2, "internal_dim": 1,
            "blocks": {"1,1": [[[0.5, 0]]], "2,1": [[[0.5, 0]]], "1,2": [[[1, 0]]]}}"#,
    );
    let run = oqw(&["validate", not_tp.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_CHECK_FAILED);
    assert!(run.stdout.contains("FAIL"));

    let unknown = temp_file("unknown.json", r#"{"format_version": 1, "kind": "oqw", "sites": 1, "colour": 3}"#);
    assert_eq!(oqw(&["validate", unknown.to_str().unwrap()]).code, EXIT_INPUT);
    let version = temp_file("version.json", r#"{"format_version": 9, "kind": "graph", "sites": 3}"#);
    assert_eq!(oqw(&["validate", version.to_str().unwrap()]).code, EXIT_INPUT);
    assert_eq!(oqw(&["validate", "/nonexistent/model.json"]).code, EXIT_INPUT);

    let path = bundled("nonunital-two-site");
    let run = oqw(&["hitting", path.to_str().unwrap(), "--from", "1", "--to", "2", "--state", "nope"]);
    assert_eq!(run.code, EXIT_INPUT);
    assert!(run.stderr.contains("unknown state"));
    let run = oqw(&["hitting", path.to_str().unwrap(), "--from", "3", "--to", "2", "--state", "E11"]);
    assert_eq!(run.code, EXIT_INPUT);
    assert_eq!(oqw(&["hitting", path.to_str().unwrap(), "--to", "2"]).code, EXIT_INPUT);
}

#[test]
fn hitting_modes() {
    let run = oqw(&[
        "--format", "csv", "hitting", bundled("nonunital-two-site").to_str().unwrap(),
        "--from", "1", "--to", "2", "--state", "E11",
    ]);
    assert_eq!(run.code, EXIT_PASS);
    assert!((csv_number(&run.stdout, "h") - 1.0).abs() < 1e-10);
    assert!((csv_number(&run.stdout, "k") - 2.0).abs() < 1e-10);

    let run = oqw(&[
        "--format", "csv", "hitting", bundled("rotation-hopping").to_str().unwrap(),
        "--from", "1", "--to", "2", "--state", "E11", "--mode", "poisson", "--lambda", "2",
    ]);
    assert_eq!(run.code, EXIT_PASS);
    assert!((csv_number(&run.stdout, "tau_h") - 2.0).abs() < 1e-8);
    assert!((csv_number(&run.stdout, "p_h") - 1.0).abs() < 1e-10);

    let run = oqw(&[
        "--format", "csv", "hitting", bundled("four-vertex-chain").to_str().unwrap(),
        "--from", "4", "--to", "1", "--mode", "ct-limit",
    ]);
    assert_eq!(run.code, EXIT_PASS);
    assert!((csv_number(&run.stdout, "tau_limit") - 2.375).abs() < 1e-6);

    let run = oqw(&[
        "hitting", bundled("rotation-hopping").to_str().unwrap(),
        "--from", "1", "--to", "2", "--state", "E11", "--mode", "poisson",
    ]);
    assert_eq!(run.code, EXIT_INPUT);
}

#[test]
fn hypothesis_violation_exit_code() {
    let identity = temp_file(
        "identity.json",
        r#"{"format_version": 1, "kind": "oqw", "sites": 2, "internal_dim": 1,
            "blocks": {"1,1": [[[1, 0]]], "2,2": [[[1, 0]]]}, "generator": "phi_minus_identity"}"#,
    );
    let run = oqw(&[
        "hitting", identity.to_str().unwrap(), "--from", "1", "--to", "2", "--mode", "poisson", "--lambda", "1",
    ]);
    assert_eq!(run.code, EXIT_HYPOTHESIS);
    assert!(run.stderr.contains("hypothesis violated"), "{}", run.stderr);
}

#[test]
fn stationary_formula_and_kac() {
    let path = bundled("nonunital-two-site");
    let run = oqw(&["--format", "csv", "mhtf", path.to_str().unwrap(), "--which", "2"]);
    assert_eq!(run.code, EXIT_PASS);
    assert!((csv_number(&run.stdout, "E_pi(T1)") - 1.5).abs() < 1e-8);
    assert!((csv_number(&run.stdout, "E_pi(T2)") - 2.5555).abs() < 1e-3);

    let run = oqw(&["--format", "csv", "stationary", path.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_PASS);
    // complex entries are written as re+imi
    let entry = csv_value(&run.stdout, "pi_1[1,2]");
    assert!(entry.ends_with('i') && entry.contains("+"), "{entry}");
    let (re, _) = entry.split_once('+').unwrap();
    assert!((re.parse::<f64>().unwrap() - 1.0 / 9.0).abs() < 1e-12);

    let run = oqw(&["--format", "csv", "kac", bundled("path-3").to_str().unwrap(), "--ct"]);
    assert_eq!(run.code, EXIT_PASS);
    assert!((csv_number(&run.stdout, "return_time_2") - 2.0).abs() < 1e-10);

    // the nonunital walk is not irreducible, so Kac does not apply
    let run = oqw(&["kac", path.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_CHECK_FAILED);
}

#[test]
fn recurrence_on_the_cycle() {
    let run = oqw(&["--format", "csv", "recurrence", bundled("cycle-3").to_str().unwrap(), "--delta", "0.5"]);
    assert_eq!(run.code, EXIT_PASS);
    for i in 1..=3 {
        assert_eq!(csv_value(&run.stdout, &format!("recurrent_{i}")), "true");
    }
    assert_eq!(csv_value(&run.stdout, "verdicts_agree"), "true");
}

#[test]
fn simulate_matches_analytic_and_is_reproducible() {
    let path = bundled("nonunital-two-site");
    let args = [
        "--format", "csv", "simulate", path.to_str().unwrap(), "--from", "1", "--to", "2", "--state", "E11",
        "--samples", "100000", "--seed", "7",
    ];
    let first = oqw(&args);
    assert_eq!(first.code, EXIT_PASS);
    let provenance = first.stdout.lines().find(|l| l.starts_with("k_mc,")).unwrap();
    let se: f64 = provenance.rsplit_once("mc±").unwrap().1.parse().unwrap();
    assert!((csv_number(&first.stdout, "k_mc") - 2.0).abs() <= 3.0 * se);

    let second = oqw_env(&args, &[("OQW_THREADS", "2")]);
    assert_eq!(first.stdout, second.stdout, "output must not depend on the thread count");
    assert_eq!(oqw_env(&args, &[("OQW_THREADS", "0")]).code, EXIT_INPUT);
}

#[test]
fn csv_output_is_stable() {
    let path = bundled("pauli-three-site");
    let args = ["--format", "csv", "mhtf", path.to_str().unwrap(), "--which", "ct", "--state", "E11"];
    let a = oqw(&args);
    let b = oqw(&args);
    assert_eq!(a.code, EXIT_PASS);
    assert_eq!(a.stdout.as_bytes(), b.stdout.as_bytes());
    assert_eq!(a.stdout.lines().next(), Some("quantity,value,tolerance,provenance"));
}

#[test]
fn check_all_passes_on_bundled_models() {
    let first = oqw(&["--format", "csv", "check-all"]);
    assert_eq!(first.code, EXIT_PASS, "{}{}", first.stdout, first.stderr);
    let rows = first.stdout.lines().count() - 1;
    assert!(rows >= bundled_files().len() * 2);
    let second = oqw(&["--format", "csv", "check-all"]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn check_all_reports_failed_declared_checks() {
    let file = temp_file(
        "wrong-expectation.json",
        r#"{"format_version": 1, "kind": "graph", "sites": 3, "edges": [[1, 2], [2, 3]],
            "checks": [{"args": ["hitting", "--from", "1", "--to", "2", "--mode", "ct-limit"],
                        "quantity": "tau_limit", "expected": 3.0, "tolerance": 1e-4}]}"#,
    );
    let run = oqw(&["check-all", file.to_str().unwrap()]);
    assert_eq!(run.code, EXIT_CHECK_FAILED);
    assert!(run.stdout.contains("FAIL"));
}
