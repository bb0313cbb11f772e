use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lps_core::{KernelSpec, QuadratureSpec};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn lps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lps")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    lps(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn parse_csv(text: &str) -> Vec<Vec<f64>> {
    text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

/// g* for two atoms straight from the definition, kernel values from
/// `KernelSpec::eval` and nothing else from the library's operator code.
fn two_atom_g_star(x: f64) -> f64 {
    let atoms = [(0.0, 1.0), (1.0, 0.5)];
    let spec = KernelSpec::poisson(1.0, 1.0, 2);
    let quad = QuadratureSpec {
        t_min: 0.05,
        t_max: 64.0,
        nodes_per_decade: 16,
        prune_tol: 0.0,
    };
    let (m, lambda) = (1.0, 6.0);
    let mut sq = 0.0;
    for node in quad.nodes() {
        let t = node.t;
        for &(z, wz) in &atoms {
            let mut theta = 0.0;
            for &(y1, w1) in &atoms {
                for &(y2, w2) in &atoms {
                    theta += spec.eval(&[z], &[&[y1], &[y2]], t).unwrap() * w1 * w2;
                }
            }
            let weight = (t / (t + (x - z).abs())).powf(m * lambda);
            sq += node.w * weight * theta * theta * wz / t.powf(m);
        }
    }
    sq.sqrt()
}

#[test]
fn golden_two_atom_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_atoms.json");
    let golden = std::fs::read_to_string(configs().join("two_atoms.golden.csv")).unwrap();

    let o = run("eval", &cfg, &dir.path().join("oracle"), &["--oracle"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let oracle = std::fs::read_to_string(dir.path().join("oracle/eval.csv")).unwrap();
    assert_eq!(oracle, golden);

    for row in parse_csv(&golden) {
        let want = two_atom_g_star(row[0]);
        assert!((row[1] - want).abs() <= 1e-12 * want, "x = {}: {} vs {}", row[0], row[1], want);
    }

    let o = run("eval", &cfg, &dir.path().join("fast"), &[]);
    assert_eq!(code(&o), 0);
    let fast = parse_csv(&std::fs::read_to_string(dir.path().join("fast/eval.csv")).unwrap());
    for (a, b) in fast.iter().zip(parse_csv(&golden)) {
        assert_eq!(a[0], b[0]);
        assert!((a[1] - b[1]).abs() <= 1e-12 * b[1]);
    }
}

#[test]
fn resolved_config_is_written_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("eval", &configs().join("two_atoms.json"), dir.path(), &[]);
    assert_eq!(code(&o), 0);
    let resolved = dir.path().join("config.resolved.json");
    let text = std::fs::read_to_string(&resolved).unwrap();
    assert!(text.contains("\"quadrature\""));
    assert!(text.contains("\"goodness\""));
    let again = run("eval", &resolved, &dir.path().join("again"), &[]);
    assert_eq!(code(&again), 0);
    assert_eq!(
        std::fs::read(dir.path().join("eval.csv")).unwrap(),
        std::fs::read(dir.path().join("again/eval.csv")).unwrap()
    );
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"measure\": {\"n\": 1, \"atoms\": [[0, 1]]},\n \"kernel\": ").unwrap();
    let o = run("eval", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn unknown_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    std::fs::write(
        &cfg,
        r#"{"measure": {"n": 1, "atoms": [[0, 1]]}, "kernel": {"m": 1, "alpha": 1, "kappa": 2}, "lamda": 6}"#,
    )
    .unwrap();
    let o = run("eval", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("eval", &dir.path().join("nope.json"), &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run("eval", &configs().join("two_atoms.json"), &blocker.join("sub"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_parameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lambda.json");
    std::fs::write(
        &cfg,
        r#"{"measure": {"n": 1, "atoms": [[0, 1]]}, "kernel": {"m": 1, "alpha": 1, "kappa": 2}, "lambda": 0.5}"#,
    )
    .unwrap();
    let o = run("eval", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    let o = run("eval", &configs().join("two_atoms.json"), &dir.path().join("t"), &["--threads", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn overflow_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("huge.json");
    std::fs::write(
        &cfg,
        r#"{"measure": {"n": 1, "atoms": [[0, 1], [1, 1]]}, "functions": [[1e300, 1e300], [1e300, 1e300]],
            "kernel": {"m": 1, "alpha": 1, "kappa": 2}, "quadrature": {"t_min": 0.1, "t_max": 10}}"#,
    )
    .unwrap();
    let o = run("eval", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_point_list_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(
        &cfg,
        r#"{"measure": {"n": 2, "atoms": [[0, 0, 1]]}, "kernel": {"m": 2, "alpha": 1, "kappa": 2}, "points": []}"#,
    )
    .unwrap();
    let o = run("eval", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("out/eval.csv")).unwrap(), "x1,x2,g_star\n");
}

#[test]
fn verify_lemma_u_on_bundled_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("verify-lemma", &configs().join("lemmas.json"), dir.path(), &["--lemma", "U"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("U.json")).unwrap()).unwrap();
    assert_eq!(report["lemma"], "U");
    assert_eq!(report["pass"], true);
    let rollup = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(rollup.starts_with("lemma,pass,C,calibration_max,test_max"));
    assert_eq!(rollup.lines().count(), 3);

    let o = run("verify-lemma", &configs().join("lemmas.json"), &dir.path().join("x"), &["--lemma", "Z"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn failed_criterion_exits_3() {
    // C0 forced to zero makes ζ0 = 0, so every atom outside H_Q is in S_Q
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bp.json");
    std::fs::write(
        &cfg,
        r#"{"measure": {"n": 1, "atoms": [[0.1, 1], [0.2, 1], [0.3, 1]]}, "kernel": {"m": 1, "alpha": 1, "kappa": 2},
            "local": {"cube": {"center": [0.2], "side": 0.5}, "c0": 0.0, "exceptional": "empty"}}"#,
    )
    .unwrap();
    let o = run("big-piece", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("out/big_piece.json").exists());
}

#[test]
fn czdecomp_prints_realized_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("czdecomp", &configs().join("clusters.json"), dir.path(), &[]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("C-Z-5"));
    assert!(stdout.contains("C-Z-6"));
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("clusters.json");
    let before = std::fs::read(&cfg).unwrap();
    let o = run("whitney", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&cfg).unwrap(), before);
}
