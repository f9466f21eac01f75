use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heatbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatbound")).args(args).env_remove("HEATBOUND_THREADS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", dir.to_str().unwrap()]);
    heatbound(&all)
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn list_covers_every_bound() {
    let o = heatbound(&["list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().any(|l| l.starts_with("liyau ")));
    assert!(text.lines().any(|l| l.starts_with("gradbound --kind th41")));
    for op in ["th11", "liyau_upper", "liyau_lower", "est_o1", "est_o2", "th41", "harnack"] {
        assert!(text.contains(op), "{op}");
    }
}

#[test]
fn gaussian_initial_liyau_is_tight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "liyau", "gaussian": "initial", "sigma2": 1.0, "dim": 1}"#).unwrap();
    let out = dir.path().join("out");
    let o = run_in(&out, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rows(&out.join("checks.csv"));
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!(&r[0], "liyau_upper");
        let margin: f64 = r[4].parse().unwrap();
        assert!(margin.abs() < 1e-12, "{r:?}");
        assert_eq!(&r[5], "true");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(summary["timestamp"].is_string());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["bsde", "--seed", "11", "--paths", "2000", "--dt", "0.02"];
    assert_eq!(code(&run_in(&a, &args)), 0);
    assert_eq!(code(&run_in(&b, &args)), 0);
    for f in ["checks.csv", "estimates.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // a different seed changes the Monte Carlo rows
    let c = dir.path().join("c");
    assert_eq!(code(&run_in(&c, &["bsde", "--seed", "12", "--paths", "2000", "--dt", "0.02"])), 0);
    assert_ne!(fs::read(a.join("checks.csv")).unwrap(), fs::read(c.join("checks.csv")).unwrap());
}

#[test]
fn estimates_accumulate_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["flow", "--seed", "3", "--paths", "50", "--dt", "0.01"];
    assert_eq!(code(&run_in(dir.path(), &args)), 0);
    let first = rows(&dir.path().join("estimates.csv")).len();
    let checks = fs::read(dir.path().join("checks.csv")).unwrap();
    assert_eq!(code(&run_in(dir.path(), &args)), 0);
    assert_eq!(rows(&dir.path().join("estimates.csv")).len(), 2 * first);
    assert_eq!(fs::read(dir.path().join("checks.csv")).unwrap(), checks);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // stochastic experiments need a seed, and nothing is written without one
    assert_eq!(code(&run_in(&out, &["bsde"])), 2);
    assert!(!out.exists());

    let cfg = dir.path().join("typo.json");
    fs::write(&cfg, r#"{"experiment": "solve", "gird": 64}"#).unwrap();
    assert_eq!(code(&run_in(&out, &["--config", cfg.to_str().unwrap()])), 2);

    assert_eq!(code(&run_in(&out, &["nonsense"])), 2);
    assert_eq!(code(&run_in(&out, &["gradbound", "--kind", "th99"])), 2);
    assert_eq!(code(&run_in(&out, &["solve", "--dt", "-1"])), 2);
    assert_eq!(code(&run_in(&out, &["solve", "--experiment", "liyau"])), 2);
    // est_o2 refuses a transform that is not admissible
    let cfg = dir.path().join("psi.json");
    fs::write(&cfg, r#"{"experiment": "gradbound", "kind": "est_o2", "psi": "power:2", "grid": 32}"#).unwrap();
    assert_eq!(code(&run_in(&out, &["--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&heatbound(&["frobnicate"])), 2);
}

#[test]
fn failed_checks_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["psi", "--kind", "sqrt"]);
    assert_eq!(code(&o), 1);
    let rows = rows(&dir.path().join("checks.csv"));
    assert_eq!(&rows[0][5], "false");
    // the Heisenberg frame has no finite first structure constant
    let cfg = dir.path().join("h.json");
    fs::write(&cfg, r#"{"experiment": "conditions", "fields": {"family": "heisenberg"}, "samples": 32}"#).unwrap();
    let out = dir.path().join("h");
    assert_eq!(code(&run_in(&out, &["--config", cfg.to_str().unwrap(), "--seed", "1"])), 1);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "gradbound", "kind": "th11", "grid": 16, "times": [0.5]}"#).unwrap();
    let out = dir.path().join("out");
    let o = run_in(&out, &["--config", cfg.to_str().unwrap(), "--kind", "th41", "--grid", "64"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["kind"], "th41");
    assert_eq!(summary["config"]["grid"], 64);
    assert_eq!(&rows(&out.join("checks.csv"))[0][0], "th41");
}

#[test]
fn every_gradient_bound_passes_on_smooth_data() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["th11", "est_o1", "est_o2", "th41"] {
        let out = dir.path().join(kind);
        let o = run_in(&out, &["gradbound", "--kind", kind, "--grid", "64"]);
        assert_eq!(code(&o), 0, "{kind}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let cfg = dir.path().join("k.json");
    fs::write(&cfg, r#"{"experiment": "gradbound", "kind": "th41", "k": 1.0, "dim": 2, "grid": 32}"#).unwrap();
    assert_eq!(code(&run_in(&dir.path().join("k"), &["--config", cfg.to_str().unwrap()])), 0);
}

#[test]
fn remaining_experiments_run() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["solve", "--grid", "64"],
        &["harnack"],
        &["reciprocal", "--seed", "2", "--paths", "500"],
        &["conditions", "--seed", "2"],
        &["psi", "--kind", "log"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let o = run_in(&dir.path().join(i.to_string()), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("0").join("field.csv").exists());
}

#[test]
fn bsde_bmo_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["bsde", "--seed", "5", "--paths", "20000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rows(&dir.path().join("checks.csv"));
    let bmo = rows.iter().find(|r| &r[0] == "bmo_norm").unwrap();
    assert_eq!(bmo[2].parse::<f64>().unwrap(), 2.0);
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_heatbound"))
            .args(["run", "harnack", "--out", dir.path().to_str().unwrap()])
            .env("HEATBOUND_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("1")), 0);
    assert_eq!(code(&run("0")), 2);
}
