use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"
schema = "pcurve/1"

[problem]
n = 3
p = 2
t = 0.0
grid = [8, 8, 8]
f = 1.0

[problem.background]
kind = "flat"

[problem.tensor]
mode = "isotropic"
level = 0.5
"#;

const MANUFACTURED: &str = r#"
[manufactured]
mode = "discrete"
u_star = { terms = [
  { amp = 0.05, wave = "cos", freq = [1, 0, 0] },
  { amp = 0.05, wave = "cos", freq = [0, 1, 0] },
  { amp = 0.05, wave = "cos", freq = [0, 0, 1] },
] }
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn pcurve(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcurve"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("PCURVE_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn base_solve_writes_zero_solution() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "base.toml", BASE);
    let out = dir.path().join("out");
    let o = pcurve(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("u.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 512);
    assert!(values.iter().all(|&v| v == 0.0));
    for f in [
        "u.pcrv",
        "trace.json",
        "estimates.json",
        "summary.txt",
        "summary.json",
        "run.jsonl",
        "certification.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["c0_check"], true);
    assert_eq!(summary["final_residual"], 0.0);
}

#[test]
fn t_at_least_one_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "t1.toml", &BASE.replace("t = 0.0", "t = 1.0"));
    let o = pcurve(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t < 1"), "{}", stderr(&o));
}

#[test]
fn validation_failures_exit_two() {
    let dir = TempDir::new().unwrap();
    let cases = [
        BASE.replace("n = 3", "n = 7"),
        BASE.replace("p = 2", "p = 4"),
        BASE.replace("grid = [8, 8, 8]", "grid = [8, 8]"),
        BASE.replace("f = 1.0", "f = -1.0"),
        BASE.replace(
            "schema = \"pcurve/1\"",
            "schema = \"pcurve/1\"\nunknown = 3",
        ),
        BASE.replace("pcurve/1", "pcurve/9"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), text);
        let o = pcurve(&["solve"], &cfg, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", stderr(&o));
    }
    let o = pcurve(
        &["solve"],
        &dir.path().join("missing.toml"),
        &dir.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manufactured_solve_reports_error() {
    let dir = TempDir::new().unwrap();
    let text = BASE
        .replace("f = 1.0\n", "")
        .replace("[8, 8, 8]", "[12, 12, 12]")
        + MANUFACTURED;
    let cfg = write_config(dir.path(), "m.toml", &text);
    let out = dir.path().join("out");
    let o = pcurve(&["solve"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("sup |u - u*|"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["manufactured_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn uncertified_background_exits_three() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "neg.toml",
        &BASE.replace("level = 0.5", "level = -0.5"),
    );
    for cmd in ["certify", "solve"] {
        let o = pcurve(&[cmd], &cfg, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", stderr(&o));
    }
    let cfg = write_config(dir.path(), "ok.toml", BASE);
    let out = dir.path().join("cert");
    let o = pcurve(&["certify"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("certification.json").exists());
}

#[test]
fn verify_default_matrix_passes_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.toml",
        "schema = \"pcurve/1\"\nseed = 11\n[verify]\nsamples = 200\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = pcurve(&["verify"], &cfg, &a);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o2 = Command::new(env!("CARGO_BIN_EXE_pcurve"))
        .args(["verify", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(o.stdout, o2.stdout);
    assert_eq!(
        std::fs::read(a.join("verify.json")).unwrap(),
        std::fs::read(b.join("verify.json")).unwrap()
    );
}

#[test]
fn fault_injection_exits_five_with_replay() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "fi.toml",
        "schema = \"pcurve/1\"\n[verify]\ndims = [3]\nsamples = 20\nfault_injection = \"corrupt-gradient\"\n",
    );
    let out = dir.path().join("out");
    let o = pcurve(&["verify", "--seed", "5"], &cfg, &out);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let sample: pcurve::estimates::ViolationSample =
        serde_json::from_str(&std::fs::read_to_string(out.join("violation_replay.json")).unwrap())
            .unwrap();
    assert_eq!(sample.seed, 5);
    let replay = pcurve::estimates::replay_violation(&sample).unwrap();
    assert_eq!(replay.violations.total(), 0);
}

#[test]
fn convergence_needs_two_resolutions() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("f = 1.0\n", "")
        + &MANUFACTURED.replace("discrete", "continuum")
        + "[convergence]\nresolutions = [8]\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = pcurve(&["converge"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_table_has_order_column() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("f = 1.0\n", "")
        + &MANUFACTURED.replace("discrete", "continuum")
        + "[convergence]\nresolutions = [8, 16]\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = pcurve(&["converge"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("convergence.json")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 2);
    let (ec, ef) = (
        rows[0]["sup_error"].as_f64().unwrap(),
        rows[1]["sup_error"].as_f64().unwrap(),
    );
    let order = rows[1]["order"].as_f64().unwrap();
    assert!((order - (ec / ef).log2()).abs() < 1e-12);
    assert!(out.join("convergence.txt").exists());
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "base.toml", BASE);
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_pcurve"))
        .args(["certify", "--config"])
        .arg(&cfg)
        .env("PCURVE_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("certification.json").exists());
}
