use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const MODEL: &str = r#"
[model.signal]
kind = "linear"
basis = [{ kind = "cos", freq = 1.0 }, { kind = "sin", freq = 1.0 }]

[model.noise]
kind = "known"
profile = { offset = 0.5, terms = [{ coef = 0.2, basis = { kind = "cos", freq = 2.0 } }] }

[space]
alpha = [[-3.0, 3.0], [-3.0, 3.0]]

[theta]
alpha = [1.0, -0.5]
"#;

const SCALED: &str = r#"
[model.signal]
kind = "linear"
basis = [{ kind = "cos", freq = 1.0 }, { kind = "sin", freq = 1.0 }]

[model.noise]
kind = "scaled"
profile = { offset = 1.0, terms = [{ coef = 0.5, basis = { kind = "cos", freq = 1.0 } }] }

[space]
alpha = [[-3.0, 3.0], [-3.0, 3.0]]
beta = [[0.2, 3.0]]

[theta]
alpha = [1.0, -0.5]
beta = [0.8]
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signoise")).args(args).output().unwrap()
}

fn run_cfg(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["simulate", "estimate", "verify", "fisher", "grid"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn simulate_is_reproducible_and_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("seed = 4\n{MODEL}\n[grid]\nkind = \"uniform\"\nn = 10\nh = 0.3\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_cfg("simulate", &cfg, &a, &[]).status.success());
    assert!(run_cfg("simulate", &cfg, &b, &[]).status.success());
    let csv = fs::read_to_string(a.join("sample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("i,t_prev,t,y\n") && !csv.contains('\r'));
    assert_eq!(fs::read(a.join("sample.csv")).unwrap(), fs::read(b.join("sample.csv")).unwrap());
    let meta = json(&a.join("sample.csv.meta.json"));
    assert_eq!(meta["provenance"]["seed"], 4);
    assert_eq!(meta["provenance"]["config_digest"].as_str().unwrap().len(), 64);
    // --seed overrides the configured seed
    let c = dir.path().join("c");
    assert!(run_cfg("simulate", &cfg, &c, &["--seed", "5"]).status.success());
    assert_ne!(fs::read(a.join("sample.csv")).unwrap(), fs::read(c.join("sample.csv")).unwrap());
    assert_eq!(json(&c.join("sample.csv.meta.json"))["provenance"]["seed"], 5);
}

#[test]
fn variance_below_the_floor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = MODEL.replace("coef = 0.2", "coef = 0.6");
    let cfg = write_config(dir.path(), "c.toml", &format!("{text}\n[grid]\nkind = \"uniform\"\nn = 10\nh = 0.1\n"));
    let o = run_cfg("simulate", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("A2"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = MODEL.replace("[space]", "[space]\nalhpa = 1");
    let cfg = write_config(dir.path(), "c.toml", &format!("{text}\n[grid]\nkind = \"uniform\"\nn = 10\nh = 0.1\n"));
    let o = run_cfg("grid", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'space.alhpa'"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "d.toml", &format!("{MODEL}\n[grid]\nkind = \"uniform\"\nn = 10\nh = -0.1\n"));
    let o = run_cfg("grid", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'grid'"), "{}", stderr(&o));
}

#[test]
fn closed_form_estimate_reports_the_variance_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{MODEL}\n[grid]\nkind = \"uniform\"\nn = 400\nh = 0.1\n[estimate]\nmethod = \"mle-closed\"\n"),
    );
    let out = dir.path().join("o");
    assert!(run_cfg("simulate", &cfg, &out, &[]).status.success());
    let o = run_cfg("estimate", &cfg, &out, &["--input", out.join("sample.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&out.join("sample.estimate.json"));
    assert_eq!(doc["method"], "mle-closed");
    let var = &doc["closed_form"]["variance"];
    assert_eq!((var["rows"].as_u64(), var["cols"].as_u64()), (Some(2), Some(2)));
    assert_eq!(var["data"].as_array().unwrap().len(), 4);
    // the numeric MLE agrees with the closed form
    let o = run_cfg("estimate", &cfg, &dir.path().join("n"), &["--input", out.join("sample.csv").to_str().unwrap(), "--method", "mle"]);
    assert!(o.status.success());
    let num = json(&dir.path().join("n").join("sample.estimate.json"));
    for k in 0..2 {
        let a = doc["estimate"]["theta_hat"]["alpha"][k].as_f64().unwrap();
        let b = num["estimate"]["theta_hat"]["alpha"][k].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0));
    }
}

#[test]
fn bayes_above_the_dimension_guard_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[model.signal]
kind = "linear"
basis = [{ kind = "cos", freq = 1.0 }, { kind = "sin", freq = 1.0 }, { kind = "cos", freq = 2.0 }, { kind = "sin", freq = 2.0 }]

[model.noise]
kind = "scaled"
profile = { offset = 1.0 }

[space]
alpha = [[-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]]
beta = [[0.2, 3.0]]

[theta]
alpha = [1.0, -0.5, 0.2, 0.3]
beta = [0.8]

[grid]
kind = "uniform"
n = 200
h = 0.13

[estimate]
method = "bayes"
"#;
    let cfg = write_config(dir.path(), "c.toml", text);
    let out = dir.path().join("o");
    assert!(run_cfg("simulate", &cfg, &out, &[]).status.success());
    let o = run_cfg("estimate", &cfg, &out, &["--input", out.join("sample.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension guard"), "{}", stderr(&o));
}

#[test]
fn bayes_estimate_writes_the_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{SCALED}\n[grid]\nkind = \"uniform\"\nn = 400\nh = 0.1\n[estimate]\nmethod = \"bayes\"\n"),
    );
    let out = dir.path().join("o");
    assert!(run_cfg("simulate", &cfg, &out, &[]).status.success());
    let o = run_cfg("estimate", &cfg, &out, &["--input", out.join("sample.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&out.join("sample.estimate.json"));
    assert_eq!(doc["posterior"]["mean"]["beta"].as_array().unwrap().len(), 1);
    assert_eq!(doc["posterior"]["converged"], true);
}

#[test]
fn batch_directory_gives_one_json_per_sample_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SCALED}\n[grid]\nkind = \"uniform\"\nn = 300\nh = 0.1\n"));
    let samples = dir.path().join("samples");
    assert!(run_cfg("simulate", &cfg, &samples, &["--count", "50"]).status.success());
    let out = dir.path().join("est");
    let o = run_cfg("estimate", &cfg, &out, &["--input", samples.to_str().unwrap(), "--method", "mle"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let jsons = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".estimate.json"))
        .count();
    assert_eq!(jsons, 50);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 51);
    assert!(summary.starts_with("sample,method,converged,log_lik,theta[0],theta[1],theta[2],se[0]"));
    assert!(summary.lines().skip(1).all(|l| l.contains(",mle,true,")));
    assert_eq!(json(&out.join("summary.csv.meta.json"))["samples"], 50);
}

fn normality_config(dir: &Path, criteria: &str) -> PathBuf {
    let text = format!(
        "seed = 2\n{MODEL}\n[study]\nkind = \"normality\"\ngrid = {{ kind = \"uniform\", h = 0.1 }}\nladder = [50, 200]\nreplicates = 300\nestimators = [\"mle\", \"mle-closed\"]\n{criteria}"
    );
    write_config(dir, "normality.toml", &text)
}

#[test]
fn verify_normality_on_the_exact_gaussian_family_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = normality_config(dir.path(), "");
    let out = dir.path().join("o");
    let o = run_cfg("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&out.join("normality.json"));
    assert_eq!(report["study"], "normality");
    assert!(report["provenance"]["config_digest"].is_string());
    assert!(out.join("normality.csv.meta.json").exists());
}

#[test]
fn verify_exits_1_when_a_check_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = normality_config(dir.path(), "[study.criteria]\nvariance_sigmas = 0.0\n");
    let o = run_cfg("verify", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_reports_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = normality_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_cfg("verify", &cfg, &a, &["--workers", "1"]).status.success());
    assert!(run_cfg("verify", &cfg, &b, &["--workers", "8"]).status.success());
    for f in ["normality.json", "normality.csv", "normality.csv.meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn rate_study_with_a_single_n_ladder_is_too_short() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SCALED}\n[study]\nkind = \"rate\"\ngrid = {{ kind = \"uniform\", h = 0.1 }}\nladder = [100]\nreplicates = 100\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_cfg("verify", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ladder too short"), "{}", stderr(&o));
}

#[test]
fn lan_report_has_a_remainder_table_per_n() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SCALED}\n[study]\nkind = \"lan\"\ngrid = {{ kind = \"uniform\", h = 0.1 }}\nladder = [100, 400]\nreplicates = 200\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    let o = run_cfg("verify", &cfg, &out, &[]);
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    let report = json(&out.join("lan.json"));
    let rows = report["tables"]["rows"].as_array().unwrap();
    for n in [100, 400] {
        assert!(rows.iter().any(|r| r["n"] == n && r["mean_abs_remainder"]["value"].is_number()));
    }
}

#[test]
fn periodic_limit_reference_needs_a_periodic_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{MODEL}\n[study]\nkind = \"normality\"\ngrid = {{ kind = \"uniform\", h = 0.1 }}\nladder = [100]\nreplicates = 100\nreference = {{ kind = \"periodic-limit\", period = 0.7 }}\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_cfg("verify", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("study.reference"), "{}", stderr(&o));
}

#[test]
fn fisher_and_grid_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SCALED}\n[grid]\nkind = \"pattern\"\noffsets = [0.2, 0.45, 0.7, 1.0]\nperiod = 1.0\ncycles = 10\n[fisher]\nperiod = 1.0\npattern = [0.2, 0.45, 0.7, 1.0]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    assert!(run_cfg("fisher", &cfg, &out, &[]).status.success());
    let doc = json(&out.join("fisher.json"));
    assert_eq!(doc["n"], 40);
    assert!(doc["limit_rel_error"].as_f64().unwrap() < 1e-12);
    assert_eq!(doc["empirical"]["jp"]["rows"], 2);
    assert!(run_cfg("grid", &cfg, &out, &[]).status.success());
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 42);
    assert_eq!(json(&out.join("grid.csv.meta.json"))["n"], 40);
}
