use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
[domain]
dim = 2

[grid]
cells = 16

[model]
preset = "example_a"
sigma = 0.5

[initial.n]
kind = "bump"
width = 0.2
mean = 0.1

[solver]
t_end = 0.2
snapshot_interval = 0.05
"#;

fn kslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kslab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_in(tmp: &Path, cmd: &str, text: &str) -> (Output, std::path::PathBuf) {
    let cfg = write_config(tmp, &format!("{cmd}.toml"), text);
    let out = tmp.join(format!("{cmd}_out"));
    let o = kslab(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    (o, out)
}

#[test]
fn run_writes_series_snapshots_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_in(tmp.path(), "run", BASE);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    for f in ["manifest.json", "series.csv", "timing.txt", "snapshots/n_00000.txt", "snapshots/c_00004.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "completed");
    assert_eq!(m["generator"]["name"], "ChaCha8Rng");
    assert_eq!(m["snapshots"].as_array().unwrap().len(), 5);
    assert!(m["files"].as_array().unwrap().iter().all(|f| f["path"] != "timing.txt"));
    assert!(m.get("wall_seconds").is_none());
}

#[test]
fn missing_required_key_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run_in(tmp.path(), "run", &BASE.replace("t_end = 0.2\n", ""));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t_end"), "{}", stderr(&o));

    let no_solver = BASE.split("[solver]").next().unwrap().to_string();
    let (o, _) = run_in(tmp.path(), "run", &no_solver);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solver"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        BASE.replace("\"example_a\"", "\"example_z\""),
        BASE.replace("sigma = 0.5", "sigma = 0.5\nmu = 1.0"),
        BASE.replace("cells = 16", "cells = [16, 16, 16]"),
        BASE.replace("width = 0.2", "width = 0.2\ncolour = 1"),
        "not = [valid".to_string(),
    ];
    for text in cases {
        let (o, _) = run_in(tmp.path(), "run", &text);
        assert_eq!(o.status.code(), Some(2), "{text}\n{}", stderr(&o));
    }
    let o = kslab(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn haptotaxis_without_w_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE.replace("preset = \"example_a\"\nsigma = 0.5", "preset = \"example_c\"");
    let (o, _) = run_in(tmp.path(), "run", &text);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("initial.w"), "{}", stderr(&o));
}

#[test]
fn blowup_exits_three_with_status() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run_in(tmp.path(), "run", &format!("{BASE}blowup_ceiling = 0.05\n"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("finite-time-blow-up suspected"), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "finite-time-blow-up suspected");
}

#[test]
fn diagnose_surfaces_snapshot_density_preconditions() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, run_out) = run_in(tmp.path(), "run", BASE);
    assert_eq!(o.status.code(), Some(0));
    let diag_out = tmp.path().join("diag");
    let o = kslab(&["diagnose", "--trajectory", run_out.to_str().unwrap(), "--out", diag_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("snapshots inside the cutoff"), "{}", stderr(&o));
}

#[test]
fn diagnose_reports_levels_on_a_dense_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("mean = 0.1", "mean = 0.3\ncenter = [0.45, 0.55]")
        .replace("width = 0.2", "width = 0.08")
        .replace("t_end = 0.2\nsnapshot_interval = 0.05", "t_end = 0.01\nsnapshot_interval = 2e-5\ndt_initial = 2e-5")
        + "\n[diagnostics]\nt0 = 0.01\nt_hat = 0.008\ndepth = 4\n";
    let (o, out) = run_in(tmp.path(), "diagnose", &text);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(rep["caccioppoli"].as_array().unwrap().len(), 4);
    assert!(rep["c_cal"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(out.join("levels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn certify_needs_two_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let one = format!("{BASE}\n[[sweep.axis]]\nkey = \"initial.n.mean\"\nvalues = [0.1]\n");
    let (o, _) = run_in(tmp.path(), "certify", &one);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("at least 2 scenarios"), "{}", stderr(&o));

    let three = format!("{BASE}\n[[sweep.axis]]\nkey = \"initial.n.mean\"\nvalues = [0.1, 0.15, 0.2]\n");
    let (o, out) = run_in(tmp.path(), "certify", &three);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("certificate.json")).unwrap()).unwrap();
    let certs = rep["certificates"].as_array().unwrap();
    assert_eq!(certs.len(), 3);
    assert_eq!(certs.iter().filter(|c| c["holdout"] == true).count(), 1);
}

#[test]
fn sweep_lists_every_case() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{BASE}\n[[sweep.axis]]\nkey = \"model.sigma\"\nvalues = [0.3, 0.7]\n\n[[sweep.axis]]\nkey = \"initial.n.mean\"\nvalues = [0.05, 0.1, 0.2]\n"
    );
    let (o, out) = run_in(tmp.path(), "sweep", &text);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("case_000,0.3,0.05,"));
    assert!(lines[6].starts_with("case_005,0.7,0.2,"));
    assert!(out.join("case_003/series.csv").is_file());
}

#[test]
fn stability_reports_conservation_and_lyapunov() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[diagnostics]\nlyapunov_chi = 1.0\n");
    let (o, out) = run_in(tmp.path(), "stability", &text);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("stability.json")).unwrap()).unwrap();
    assert_eq!(rep["mass"]["passed"], true);
    assert_eq!(rep["mass"]["verdict"]["kind"], "conservation");
    assert!((rep["equilibrium"]["n_star"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(rep["lyapunov"]["monotonicity"]["violations"], 0);
    assert!(out.join("deviation.csv").is_file() && out.join("lyapunov.csv").is_file());
}

#[test]
fn check_passes_presets_and_rejects_the_affine_control() {
    let tmp = tempfile::tempdir().unwrap();
    for preset in ["example_a", "example_b", "example_c", "example_d", "general"] {
        let text = BASE.replace("preset = \"example_a\"\nsigma = 0.5", &format!("preset = \"{preset}\""));
        let (o, _) = run_in(tmp.path(), "check", &text);
        assert_eq!(o.status.code(), Some(0), "{preset}: {}", stderr(&o));
    }
    let affine = BASE.replace(
        "preset = \"example_a\"\nsigma = 0.5",
        "preset = \"example_a\"\n\n[model.sensitivity]\nform = \"affine\"\nb0 = 1.0\nintercept = 0.5",
    );
    let (o, _) = run_in(tmp.path(), "check", &affine);
    assert_ne!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let loaded = kslab_cli::config::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            loaded.config.model().unwrap();
            loaded.config.solver().unwrap();
            count += 1;
        }
    }
    assert!(count >= 3);
}
