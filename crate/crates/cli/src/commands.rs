use std::path::{Path, PathBuf};
use std::time::Instant;

use kslab_core::bounds::{self, BoundKind, ScenarioMeasure};
use kslab_core::degiorgi::{self, build_ladder_with};
use kslab_core::geometry::{io, mean, ScalarField, VectorField};
use kslab_core::model::{self, ModelSpec};
use kslab_core::solver::{self, series_csv, RunStatus, SystemState, Trajectory};
use kslab_core::stability::{self, ProbeConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, BoundName, LoadedConfig, RunConfig, SnapshotFormat, SweepCase, GENERATOR};
use crate::output::{OutputSet, MANIFEST};
use crate::CliError;

/// Options shared by every subcommand after flag resolution.
#[derive(Debug, Clone)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub time: f64,
    pub n: String,
    pub c: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
}

fn out_dir(opts: &Options, cfg: Option<&RunConfig>) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.outputs.dir.as_ref()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("kslab-out"))
}

fn seed_of(opts: &Options, cfg: &RunConfig) -> u64 {
    opts.seed.unwrap_or(cfg.initial.seed)
}

/// Config echo without the output directory, so the manifest does not depend
/// on where it was written.
fn echo(cfg: &RunConfig) -> serde_json::Value {
    let mut c = cfg.clone();
    c.outputs.dir = None;
    serde_json::to_value(&c).expect("config serializes")
}

fn header(command: &str, cfg: Option<&RunConfig>, seed: Option<u64>) -> serde_json::Value {
    let mut h = json!({
        "tool": "kslab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
    });
    if let Some(cfg) = cfg {
        h["config"] = echo(cfg);
        h["generator"] = json!({ "name": GENERATOR, "seed": seed, "used": cfg.uses_generator() });
    }
    h
}

fn merge(into: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(a), serde_json::Value::Object(b)) = (into.as_object_mut(), extra) {
        a.extend(b);
    }
}

struct Simulated {
    model: ModelSpec,
    traj: Trajectory,
    lyapunov: Option<Vec<(f64, f64)>>,
}

fn simulate(cfg: &RunConfig, seed: u64, base_dir: &Path, lyapunov_chi: Option<f64>) -> Result<Simulated, CliError> {
    let model = cfg.model()?;
    let solver_cfg = cfg.solver()?;
    let initial = cfg.initial_state(&model, seed, base_dir)?;
    let (traj, lyapunov) = match lyapunov_chi {
        Some(chi) => {
            let (t, h) = stability::run_with_lyapunov(&model, initial, &solver_cfg, chi)?;
            (t, Some(h))
        }
        None => (solver::run(&model, initial, &solver_cfg)?, None),
    };
    Ok(Simulated { model, traj, lyapunov })
}

fn write_field(out: &mut OutputSet, rel: &str, field: &ScalarField, time: f64, fmt: SnapshotFormat) -> Result<(), CliError> {
    match fmt {
        SnapshotFormat::Text => out.write(rel, io::encode_text(field, time).as_bytes()),
        SnapshotFormat::Binary => out.write(rel, &io::encode_binary(field, time)),
    }
}

/// Series CSV and snapshot files; returns the snapshot index.
fn write_trajectory(out: &mut OutputSet, cfg: &RunConfig, traj: &Trajectory) -> Result<Vec<SnapshotEntry>, CliError> {
    if cfg.outputs.series {
        out.write("series.csv", series_csv(&traj.series).as_bytes())?;
    }
    let mut index = Vec::new();
    if !cfg.outputs.snapshots {
        return Ok(index);
    }
    let ext = match cfg.outputs.format {
        SnapshotFormat::Text => "txt",
        SnapshotFormat::Binary => "bin",
    };
    for (k, st) in traj.states.iter().enumerate() {
        let name = |f: &str| format!("snapshots/{f}_{k:05}.{ext}");
        write_field(out, &name("n"), &st.n, st.time, cfg.outputs.format)?;
        write_field(out, &name("c"), &st.c, st.time, cfg.outputs.format)?;
        let w = match &st.w {
            Some(w) => {
                write_field(out, &name("w"), w, st.time, cfg.outputs.format)?;
                Some(name("w"))
            }
            None => None,
        };
        index.push(SnapshotEntry { time: st.time, n: name("n"), c: name("c"), w });
    }
    Ok(index)
}

fn run_summary(traj: &Trajectory) -> serde_json::Value {
    let last = traj.last();
    json!({
        "status": traj.status.as_str(),
        "steps": traj.steps,
        "rejections": traj.rejections,
        "final_time": last.time,
        "warnings": traj.warnings,
    })
}

fn blowup_error(traj: &Trajectory) -> CliError {
    CliError::Blowup(format!("{} at t = {:e}", RunStatus::BlowupSuspected.as_str(), traj.last().time))
}

fn require_config(loaded: Option<&LoadedConfig>) -> Result<&LoadedConfig, CliError> {
    loaded.ok_or_else(|| CliError::Config("missing --config PATH".into()))
}

pub fn cmd_run(loaded: Option<&LoadedConfig>, opts: &Options) -> Result<String, CliError> {
    let start = Instant::now();
    let loaded = require_config(loaded)?;
    let cfg = &loaded.config;
    let seed = seed_of(opts, cfg);
    let dir = out_dir(opts, Some(cfg));
    let mut out = OutputSet::create(&dir)?;
    let sim = simulate(cfg, seed, &loaded.base_dir, None)?;
    let index = write_trajectory(&mut out, cfg, &sim.traj)?;
    let mut h = header("run", Some(cfg), Some(seed));
    h["model"] = serde_json::to_value(sim.model).expect("model serializes");
    merge(&mut h, run_summary(&sim.traj));
    h["snapshots"] = serde_json::to_value(&index).expect("index serializes");
    out.finish(h, start.elapsed().as_secs_f64())?;
    if sim.traj.status == RunStatus::BlowupSuspected {
        return Err(blowup_error(&sim.traj));
    }
    Ok(format!(
        "run: {} after {} steps, t = {}, outputs in {}",
        sim.traj.status.as_str(),
        sim.traj.steps,
        sim.traj.last().time,
        dir.display()
    ))
}

struct CaseResult {
    id: String,
    overrides: Vec<(String, toml::Value)>,
    out: OutputSet,
    status: RunStatus,
    steps: usize,
    final_time: f64,
    mass_n: f64,
    linf_n: f64,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| CliError::Internal(e.into()))
}

fn run_case(case: &SweepCase, root: &Path, seed: u64, base_dir: &Path) -> Result<CaseResult, CliError> {
    let mut out = OutputSet::create(&root.join(&case.id))?;
    let sim = simulate(&case.config, seed, base_dir, None)?;
    let index = write_trajectory(&mut out, &case.config, &sim.traj)?;
    out.write_json("snapshots.json", &index)?;
    let rec = sim.traj.series.last().expect("series has the initial record");
    Ok(CaseResult {
        id: case.id.clone(),
        overrides: case.overrides.clone(),
        out,
        status: sim.traj.status,
        steps: sim.traj.steps,
        final_time: rec.t,
        mass_n: rec.mass_n,
        linf_n: rec.linf_n,
    })
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn cmd_sweep(loaded: Option<&LoadedConfig>, opts: &Options) -> Result<String, CliError> {
    let start = Instant::now();
    let loaded = require_config(loaded)?;
    let cases = config::sweep_cases(loaded)?;
    let seed = seed_of(opts, &loaded.config);
    let dir = out_dir(opts, Some(&loaded.config));
    let mut out = OutputSet::create(&dir)?;
    let results: Vec<CaseResult> = pool(opts.jobs)?
        .install(|| cases.par_iter().map(|c| run_case(c, &dir, seed, &loaded.base_dir)).collect::<Result<_, _>>())?;

    let keys: Vec<String> = loaded.config.sweep.as_ref().map(|s| s.axis.iter().map(|a| a.key.clone()).collect()).unwrap_or_default();
    let mut csv = format!("case,{},status,steps,final_time,mass_n,linf_n\n", keys.join(","));
    let mut blown = Vec::new();
    let mut summary = Vec::new();
    for r in results {
        let vals: Vec<String> = r.overrides.iter().map(|(_, v)| value_text(v)).collect();
        csv.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e}\n",
            r.id,
            vals.join(","),
            r.status.as_str(),
            r.steps,
            r.final_time,
            r.mass_n,
            r.linf_n
        ));
        if r.status == RunStatus::BlowupSuspected {
            blown.push(r.id.clone());
        }
        summary.push(json!({ "case": r.id, "status": r.status.as_str(), "overrides": r.overrides.iter().map(|(k, v)| (k.clone(), value_text(v))).collect::<std::collections::BTreeMap<_, _>>() }));
        out.absorb(&r.id, r.out);
    }
    out.write("sweep.csv", csv.as_bytes())?;
    let mut h = header("sweep", Some(&loaded.config), Some(seed));
    h["cases"] = json!(summary);
    out.finish(h, start.elapsed().as_secs_f64())?;
    if !blown.is_empty() {
        return Err(CliError::Blowup(format!("{} in {}", RunStatus::BlowupSuspected.as_str(), blown.join(", "))));
    }
    Ok(format!("sweep: {} cases, outputs in {}", cases.len(), dir.display()))
}

/// Rebuilds a trajectory from a `run` output directory.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let missing = |k: &str| CliError::Config(format!("{}: missing key `{k}`", path.display()));
    let model: ModelSpec = serde_json::from_value(manifest.get("model").cloned().ok_or_else(|| missing("model"))?)
        .map_err(|e| CliError::Config(format!("{}: model: {e}", path.display())))?;
    let index: Vec<SnapshotEntry> =
        serde_json::from_value(manifest.get("snapshots").cloned().ok_or_else(|| missing("snapshots"))?)
            .map_err(|e| CliError::Config(format!("{}: snapshots: {e}", path.display())))?;
    if index.is_empty() {
        return Err(CliError::Precondition(format!("{} lists no snapshots", path.display())));
    }
    let status = match manifest.get("status").and_then(|s| s.as_str()) {
        Some("converged") => RunStatus::Converged,
        Some(s) if s == RunStatus::BlowupSuspected.as_str() => RunStatus::BlowupSuspected,
        _ => RunStatus::Completed,
    };
    let read = |rel: &str| io::read_field(&dir.join(rel)).map(|(f, _)| f).map_err(CliError::from);
    let mut states = Vec::with_capacity(index.len());
    for e in &index {
        let n = read(&e.n)?;
        let c = read(&e.c)?;
        let w = e.w.as_deref().map(read).transpose()?;
        let u = if model.tau == 1 { model.advection.build(*n.grid()) } else { VectorField::zeros(*n.grid()) };
        states.push(SystemState { time: e.time, n, c, w, u });
    }
    let series = states.iter().map(|s| solver::SeriesRecord::measure(s, 0.0, 0.0)).collect();
    Ok(Trajectory { model, states, series, status, warnings: Vec::new(), steps: 0, rejections: 0 })
}

fn window_of(cfg: &RunConfig, t_end: f64) -> (f64, f64) {
    let t0 = cfg.diagnostics.t0.unwrap_or(t_end);
    (t0, cfg.diagnostics.t_hat.unwrap_or(0.5 * t0))
}

pub fn cmd_diagnose(loaded: Option<&LoadedConfig>, opts: &Options, trajectory: Option<&Path>) -> Result<String, CliError> {
    let start = Instant::now();
    let (traj, seed, cfg_ref) = match (trajectory, loaded) {
        (Some(dir), l) => (load_trajectory(dir)?, None, l.map(|l| &l.config)),
        (None, Some(l)) => {
            let seed = seed_of(opts, &l.config);
            (simulate(&l.config, seed, &l.base_dir, None)?.traj, Some(seed), Some(&l.config))
        }
        (None, None) => return Err(CliError::Config("diagnose needs --config PATH or --trajectory DIR".into())),
    };
    let diag = match cfg_ref {
        Some(c) => c.diagnostics.clone(),
        None => Default::default(),
    };
    let t_end = traj.last().time;
    let (t0, t_hat) = match cfg_ref {
        Some(c) => window_of(c, t_end),
        None => (t_end, 0.5 * t_end),
    };
    let k0 = match diag.k0 {
        Some(k) => k,
        None => traj.model.kf()?,
    };
    let ladder = build_ladder_with(k0, t0, t_hat, diag.tau_hat.unwrap_or(t_hat), diag.ladder_sigma, diag.depth)?;
    let report = degiorgi::diagnose(&traj, &ladder, diag.r, traj.model.alpha_minus())?;

    let dir = out_dir(opts, cfg_ref);
    let mut out = OutputSet::create(&dir)?;
    out.write_json("diagnostics.json", &report)?;
    let mut csv = String::from("j,k_j,gamma_len,y,level_set_measure_mid,lhs,rhs\n");
    for r in &report.records {
        let side = report.caccioppoli.get(r.j);
        csv.push_str(&format!(
            "{},{:e},{:e},{},{:e},{},{}\n",
            r.j,
            r.k_j,
            r.gamma_len,
            r.y.map(|y| format!("{y:e}")).unwrap_or_default(),
            r.level_set_measure_mid,
            side.map(|s| format!("{:e}", s.lhs())).unwrap_or_default(),
            side.map(|s| format!("{:e}", s.rhs())).unwrap_or_default(),
        ));
    }
    out.write("levels.csv", csv.as_bytes())?;
    let mut h = header("diagnose", cfg_ref, seed);
    h["model"] = serde_json::to_value(traj.model).expect("model serializes");
    h["source"] = match trajectory {
        Some(_) => json!("trajectory"),
        None => json!("config"),
    };
    out.finish(h, start.elapsed().as_secs_f64())?;
    Ok(format!("diagnose: C_cal = {:e} over {} levels, outputs in {}", report.c_cal, report.caccioppoli.len(), dir.display()))
}

/// Indices of the holdout set: a seeded shuffle, then the first
/// `round(fraction n)` entries, kept within `1..n` when the fraction is positive.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, CliError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CliError::Config(format!("holdout fraction {fraction} must lie in [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = if fraction == 0.0 { 0 } else { ((fraction * n as f64).round() as usize).clamp(1, n - 1) };
    let mut hold = idx[..k].to_vec();
    hold.sort_unstable();
    Ok(hold)
}

pub fn cmd_certify(loaded: Option<&LoadedConfig>, opts: &Options, holdout: Option<f64>) -> Result<String, CliError> {
    let start = Instant::now();
    let loaded = require_config(loaded)?;
    let cases = config::sweep_cases(loaded)?;
    if cases.len() < 2 {
        return Err(CliError::Precondition(format!("certify needs at least 2 scenarios, got {}", cases.len())));
    }
    let seed = seed_of(opts, &loaded.config);
    let kind_of = |cfg: &RunConfig| -> Result<BoundKind, CliError> {
        match cfg.diagnostics.bound {
            BoundName::Theorem1 => Ok(BoundKind::Theorem1),
            BoundName::Theorem2 => cfg
                .diagnostics
                .bound_r
                .map(|r| BoundKind::Theorem2 { r })
                .ok_or_else(|| CliError::Config("missing key `diagnostics.bound_r` (needed for theorem2)".into())),
        }
    };
    let kind = kind_of(&loaded.config)?;
    let measures: Vec<ScenarioMeasure> = pool(opts.jobs)?.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let sim = simulate(&case.config, seed, &loaded.base_dir, None)?;
                if sim.traj.status == RunStatus::BlowupSuspected {
                    return Err(CliError::Precondition(format!("scenario {}: {}", case.id, blowup_error(&sim.traj))));
                }
                let (t0, t_hat) = window_of(&case.config, case.config.solver.t_end);
                Ok(bounds::measure_scenario(&case.id, &sim.traj, t0, t_hat, kind_of(&case.config)?)?)
            })
            .collect::<Result<_, CliError>>()
    })?;
    let fraction = holdout.unwrap_or(loaded.config.diagnostics.holdout_fraction);
    let hold = holdout_split(measures.len(), fraction, seed)?;
    let (mut calib, mut held) = (Vec::new(), Vec::new());
    for (i, m) in measures.into_iter().enumerate() {
        if hold.contains(&i) {
            held.push(m);
        } else {
            calib.push(m);
        }
    }
    let report = bounds::certify(kind, &calib, &held)?;

    let dir = out_dir(opts, Some(&loaded.config));
    let mut out = OutputSet::create(&dir)?;
    out.write_json("certificate.json", &report)?;
    out.write("certificates.csv", bounds::certificates_csv(&report).as_bytes())?;
    let mut h = header("certify", Some(&loaded.config), Some(seed));
    h["holdout_fraction"] = json!(fraction);
    h["holdout"] = json!(held.iter().map(|m| m.id.clone()).collect::<Vec<_>>());
    h["holdout_ok"] = json!(report.holdout_ok);
    out.finish(h, start.elapsed().as_secs_f64())?;
    Ok(format!(
        "certify: C = {:e} from {} scenarios, holdout {} ({}), outputs in {}",
        report.c_calibrated,
        calib.len(),
        held.len(),
        if report.holdout_ok { "all margins nonnegative" } else { "negative margin" },
        dir.display()
    ))
}

pub fn cmd_stability(loaded: Option<&LoadedConfig>, opts: &Options) -> Result<String, CliError> {
    let start = Instant::now();
    let loaded = require_config(loaded)?;
    let cfg = &loaded.config;
    let diag = &cfg.diagnostics;
    let seed = seed_of(opts, cfg);
    let sim = simulate(cfg, seed, &loaded.base_dir, diag.lyapunov_chi)?;
    let traj = &sim.traj;
    let dir = out_dir(opts, Some(cfg));
    let mut out = OutputSet::create(&dir)?;
    if cfg.outputs.series {
        out.write("series.csv", series_csv(&traj.series).as_bytes())?;
    }

    let mass = stability::mass_series(traj);
    let mut report = json!({
        "status": traj.status.as_str(),
        "mass": { "verdict": mass.verdict, "passed": mass.passed },
    });
    let initial_mean = mean(&traj.states[0].n);
    match stability::equilibrium(&sim.model, initial_mean) {
        Ok(eq) => {
            let conv = stability::convergence_report(traj, &eq);
            let mut csv = String::from("t,dev_n,dev_c\n");
            for d in stability::deviation_series(traj, &eq) {
                csv.push_str(&format!("{:e},{:e},{:e}\n", d.t, d.dev_n, d.dev_c));
            }
            out.write("deviation.csv", csv.as_bytes())?;
            report["equilibrium"] = json!(eq);
            report["convergence"] = json!(conv);
        }
        Err(e) => report["equilibrium"] = json!({ "unavailable": e.to_string() }),
    }
    if let (Some(series), Some(chi)) = (&sim.lyapunov, diag.lyapunov_chi) {
        let mono = stability::count_increases(series, diag.lyapunov_after, diag.lyapunov_rel_tol);
        let mut csv = String::from("t,h\n");
        for (t, h) in series {
            csv.push_str(&format!("{t:e},{h:e}\n"));
        }
        out.write("lyapunov.csv", csv.as_bytes())?;
        report["lyapunov"] = json!({ "chi": chi, "monotonicity": mono });
    }
    if let Some(w) = &diag.holder_window {
        if w.len() != 2 {
            return Err(CliError::Config("diagnostics.holder_window needs 2 entries".into()));
        }
        let est = stability::holder_exponent(traj, (w[0], w[1]), &diag.holder_space_scales, &diag.holder_time_scales)?;
        report["holder"] = json!(est);
    }
    if let Some(masses) = &diag.probe_masses {
        let grid = cfg.grid()?;
        let probe = ProbeConfig { cells: grid.nx(), dim: grid.dim(), solver: cfg.solver()? };
        let sigma = sim.model.production.sigma;
        report["threshold"] = json!(stability::smallness_threshold_probe(sigma, masses, &probe)?);
    }
    out.write_json("stability.json", &report)?;
    let mut h = header("stability", Some(cfg), Some(seed));
    h["model"] = serde_json::to_value(sim.model).expect("model serializes");
    merge(&mut h, run_summary(traj));
    out.finish(h, start.elapsed().as_secs_f64())?;
    if traj.status == RunStatus::BlowupSuspected {
        return Err(blowup_error(traj));
    }
    Ok(format!("stability: {}, outputs in {}", traj.status.as_str(), dir.display()))
}

pub fn cmd_check(loaded: Option<&LoadedConfig>, opts: &Options) -> Result<String, CliError> {
    let start = Instant::now();
    let loaded = require_config(loaded)?;
    let cfg = &loaded.config;
    let model = cfg.model()?;
    let report = model::structural_check(&model, cfg.diagnostics.check_samples)?;
    let dir = out_dir(opts, Some(cfg));
    let mut out = OutputSet::create(&dir)?;
    out.write_json("check.json", &report)?;
    let mut h = header("check", Some(cfg), None);
    h["model"] = serde_json::to_value(model).expect("model serializes");
    h["passed"] = json!(report.passed());
    out.finish(h, start.elapsed().as_secs_f64())?;
    let failed: Vec<&str> = report.items.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect();
    if failed.is_empty() {
        Ok(format!("check: {} items passed", report.items.len()))
    } else {
        Err(CliError::Precondition(format!("structural check failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_split_is_seeded_and_sized() {
        let a = holdout_split(12, 1.0 / 3.0, 5).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, holdout_split(12, 1.0 / 3.0, 5).unwrap());
        assert_ne!(a, holdout_split(12, 1.0 / 3.0, 6).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(holdout_split(2, 0.9, 1).unwrap().len(), 1);
        assert_eq!(holdout_split(5, 0.01, 1).unwrap().len(), 1);
        assert!(holdout_split(5, 0.0, 1).unwrap().is_empty());
        assert!(holdout_split(5, 1.0, 1).is_err());
    }
}
