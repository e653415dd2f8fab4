//! Run configuration: a TOML file with the sections `domain`, `grid`, `model`,
//! `initial`, `solver` and the optional `diagnostics`, `outputs`, `sweep`.

use std::path::{Path, PathBuf};

use kslab_core::geometry::{gaussian_bump, io, Grid, ScalarField};
use kslab_core::model::{
    self, AdvectionSpec, DiffusionSpec, HaptotaxisSpec, ModelSpec, ModelTag, ProductionSpec, SensitivitySpec,
    SourceSpec,
};
use kslab_core::solver::{DtPolicy, SolverConfig, SystemState, DEFAULT_SAFETY};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the generator behind every randomized initial field.
pub const GENERATOR: &str = "ChaCha8Rng";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub initial: InitialConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cells {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Cells,
}

/// A preset with optional parameters, or a full set of component tables.
/// Component tables given next to a preset replace the preset's component.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_exp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kf_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub production: Option<ProductionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advection: Option<AdvectionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haptotaxis: Option<HaptotaxisSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldInit {
    Constant {
        value: f64,
    },
    /// Gaussian scaled to the requested mean, plus a constant offset.
    Bump {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        width: f64,
        mean: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `mean + amplitude cos(kx pi x/Lx) cos(ky pi y/Ly)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        #[serde(default = "unit_modes")]
        modes: Vec<u32>,
    },
    /// `mean (1 + amplitude phi)` with `phi` a random cosine series scaled to
    /// `max |phi| = 1`.
    Random {
        mean: f64,
        amplitude: f64,
        #[serde(default = "four")]
        modes: u32,
    },
    File {
        path: String,
    },
}

fn unit_modes() -> Vec<u32> {
    vec![1, 1]
}

fn four() -> u32 {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub seed: u64,
    pub n: FieldInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<FieldInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<FieldInit>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicyName {
    Fixed,
    CflAdaptive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_initial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_policy: Option<DtPolicyName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positivity_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picard_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_ceiling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rejections: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    Theorem1,
    Theorem2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// End of the observation window; defaults to `solver.t_end`.
    pub t0: Option<f64>,
    /// Window length; defaults to `t0 / 2`.
    pub t_hat: Option<f64>,
    pub tau_hat: Option<f64>,
    /// Base level; defaults to `K_f`.
    pub k0: Option<f64>,
    pub ladder_sigma: f64,
    pub depth: usize,
    /// Integrability exponent of `Y_j`.
    pub r: f64,
    pub bound: BoundName,
    /// Integrability exponent of the second-regime bound.
    pub bound_r: Option<f64>,
    pub holdout_fraction: f64,
    pub lyapunov_chi: Option<f64>,
    pub lyapunov_after: f64,
    pub lyapunov_rel_tol: f64,
    pub holder_window: Option<Vec<f64>>,
    pub holder_space_scales: Vec<usize>,
    pub holder_time_scales: Vec<usize>,
    pub probe_masses: Option<Vec<f64>>,
    pub check_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            t0: None,
            t_hat: None,
            tau_hat: None,
            k0: None,
            ladder_sigma: 0.5,
            depth: 5,
            r: 4.0,
            bound: BoundName::Theorem1,
            bound_r: None,
            holdout_fraction: 0.25,
            lyapunov_chi: None,
            lyapunov_after: 0.0,
            lyapunov_rel_tol: 1e-12,
            holder_window: None,
            holder_space_scales: vec![2, 4, 8],
            holder_time_scales: vec![1, 2, 4],
            probe_masses: None,
            check_samples: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Text,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub series: bool,
    pub snapshots: bool,
    pub format: SnapshotFormat,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self { dir: None, series: true, snapshots: true, format: SnapshotFormat::Text }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted key into the config, e.g. `model.sigma` or `initial.n.mean`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Vec<SweepAxis>,
}

/// A parsed config together with its raw table (kept for sweep overrides) and
/// the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub table: toml::Table,
    pub base_dir: PathBuf,
}

pub fn parse(text: &str, origin: &str) -> Result<(RunConfig, toml::Table), CliError> {
    let table: toml::Table =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {}", e.to_string().trim_end())))?;
    let config = from_table(&table, origin)?;
    Ok((config, table))
}

pub fn from_table(table: &toml::Table, origin: &str) -> Result<RunConfig, CliError> {
    let config: RunConfig = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {}", e.to_string().trim_end())))?;
    config.grid()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let (config, table) = parse(&text, &path.display().to_string())?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, table, base_dir })
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid, CliError> {
        let dim = self.domain.dim;
        if dim != 1 && dim != 2 {
            return Err(config_err(format!("domain.dim = {dim} must be 1 or 2")));
        }
        let lengths = self.domain.lengths.clone().unwrap_or_else(|| vec![1.0; dim]);
        if lengths.len() != dim {
            return Err(config_err(format!("domain.lengths needs {dim} entries, got {}", lengths.len())));
        }
        let cells = match &self.grid.cells {
            Cells::Uniform(n) => vec![*n; dim],
            Cells::PerAxis(v) => v.clone(),
        };
        if cells.len() != dim {
            return Err(config_err(format!("grid.cells needs {dim} entries, got {}", cells.len())));
        }
        let grid = if dim == 1 {
            Grid::new_1d(lengths[0], cells[0])
        } else {
            Grid::new_2d(lengths[0], lengths[1], cells[0], cells[1])
        };
        grid.map_err(|e| config_err(format!("grid: {e}")))
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        self.model.resolve()
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let s = &self.solver;
        let d = SolverConfig::default();
        let dt_policy = match s.dt_policy.unwrap_or(DtPolicyName::CflAdaptive) {
            DtPolicyName::Fixed => {
                if s.safety.is_some() {
                    return Err(config_err("solver.safety only applies to dt_policy = \"cfl_adaptive\""));
                }
                DtPolicy::Fixed
            }
            DtPolicyName::CflAdaptive => DtPolicy::CflAdaptive { safety: s.safety.unwrap_or(DEFAULT_SAFETY) },
        };
        let cfg = SolverConfig {
            dt_initial: s.dt_initial.unwrap_or(d.dt_initial),
            dt_policy,
            t_end: s.t_end,
            snapshot_interval: s.snapshot_interval.unwrap_or(d.snapshot_interval),
            positivity_floor: s.positivity_floor.unwrap_or(d.positivity_floor),
            implicit_tolerance: s.implicit_tolerance.unwrap_or(d.implicit_tolerance),
            implicit_max_iters: s.implicit_max_iters.unwrap_or(d.implicit_max_iters),
            eps_reg: s.eps_reg.unwrap_or(d.eps_reg),
            picard_sweeps: s.picard_sweeps.unwrap_or(d.picard_sweeps),
            blowup_ceiling: s.blowup_ceiling.unwrap_or(d.blowup_ceiling),
            max_rejections: s.max_rejections.unwrap_or(d.max_rejections),
            converge_tol: s.converge_tol.unwrap_or(d.converge_tol),
        };
        cfg.validate().map_err(|e| config_err(format!("solver: {e}")))?;
        Ok(cfg)
    }

    /// Initial state; `seed` drives every `random` field.
    pub fn initial_state(&self, model: &ModelSpec, seed: u64, base_dir: &Path) -> Result<SystemState, CliError> {
        let grid = self.grid()?;
        let init = &self.initial;
        let n = build_field(&init.n, grid, seed, 0, base_dir, "initial.n")?;
        let c = match &init.c {
            Some(f) => build_field(f, grid, seed, 1, base_dir, "initial.c")?,
            None => ScalarField::zeros(grid),
        };
        let w = match (&init.w, model.haptotaxis.is_some()) {
            (Some(f), true) => Some(build_field(f, grid, seed, 2, base_dir, "initial.w")?),
            (None, true) => return Err(config_err("missing key `initial.w` (the model has haptotaxis)")),
            (Some(_), false) => return Err(config_err("initial.w given but the model has no haptotaxis")),
            (None, false) => None,
        };
        let state = SystemState::new(model, n, c, w).map_err(|e| config_err(format!("initial: {e}")))?;
        state.validate(model).map_err(|e| config_err(format!("initial: {e}")))?;
        Ok(state)
    }

    /// Whether any initial field draws from the generator.
    pub fn uses_generator(&self) -> bool {
        let i = &self.initial;
        [Some(&i.n), i.c.as_ref(), i.w.as_ref()].into_iter().flatten().any(|f| matches!(f, FieldInit::Random { .. }))
    }
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<ModelSpec, CliError> {
        let params = [
            ("sigma", self.sigma),
            ("r", self.r),
            ("mu", self.mu),
            ("gamma_exp", self.gamma_exp),
            ("p", self.p),
            ("chi", self.chi),
            ("xi", self.xi),
        ];
        let allowed: &[&str] = match self.preset.as_deref() {
            Some("example_a") => &["sigma"],
            Some("example_b") => &["r", "mu", "gamma_exp"],
            Some("example_c") => &["p", "chi", "xi", "mu"],
            Some("example_d") => &["p"],
            _ => &[],
        };
        if let Some((name, _)) = params.iter().find(|(n, v)| v.is_some() && !allowed.contains(n)) {
            let preset = self.preset.as_deref().unwrap_or("(none)");
            return Err(config_err(format!("model.{name} does not apply to preset {preset}")));
        }
        let mut spec = match self.preset.as_deref() {
            Some("example_a") => ModelSpec::example_a(self.sigma.unwrap_or(0.5)),
            Some("example_b") => {
                ModelSpec::example_b(self.r.unwrap_or(1.0), self.mu.unwrap_or(4.0), self.gamma_exp.unwrap_or(1.0))
            }
            Some("example_c") => ModelSpec::example_c(
                self.p.unwrap_or(3.0),
                self.chi.unwrap_or(1.0),
                self.xi.unwrap_or(1.0),
                self.mu.unwrap_or(1.0),
            ),
            Some("example_d") => ModelSpec::example_d(self.p.unwrap_or(2.5)),
            Some("heat") => ModelSpec::heat(),
            Some(name) => model::preset(name).map_err(|e| config_err(format!("model.preset: {e}")))?,
            None => {
                ModelSpec {
                    tag: ModelTag::Custom,
                    diffusion: need(self.diffusion, "diffusion")?,
                    sensitivity: need(self.sensitivity, "sensitivity")?,
                    source: need(self.source, "source")?,
                    production: need(self.production, "production")?,
                    tau: 0,
                    advection: AdvectionSpec::zero(),
                    haptotaxis: None,
                    kf_margin: model::KF_MARGIN,
                }
            }
        };
        let mut replaced = false;
        macro_rules! replace {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    replaced |= spec.$field != v;
                    spec.$field = v;
                }
            };
        }
        replace!(diffusion);
        replace!(sensitivity);
        replace!(source);
        replace!(production);
        replace!(advection);
        if let Some(h) = self.haptotaxis {
            replaced |= spec.haptotaxis != Some(h);
            spec.haptotaxis = Some(h);
        }
        if let Some(t) = self.tau {
            replaced |= spec.tau != t;
            spec.tau = t;
        }
        if let Some(m) = self.kf_margin {
            spec.kf_margin = m;
        }
        if replaced {
            spec.tag = ModelTag::Custom;
        }
        spec.validate().map_err(|e| config_err(format!("model: {e}")))?;
        Ok(spec)
    }
}

fn need<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| config_err(format!("missing key `model.{key}` (required without a preset)")))
}

fn build_field(
    init: &FieldInit,
    grid: Grid,
    seed: u64,
    stream: u64,
    base_dir: &Path,
    key: &str,
) -> Result<ScalarField, CliError> {
    let (lx, ly) = (grid.extent(0), if grid.dim() == 2 { grid.extent(1) } else { 1.0 });
    let pi = std::f64::consts::PI;
    let field = match init {
        FieldInit::Constant { value } => ScalarField::constant(grid, *value),
        FieldInit::Bump { center, width, mean, offset } => {
            let c = center.clone().unwrap_or_else(|| vec![0.5 * lx, 0.5 * ly]);
            if c.len() != 2 {
                return Err(config_err(format!("{key}.center needs 2 entries")));
            }
            if !(*width > 0.0 && *mean > 0.0) {
                return Err(config_err(format!("{key}: bump needs width > 0 and mean > 0")));
            }
            gaussian_bump(grid, (c[0], c[1]), *width, *mean).map(|v| v + offset)
        }
        FieldInit::Cosine { mean, amplitude, modes } => {
            if modes.len() != 2 {
                return Err(config_err(format!("{key}.modes needs 2 entries")));
            }
            let (kx, ky) = (modes[0] as f64, modes[1] as f64);
            ScalarField::from_fn(grid, |x, y| {
                let fy = if grid.dim() == 2 { (ky * pi * y / ly).cos() } else { 1.0 };
                mean + amplitude * (kx * pi * x / lx).cos() * fy
            })
        }
        FieldInit::Random { mean, amplitude, modes } => {
            if !(0.0..1.0).contains(amplitude) || *modes == 0 {
                return Err(config_err(format!("{key}: random field needs 0 <= amplitude < 1 and modes >= 1")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let ky_max = if grid.dim() == 2 { *modes } else { 1 };
            let mut terms = Vec::new();
            for kx in 0..*modes {
                for ky in 0..ky_max {
                    if kx + ky == 0 {
                        continue;
                    }
                    let a: f64 = rng.gen_range(-1.0..1.0) / (1.0 + (kx * kx + ky * ky) as f64);
                    terms.push((kx as f64, ky as f64, a));
                }
            }
            let phi = ScalarField::from_fn(grid, |x, y| {
                terms.iter().map(|(kx, ky, a)| a * (kx * pi * x / lx).cos() * (ky * pi * y / ly).cos()).sum()
            });
            let scale = phi.max_abs();
            let phi = if scale > 0.0 { phi.map(|v| v / scale) } else { phi };
            phi.map(|v| mean * (1.0 + amplitude * v))
        }
        FieldInit::File { path } => {
            let full = base_dir.join(path);
            let (f, _) = io::read_field(&full).map_err(|e| config_err(format!("{key}: {}: {e}", full.display())))?;
            if f.grid() != &grid {
                return Err(config_err(format!("{key}: grid of {} differs from the configured grid", full.display())));
            }
            f
        }
    };
    Ok(field)
}

/// Sets a dotted key in a TOML table, creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("sweep key `{key}` is malformed")));
    }
    let (last, path) = parts.split_last().expect("nonempty split");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("sweep key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// One sweep case: an id, the overrides applied and the resulting config.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub id: String,
    pub overrides: Vec<(String, toml::Value)>,
    pub config: RunConfig,
}

/// Cartesian product of the sweep axes, first axis slowest.
pub fn sweep_cases(loaded: &LoadedConfig) -> Result<Vec<SweepCase>, CliError> {
    let sweep = loaded.config.sweep.as_ref().ok_or_else(|| config_err("missing key `sweep` (no sweep axes)"))?;
    if sweep.axis.is_empty() || sweep.axis.iter().any(|a| a.values.is_empty()) {
        return Err(config_err("sweep.axis entries need at least one value each"));
    }
    let mut base = loaded.table.clone();
    base.remove("sweep");
    let total: usize = sweep.axis.iter().map(|a| a.values.len()).product();
    let mut cases = Vec::with_capacity(total);
    for k in 0..total {
        let mut rest = k;
        let mut picks = vec![0; sweep.axis.len()];
        for (slot, axis) in picks.iter_mut().zip(&sweep.axis).rev() {
            *slot = rest % axis.values.len();
            rest /= axis.values.len();
        }
        let mut table = base.clone();
        let mut overrides = Vec::new();
        for (axis, &i) in sweep.axis.iter().zip(&picks) {
            set_key(&mut table, &axis.key, axis.values[i].clone())?;
            overrides.push((axis.key.clone(), axis.values[i].clone()));
        }
        let id = format!("case_{k:03}");
        let config = from_table(&table, &id)?;
        cases.push(SweepCase { id, overrides, config });
    }
    Ok(cases)
}
