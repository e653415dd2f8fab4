//! Positivity-preserving semi-implicit time integration.
//!
//! Each step updates the signal implicitly, the haptotactic matrix exactly,
//! and the density by explicit upwind transport, a lagged-coefficient implicit
//! diffusion solve and one linearly implicit reaction step.

mod cg;
mod step;
mod weak;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gradient, lq_norm, quadrature, Grid, ScalarField, VectorField, DIV_TOL};
use crate::model::ModelSpec;

pub use cg::{solve as cg_solve, CgOutcome, ShiftedDiffusion};
pub use step::{mass, step, transport_rate, try_step, w_update, Rejection, StepInfo};
pub use weak::{weak_residual, BumpTestFunction, WeakResidual};

pub const DEFAULT_EPS_REG: f64 = 1e-6;
pub const DEFAULT_SAFETY: f64 = 0.4;
pub const BLOWUP_CEILING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DtPolicy {
    Fixed,
    CflAdaptive { safety: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dt_initial: f64,
    pub dt_policy: DtPolicy,
    pub t_end: f64,
    pub snapshot_interval: f64,
    pub positivity_floor: f64,
    pub implicit_tolerance: f64,
    pub implicit_max_iters: usize,
    pub eps_reg: f64,
    pub picard_sweeps: usize,
    pub blowup_ceiling: f64,
    pub max_rejections: usize,
    /// A completed run is labeled converged when the last step's rate of
    /// change falls below this (relative to `max(1, |n|_inf)`).
    pub converge_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt_initial: 1e-2,
            dt_policy: DtPolicy::CflAdaptive { safety: DEFAULT_SAFETY },
            t_end: 1.0,
            snapshot_interval: 0.1,
            positivity_floor: 0.0,
            implicit_tolerance: 1e-10,
            implicit_max_iters: 5000,
            eps_reg: DEFAULT_EPS_REG,
            picard_sweeps: 1,
            blowup_ceiling: BLOWUP_CEILING,
            max_rejections: 20,
            converge_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt_initial > 0.0) {
            return bad(format!("dt_initial = {} must be positive", self.dt_initial));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if !(self.snapshot_interval > 0.0) {
            return bad(format!("snapshot_interval = {} must be positive", self.snapshot_interval));
        }
        if !(self.implicit_tolerance > 0.0) {
            return bad("implicit_tolerance must be positive".into());
        }
        if !(self.positivity_floor >= 0.0) {
            return bad("positivity_floor must be nonnegative".into());
        }
        if let DtPolicy::CflAdaptive { safety } = self.dt_policy {
            if !(safety > 0.0 && safety <= 1.0) {
                return bad(format!("CFL safety {safety} not in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub n: ScalarField,
    pub c: ScalarField,
    pub w: Option<ScalarField>,
    pub u: VectorField,
}

impl SystemState {
    /// Initial state with the model's prescribed velocity field.
    pub fn new(model: &ModelSpec, n: ScalarField, c: ScalarField, w: Option<ScalarField>) -> Result<Self> {
        n.same_grid(&c)?;
        if let Some(w) = &w {
            n.same_grid(w)?;
        }
        let u = if model.tau == 1 { model.advection.build(*n.grid()) } else { VectorField::zeros(*n.grid()) };
        Ok(Self { time: 0.0, n, c, w, u })
    }

    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        self.n.check_density()?;
        self.c.check_density()?;
        match (&self.w, &model.haptotaxis) {
            (Some(w), Some(_)) => w.check_density()?,
            (None, Some(_)) => return Err(Error::Precondition("haptotaxis enabled but no w field".into())),
            (Some(_), None) => return Err(Error::Precondition("w field given without haptotaxis".into())),
            (None, None) => {}
        }
        self.u.ensure_solenoidal(DIV_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub t: f64,
    pub dt: f64,
    pub mass_n: f64,
    pub linf_n: f64,
    pub l2_n: f64,
    pub linf_c: f64,
    pub sup_grad_c: f64,
    pub min_n: f64,
    pub clamp_mag: f64,
}

impl SeriesRecord {
    pub fn measure(state: &SystemState, dt: f64, clamp_mag: f64) -> Self {
        Self {
            t: state.time,
            dt,
            mass_n: quadrature(&state.n),
            linf_n: state.n.max_abs(),
            l2_n: lq_norm(&state.n, 2.0).expect("q = 2"),
            linf_c: state.c.max_abs(),
            sup_grad_c: gradient(&state.c).magnitude().max(),
            min_n: state.n.min(),
            clamp_mag,
        }
    }
}

pub const SERIES_HEADER: &str = "t,dt,mass_n,linf_n,l2_n,linf_c,sup_grad_c,min_n,clamp_mag";

pub fn series_csv(series: &[SeriesRecord]) -> String {
    let mut s = String::from(SERIES_HEADER);
    s.push('\n');
    for r in series {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.t, r.dt, r.mass_n, r.linf_n, r.l2_n, r.linf_c, r.sup_grad_c, r.min_n, r.clamp_mag
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Converged,
    #[serde(rename = "finite-time-blow-up suspected")]
    BlowupSuspected,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Converged => "converged",
            RunStatus::BlowupSuspected => "finite-time-blow-up suspected",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub model: ModelSpec,
    pub states: Vec<SystemState>,
    pub series: Vec<SeriesRecord>,
    pub status: RunStatus,
    pub warnings: Vec<String>,
    pub steps: usize,
    pub rejections: usize,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &SystemState {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Snapshots with `a <= t <= b`.
    pub fn window(&self, a: f64, b: f64) -> impl Iterator<Item = &SystemState> {
        self.states.iter().filter(move |s| s.time >= a && s.time <= b)
    }
}

pub fn run(model: &ModelSpec, initial: SystemState, cfg: &SolverConfig) -> Result<Trajectory> {
    run_with_observer(model, initial, cfg, |_, _| {})
}

/// Runs to `t_end`, calling `observer` after every accepted step.
pub fn run_with_observer(
    model: &ModelSpec,
    initial: SystemState,
    cfg: &SolverConfig,
    mut observer: impl FnMut(&SystemState, &StepInfo),
) -> Result<Trajectory> {
    model.validate()?;
    cfg.validate()?;
    initial.validate(model)?;
    let grid = *initial.grid();
    let mut warnings = model.warnings(grid.dim());
    if model.tau == 0 && !matches!(model.advection.form, crate::model::AdvectionForm::Zero) {
        warnings.push("advection generator ignored because tau = 0".into());
    }

    let t_end = cfg.t_end;
    let mut series = vec![SeriesRecord::measure(&initial, 0.0, 0.0)];
    let mut states = vec![initial.clone()];
    let mut state = initial;
    // Snapshot times are multiples of the interval, so a run resumed from a
    // nonzero time keeps the same lattice.
    let mut snap_index = (state.time / cfg.snapshot_interval * (1.0 + 1e-12)).floor() as u64 + 1;
    let next_snap = |k: u64| (k as f64 * cfg.snapshot_interval).min(t_end);
    let mut status = RunStatus::Completed;
    let mut steps = 0;
    let mut rejections = 0;
    let mut last_change = f64::INFINITY;

    while state.time < t_end {
        let target = next_snap(snap_index);
        let mut dt = cfg.dt_initial;
        if let DtPolicy::CflAdaptive { safety } = cfg.dt_policy {
            let rate = transport_rate(&state, model, &state.c);
            if rate > 0.0 {
                dt = dt.min(safety / rate);
            }
        }
        let remaining = target - state.time;
        let lands = dt >= remaining * (1.0 - 1e-9) || remaining - dt < 1e-3 * dt;
        if lands {
            dt = remaining;
        }
        let (mut next, info) = step(&state, model, cfg, dt)?;
        steps += 1;
        rejections += info.rejections;
        let hit = lands && info.rejections == 0;
        if hit {
            next.time = target;
        }
        let scale = next.n.max_abs().max(1.0);
        let dn = next.n.zip_map(&state.n, |a, b| a - b).max_abs();
        let dc = next.c.zip_map(&state.c, |a, b| a - b).max_abs();
        last_change = (dn + dc) / info.dt / scale;
        series.push(SeriesRecord::measure(&next, info.dt, info.clamp_mag));
        observer(&next, &info);
        state = next;
        if hit {
            states.push(state.clone());
            snap_index += 1;
        }
        if state.n.max_abs() > cfg.blowup_ceiling {
            status = RunStatus::BlowupSuspected;
            if !hit {
                states.push(state.clone());
            }
            break;
        }
    }
    if status == RunStatus::Completed && last_change < cfg.converge_tol {
        status = RunStatus::Converged;
    }
    Ok(Trajectory { model: *model, states, series, status, warnings, steps, rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mean;
    use crate::model::{ModelSpec, SensitivitySpec, SourceSpec};
    use approx::assert_abs_diff_eq;

    fn bump(grid: Grid, m: f64) -> ScalarField {
        let f = ScalarField::from_fn(grid, |x, y| (-((x - 0.4).powi(2) + (y - 0.6).powi(2)) / 0.02).exp());
        let s = m / mean(&f);
        f.map(|v| v * s)
    }

    #[test]
    fn constant_state_linear_production() {
        let g = Grid::unit(2, 8).unwrap();
        let mut model = ModelSpec::example_b(1.0, 1.0, 1.0);
        model.source = SourceSpec::zero();
        let cfg = SolverConfig::default();
        let st = SystemState::new(&model, ScalarField::constant(g, 2.0), ScalarField::constant(g, 0.5), None).unwrap();
        let dt = 0.1;
        let (next, _) = step(&st, &model, &cfg, dt).unwrap();
        for &v in next.n.values() {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
        let want = (0.5 + dt * 2.0) / (1.0 + dt);
        for &v in next.c.values() {
            assert_abs_diff_eq!(v, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn haptotactic_matrix_halves() {
        let g = Grid::unit(1, 4).unwrap();
        let w = ScalarField::constant(g, 0.8);
        let halved = w_update(&w, &ScalarField::constant(g, 1.0), std::f64::consts::LN_2);
        for &v in halved.values() {
            assert_abs_diff_eq!(v, 0.4, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = Grid::unit(2, 8).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, ScalarField::zeros(g), ScalarField::zeros(g), None).unwrap();
        let (next, _) = step(&st, &model, &SolverConfig::default(), 0.05).unwrap();
        assert_eq!(next.n.max_abs(), 0.0);
        assert_eq!(next.c.max_abs(), 0.0);
    }

    #[test]
    fn mass_conserved_and_positive() {
        let g = Grid::unit(2, 24).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, bump(g, 0.5), ScalarField::zeros(g), None).unwrap();
        let m0 = quadrature(&st.n);
        let cfg = SolverConfig { t_end: 0.5, dt_initial: 0.01, ..Default::default() };
        let traj = run(&model, st, &cfg).unwrap();
        for r in &traj.series {
            assert!(((r.mass_n - m0) / m0).abs() < 1e-12);
            assert!(r.min_n >= 0.0);
            assert_eq!(r.clamp_mag, 0.0);
        }
        assert_eq!(traj.states.len(), 6);
        assert_abs_diff_eq!(traj.last().time, 0.5, epsilon = 0.0);
    }

    #[test]
    fn pure_diffusion_max_principle() {
        let g = Grid::unit(2, 16).unwrap();
        let model = ModelSpec::heat();
        let st = SystemState::new(&model, bump(g, 1.0), ScalarField::zeros(g), None).unwrap();
        let cfg = SolverConfig { t_end: 0.2, dt_initial: 0.01, ..Default::default() };
        let traj = run(&model, st, &cfg).unwrap();
        for w in traj.series.windows(2) {
            assert!(w[1].linf_n <= w[0].linf_n * (1.0 + 1e-12));
        }
    }

    #[test]
    fn huge_fixed_dt_fails_hard() {
        let g = Grid::unit(2, 16).unwrap();
        let mut model = ModelSpec::example_a(0.5);
        model.sensitivity = SensitivitySpec::prototype(50.0, 1.0);
        let st = SystemState::new(&model, bump(g, 1.0), bump(g, 1.0), None).unwrap();
        let cfg = SolverConfig { dt_initial: 1e6, dt_policy: DtPolicy::Fixed, t_end: 1e7, snapshot_interval: 1e7, ..Default::default() };
        let err = run(&model, st, &cfg).unwrap_err();
        assert!(matches!(err, Error::StepFailed { rejections: 20, .. }), "{err}");
    }

    #[test]
    fn blowup_guard() {
        let g = Grid::unit(2, 8).unwrap();
        let model = ModelSpec::example_b(5.0, 1e-12, 1.0);
        let st = SystemState::new(&model, ScalarField::constant(g, 1.0), ScalarField::zeros(g), None).unwrap();
        let cfg = SolverConfig { t_end: 20.0, dt_initial: 0.05, blowup_ceiling: 1e6, ..Default::default() };
        let traj = run(&model, st, &cfg).unwrap();
        assert_eq!(traj.status, RunStatus::BlowupSuspected);
        assert_eq!(traj.status.as_str(), "finite-time-blow-up suspected");
    }

    #[test]
    fn negative_initial_data_rejected() {
        let g = Grid::unit(1, 4).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, ScalarField::constant(g, -1.0), ScalarField::zeros(g), None).unwrap();
        assert!(run(&model, st, &SolverConfig::default()).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = Grid::unit(1, 4).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, ScalarField::constant(g, 1.0), ScalarField::zeros(g), None).unwrap();
        let csv = series_csv(&[SeriesRecord::measure(&st, 0.0, 0.0)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SERIES_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
    }
}
