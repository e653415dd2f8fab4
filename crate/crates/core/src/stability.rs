//! Equilibria, exponential-rate fits, the logistic Lyapunov functional and
//! empirical Hölder exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gaussian_bump, Grid, ScalarField};
use crate::model::{ModelSpec, ModelTag, SourceForm};
use crate::solver::{run, run_with_observer, RunStatus, SolverConfig, SystemState, Trajectory};

/// Values at or below this are treated as having reached the rounding floor
/// and end a rate-fit window.
pub const RATE_FIT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSpec {
    pub tag: ModelTag,
    pub n_star: f64,
    pub c_star: f64,
    pub u_zero: bool,
}

/// Constant steady state: `(M, M^σ)` for the power-production model with mean
/// mass `M`, `((r/μ)^(1/γ), (r/μ)^(1/γ), 0)` for the logistic fluid model.
pub fn equilibrium(model: &ModelSpec, mean_mass: f64) -> Result<EquilibriumSpec> {
    match model.tag {
        ModelTag::ExampleA => {
            if !(mean_mass >= 0.0) {
                return Err(Error::InvalidArgument(format!("mass {mean_mass} must be nonnegative")));
            }
            Ok(EquilibriumSpec {
                tag: model.tag,
                n_star: mean_mass,
                c_star: mean_mass.powf(model.production.sigma),
                u_zero: true,
            })
        }
        ModelTag::ExampleB => {
            let s = &model.source;
            if !(s.r > 0.0 && s.mu > 0.0) {
                return Err(Error::InvalidArgument("logistic equilibrium needs r, mu > 0".into()));
            }
            let chi = (s.r / s.mu).powf(1.0 / s.gamma_exp);
            Ok(EquilibriumSpec { tag: model.tag, n_star: chi, c_star: chi, u_zero: true })
        }
        other => Err(Error::WrongRegime(format!("no closed-form equilibrium for {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassVerdict {
    Conservation {
        max_relative_drift: f64,
    },
    Logistic {
        limsup_bound: f64,
        tail_max: f64,
        tail_start: f64,
        odi_violations: usize,
    },
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub verdict: MassVerdict,
    pub passed: bool,
}

pub const CONSERVATION_TOL: f64 = 1e-10;
pub const TAIL_HEADROOM: f64 = 0.05;

/// Mass history from the per-step series with the verdict appropriate to the
/// source term.
pub fn mass_series(traj: &Trajectory) -> MassReport {
    let times: Vec<f64> = traj.series.iter().map(|r| r.t).collect();
    let mass: Vec<f64> = traj.series.iter().map(|r| r.mass_n).collect();
    let src = &traj.model.source;
    let measure = traj.grid().measure();
    let (verdict, passed) = match src.form {
        SourceForm::Zero => {
            let m0 = mass[0];
            let drift = mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
            let rel = if m0 > 0.0 { drift / m0 } else { drift };
            (MassVerdict::Conservation { max_relative_drift: rel }, rel <= CONSERVATION_TOL)
        }
        SourceForm::Logistic if src.r > 0.0 && src.mu > 0.0 => {
            let chi = (src.r / src.mu).powf(1.0 / src.gamma_exp);
            let bound = measure * chi * (1.0 + TAIL_HEADROOM);
            let t_end = *times.last().unwrap_or(&0.0);
            let tail_start = t_end * 2.0 / 3.0;
            let tail_max = times
                .iter()
                .zip(&mass)
                .filter(|(t, _)| **t >= tail_start)
                .map(|(_, m)| *m)
                .fold(0.0, f64::max);
            // d/dt ∫n <= r ∫n - μ |Ω|^{-γ} (∫n)^{1+γ}, with first-order slack.
            let g = src.gamma_exp;
            let rhs = |m: f64| src.r * m - src.mu * measure.powf(-g) * m.powf(1.0 + g);
            let mut violations = 0;
            for (k, rec) in traj.series.iter().enumerate().skip(1) {
                let (m0, m1) = (mass[k - 1], mass[k]);
                let dm = (m1 - m0) / rec.dt;
                let allowed = rhs(m0).max(rhs(m1));
                let lip = src.r + src.mu * (1.0 + g) * traj.series[k - 1].linf_n.max(rec.linf_n).powf(g);
                let slack = rec.dt * lip * (src.r * m0 + src.mu * measure.powf(-g) * m0.powf(1.0 + g)) + 1e-12;
                if dm > allowed + slack {
                    violations += 1;
                }
            }
            let ok = tail_max <= bound && violations == 0;
            (MassVerdict::Logistic { limsup_bound: bound, tail_max, tail_start, odi_violations: violations }, ok)
        }
        _ => (MassVerdict::Unchecked, true),
    };
    MassReport { times, mass, verdict, passed }
}

/// `H(s) = s - χ - χ ln(s/χ)`, evaluated by its Taylor series near `χ`.
pub fn h_function(s: f64, chi: f64) -> f64 {
    let d = s / chi - 1.0;
    if d.abs() < 0.1 {
        // χ (d - ln(1 + d)) = χ Σ_{k>=2} (-1)^k d^k / k
        let mut term = d * d;
        let mut acc = 0.0;
        for k in 2..=16 {
            acc += term / k as f64;
            term *= -d;
        }
        chi * acc
    } else {
        s - chi - chi * (s / chi).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovValue {
    pub value: f64,
    pub floor_cells: usize,
    pub unreliable: bool,
}

/// Quadrature of `H(n)`; cells with `n <= 0` are skipped and counted.
pub fn lyapunov_h(n: &ScalarField, chi: f64) -> Result<LyapunovValue> {
    if !(chi > 0.0) {
        return Err(Error::InvalidArgument(format!("chi = {chi} must be positive")));
    }
    let mut floor_cells = 0;
    let mut acc = 0.0;
    for &v in n.values() {
        if v > 0.0 {
            acc += h_function(v, chi);
        } else {
            floor_cells += 1;
        }
    }
    let frac = floor_cells as f64 / n.values().len() as f64;
    Ok(LyapunovValue { value: acc * n.grid().cell_volume(), floor_cells, unreliable: frac > 1e-3 })
}

/// Runs the model recording `∫H(n)` after every accepted step.
pub fn run_with_lyapunov(
    model: &ModelSpec,
    initial: SystemState,
    cfg: &SolverConfig,
    chi: f64,
) -> Result<(Trajectory, Vec<(f64, f64)>)> {
    let h0 = lyapunov_h(&initial.n, chi)?.value;
    let mut series = vec![(initial.time, h0)];
    let traj = run_with_observer(model, initial, cfg, |st, _| {
        let v = lyapunov_h(&st.n, chi).map(|l| l.value).unwrap_or(f64::NAN);
        series.push((st.time, v));
    })?;
    Ok((traj, series))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub after: f64,
    pub step_pairs: usize,
    pub violations: usize,
    pub tolerance: f64,
}

impl MonotonicityReport {
    pub fn violations_per_1000(&self) -> f64 {
        if self.step_pairs == 0 {
            0.0
        } else {
            1000.0 * self.violations as f64 / self.step_pairs as f64
        }
    }
}

/// Counts consecutive pairs after `after` where the series grows by more than
/// `rel_tol` times its first value.
pub fn count_increases(series: &[(f64, f64)], after: f64, rel_tol: f64) -> MonotonicityReport {
    let tol = rel_tol * series.first().map_or(0.0, |s| s.1.abs());
    let tail: Vec<f64> = series.iter().filter(|s| s.0 >= after).map(|s| s.1).collect();
    let violations = tail.windows(2).filter(|w| w[1] > w[0] + tol).count();
    MonotonicityReport { after, step_pairs: tail.len().saturating_sub(1), violations, tolerance: tol }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub window: (f64, f64),
    pub fitted_rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope,
/// intercept, r²)` with `r² = 1` for exactly constant data.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

/// Log-linear fit of `value ~ A e^{-rate t}` on the samples inside `window`.
pub fn fit_exponential_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    if !(window.0 < window.1) {
        return Err(Error::InvalidArgument(format!("empty window ({}, {})", window.0, window.1)));
    }
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for &(t, v) in series.iter().filter(|s| s.0 >= window.0 && s.0 <= window.1) {
        if !(v > RATE_FIT_FLOOR) {
            break;
        }
        ts.push(t);
        ls.push(v.ln());
    }
    if ts.len() < 4 {
        return Err(Error::Precondition(format!("{} usable samples in the fit window, need 4", ts.len())));
    }
    let (slope, intercept, r2) = linear_fit(&ts, &ls);
    Ok(RateFit { window, fitted_rate: -slope, amplitude: intercept.exp(), r_squared: r2, samples: ts.len() })
}

/// Last third of the run.
pub fn late_window(traj: &Trajectory) -> (f64, f64) {
    let t_end = traj.last().time;
    (t_end * 2.0 / 3.0, t_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub t: f64,
    pub dev_n: f64,
    pub dev_c: f64,
}

/// `|n - n*|_inf` and `|c - c*|_inf` at every snapshot.
pub fn deviation_series(traj: &Trajectory, eq: &EquilibriumSpec) -> Vec<DeviationSample> {
    traj.states
        .iter()
        .map(|s| DeviationSample {
            t: s.time,
            dev_n: s.n.map(|v| v - eq.n_star).max_abs(),
            dev_c: s.c.map(|v| v - eq.c_star).max_abs(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub equilibrium: EquilibriumSpec,
    pub final_dev_n: f64,
    pub final_dev_c: f64,
    /// Fit of `|n - n*|_inf + |c - c*|_inf` on the late window.
    pub fit: Option<RateFit>,
}

pub fn convergence_report(traj: &Trajectory, eq: &EquilibriumSpec) -> ConvergenceReport {
    let devs = deviation_series(traj, eq);
    let last = devs.last().copied().expect("nonempty trajectory");
    let combined: Vec<(f64, f64)> = devs.iter().map(|d| (d.t, d.dev_n + d.dev_c)).collect();
    let fit = fit_exponential_rate(&combined, late_window(traj)).ok();
    ConvergenceReport { equilibrium: *eq, final_dev_n: last.dev_n, final_dev_c: last.dev_c, fit }
}

fn max_space_increment(fields: &[&ScalarField], lag: usize) -> f64 {
    let mut best = 0.0f64;
    for f in fields {
        let g = f.grid();
        let v = f.values();
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let k = g.idx(i, j);
                if i + lag < g.nx() {
                    best = best.max((v[k + lag] - v[k]).abs());
                }
                if g.dim() == 2 && j + lag < g.ny() {
                    best = best.max((v[k + lag * g.nx()] - v[k]).abs());
                }
            }
        }
    }
    best
}

/// Slope of `log(max increment at lag s)` against `log(s h)`.
pub fn holder_space_exponent(fields: &[&ScalarField], scales: &[usize]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("no fields".into()));
    }
    if scales.len() < 3 || scales.iter().any(|&s| s < 2) {
        return Err(Error::Precondition("need at least 3 spatial scales of at least 2 cells".into()));
    }
    let h = fields[0].grid().h(0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &s in scales {
        let inc = max_space_increment(fields, s);
        if inc > 0.0 {
            xs.push((s as f64 * h).ln());
            ys.push(inc.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("field has no variation at the requested scales".into()));
    }
    Ok(linear_fit(&xs, &ys).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub gamma_space: f64,
    pub gamma_time: f64,
    pub p: f64,
    /// `|γ_time - γ_space / p|`.
    pub consistency: f64,
}

/// Empirical space and time Hölder exponents of `n` over snapshots in
/// `window`; time scales are lags in snapshot counts.
pub fn holder_exponent(
    traj: &Trajectory,
    window: (f64, f64),
    space_scales: &[usize],
    time_scales: &[usize],
) -> Result<HolderEstimate> {
    let snaps: Vec<&SystemState> = traj.window(window.0, window.1).collect();
    if time_scales.len() < 3 || time_scales.contains(&0) {
        return Err(Error::Precondition("need at least 3 positive time scales".into()));
    }
    let max_lag = *time_scales.iter().max().unwrap();
    if snaps.len() <= max_lag {
        return Err(Error::Precondition(format!(
            "{} snapshots in the window, need more than the largest lag {max_lag}",
            snaps.len()
        )));
    }
    let fields: Vec<&ScalarField> = snaps.iter().map(|s| &s.n).collect();
    let gamma_space = holder_space_exponent(&fields, space_scales)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &lag in time_scales {
        let mut best = 0.0f64;
        let mut dt_sum = 0.0;
        let mut pairs = 0;
        for k in 0..snaps.len() - lag {
            let (a, b) = (snaps[k], snaps[k + lag]);
            dt_sum += b.time - a.time;
            pairs += 1;
            for (x, y) in a.n.values().iter().zip(b.n.values()) {
                best = best.max((x - y).abs());
            }
        }
        if best > 0.0 {
            xs.push((dt_sum / pairs as f64).ln());
            ys.push(best.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("no temporal variation at the requested lags".into()));
    }
    let gamma_time = linear_fit(&xs, &ys).0;
    let p = traj.model.diffusion.effective_p();
    Ok(HolderEstimate { gamma_space, gamma_time, p, consistency: (gamma_time - gamma_space / p).abs() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub mass: f64,
    pub converged: bool,
    pub status: RunStatus,
    pub fit: Option<RateFit>,
    pub final_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBracket {
    pub sigma: f64,
    /// Largest tested mass below the first failure that converged.
    pub lower: Option<f64>,
    /// Smallest tested mass without verified convergence; `None` when open.
    pub upper: Option<f64>,
    pub degenerate: bool,
    pub results: Vec<ProbeResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub cells: usize,
    pub dim: usize,
    pub solver: SolverConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { cells: 32, dim: 2, solver: SolverConfig { t_end: 20.0, snapshot_interval: 0.25, ..Default::default() } }
    }
}

/// One run of the power-production family from a Gaussian bump of mean `mass`.
pub fn probe_mass(sigma: f64, mass: f64, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let grid = Grid::unit(cfg.dim, cfg.cells)?;
    let model = ModelSpec::example_a(sigma);
    let n0 = gaussian_bump(grid, (0.35, 0.6), 0.2, mass);
    let st = SystemState::new(&model, n0, ScalarField::zeros(grid), None)?;
    let traj = run(&model, st, &cfg.solver)?;
    let eq = equilibrium(&model, mass)?;
    let rep = convergence_report(&traj, &eq);
    let devs = deviation_series(&traj, &eq);
    let initial = devs[0].dev_n + devs[0].dev_c;
    let final_deviation = rep.final_dev_n + rep.final_dev_c;
    let converged = traj.status != RunStatus::BlowupSuspected
        && final_deviation <= 1e-3 * initial
        && rep.fit.is_some_and(|f| f.fitted_rate > 0.0 && f.r_squared >= 0.95)
        || final_deviation <= RATE_FIT_FLOOR;
    Ok(ProbeResult { mass, converged, status: traj.status, fit: rep.fit, final_deviation })
}

/// Empirical bracket for the small-mass convergence threshold.
pub fn smallness_threshold_probe(sigma: f64, masses: &[f64], cfg: &ProbeConfig) -> Result<ThresholdBracket> {
    let n = cfg.dim as f64;
    if !(sigma > 0.0 && sigma < 2.0 / n) {
        return Err(Error::Precondition(format!("sigma = {sigma} must lie in (0, 2/N)")));
    }
    if masses.is_empty() || masses.windows(2).any(|w| w[1] <= w[0]) || masses[0] <= 0.0 {
        return Err(Error::Precondition("mass grid must be positive and strictly increasing".into()));
    }
    let results = masses.iter().map(|&m| probe_mass(sigma, m, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(bracket_from(sigma, results))
}

pub fn bracket_from(sigma: f64, results: Vec<ProbeResult>) -> ThresholdBracket {
    let first_fail = results.iter().position(|r| !r.converged);
    let lower = results[..first_fail.unwrap_or(results.len())].last().map(|r| r.mass);
    let upper = first_fail.map(|i| results[i].mass);
    ThresholdBracket { sigma, lower, upper, degenerate: results.len() < 2, results }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equilibria() {
        let a = equilibrium(&ModelSpec::example_a(0.5), 0.04).unwrap();
        assert_abs_diff_eq!(a.n_star, 0.04);
        assert_abs_diff_eq!(a.c_star, 0.2, epsilon = 1e-15);
        let b = equilibrium(&ModelSpec::example_b(4.0, 1.0, 2.0), 1.0).unwrap();
        assert_eq!((b.n_star, b.c_star, b.u_zero), (2.0, 2.0, true));
        let one = equilibrium(&ModelSpec::example_a(0.5), 1.0).unwrap();
        assert_eq!((one.n_star, one.c_star), (1.0, 1.0));
        assert!(equilibrium(&ModelSpec::example_d(2.5), 1.0).is_err());
    }

    #[test]
    fn h_function_examples() {
        assert_eq!(h_function(0.25, 0.25), 0.0);
        let chi = 0.25;
        let n = chi * (1.0 + 1e-3);
        let ratio = h_function(n, chi) / ((n - chi) * (n - chi));
        assert!((ratio * 2.0 * chi - 1.0).abs() < 0.01);
        // Series and closed form agree at the switch point.
        let s = chi * 1.0999999;
        let closed = s - chi - chi * (s / chi).ln();
        assert!((h_function(s, chi) - closed).abs() < 1e-12);
        let g = Grid::unit(2, 4).unwrap();
        assert_eq!(lyapunov_h(&ScalarField::constant(g, chi), chi).unwrap().value, 0.0);
        assert!(lyapunov_h(&ScalarField::constant(g, chi), 0.0).is_err());
        let z = lyapunov_h(&ScalarField::zeros(g), chi).unwrap();
        assert_eq!(z.floor_cells, 16);
        assert!(z.unreliable);
    }

    #[test]
    fn rate_fit_examples() {
        let s: Vec<(f64, f64)> = (0..10).map(|k| (k as f64 * 0.1, (-2.0 * k as f64 * 0.1).exp())).collect();
        let f = fit_exponential_rate(&s, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(f.fitted_rate, 2.0, epsilon = 1e-6);
        assert!(f.r_squared >= 0.999999);
        let c: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 3.0)).collect();
        assert_eq!(fit_exponential_rate(&c, (0.0, 9.0)).unwrap().fitted_rate, 0.0);
        assert!(fit_exponential_rate(&c[..3], (0.0, 9.0)).is_err());
        let two = |t: f64| (-t).exp() + (-5.0 * t).exp();
        let mut prev = f64::INFINITY;
        for start in [0.0, 1.0, 2.0, 4.0] {
            let s: Vec<(f64, f64)> = (0..20).map(|k| start + k as f64 * 0.1).map(|t| (t, two(t))).collect();
            let r = fit_exponential_rate(&s, (start, start + 2.0)).unwrap().fitted_rate;
            assert!((r - 1.0).abs() < prev);
            prev = (r - 1.0).abs();
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn floor_truncates_window() {
        let s: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, if k < 6 { (-(k as f64)).exp() } else { 0.0 })).collect();
        let f = fit_exponential_rate(&s, (0.0, 9.0)).unwrap();
        assert_eq!(f.samples, 6);
        assert_abs_diff_eq!(f.fitted_rate, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn cusp_exponents() {
        for gamma in [0.3, 0.5, 0.7] {
            let g = Grid::new_1d(1.0, 513).unwrap();
            let f = ScalarField::from_fn(g, |x, _| (x - 0.5).abs().powf(gamma));
            let est = holder_space_exponent(&[&f], &[2, 4, 8, 16, 32]).unwrap();
            assert!((est - gamma).abs() < 0.05, "{gamma} -> {est}");
        }
        let g = Grid::unit(2, 128).unwrap();
        let smooth = ScalarField::from_fn(g, |x, y| (std::f64::consts::PI * x).cos() + y);
        assert!(holder_space_exponent(&[&smooth], &[2, 4, 8]).unwrap() >= 0.99);
        assert!(holder_space_exponent(&[&smooth], &[1, 2, 4]).is_err());
        assert!(holder_space_exponent(&[&smooth], &[2, 4]).is_err());
    }

    #[test]
    fn probe_preconditions() {
        let cfg = ProbeConfig::default();
        assert!(smallness_threshold_probe(1.5, &[0.1], &cfg).is_err());
        assert!(smallness_threshold_probe(0.5, &[0.2, 0.1], &cfg).is_err());
        let one = bracket_from(
            0.5,
            vec![ProbeResult { mass: 0.1, converged: true, status: RunStatus::Completed, fit: None, final_deviation: 0.0 }],
        );
        assert!(one.degenerate);
        assert_eq!((one.lower, one.upper), (Some(0.1), None));
    }

    #[test]
    fn tiny_mass_converges() {
        let cfg = ProbeConfig { cells: 16, ..Default::default() };
        let b = smallness_threshold_probe(0.5, &[1e-3], &cfg).unwrap();
        assert!(b.lower.is_some_and(|m| m >= 1e-3), "{b:?}");
    }

    #[test]
    fn zero_density_mass() {
        let g = Grid::unit(2, 8).unwrap();
        let model = ModelSpec::example_b(1.0, 4.0, 1.0);
        let st = SystemState::new(&model, ScalarField::zeros(g), ScalarField::zeros(g), None).unwrap();
        let traj = run(&model, st, &SolverConfig::default()).unwrap();
        let rep = mass_series(&traj);
        assert!(rep.mass.iter().all(|&m| m == 0.0));
        assert!(rep.passed);
    }

    #[test]
    fn monotonicity_counter() {
        let s = vec![(0.0, 5.0), (1.0, 4.0), (2.0, 4.5), (3.0, 3.0), (4.0, 3.0)];
        let r = count_increases(&s, 0.0, 0.0);
        assert_eq!((r.step_pairs, r.violations), (4, 1));
        assert_eq!(count_increases(&s, 2.5, 0.0).violations, 0);
    }

    proptest! {
        #[test]
        fn h_nonnegative(s in 1e-6f64..100.0, chi in 1e-3f64..10.0) {
            prop_assert!(h_function(s, chi) >= 0.0);
        }

        #[test]
        fn reordering_invariant_fit(rate in 0.1f64..5.0, amp in 0.1f64..10.0) {
            let s: Vec<(f64, f64)> = (0..12).map(|k| (k as f64 * 0.2, amp * (-rate * k as f64 * 0.2).exp())).collect();
            let f = fit_exponential_rate(&s, (0.0, 3.0)).unwrap();
            prop_assert!((f.fitted_rate - rate).abs() < 1e-8);
            prop_assert!((f.amplitude / amp - 1.0).abs() < 1e-8);
        }
    }
}
