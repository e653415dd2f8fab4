//! Sup-bound exponents, bound evaluation and calibration, the long-time bound
//! check and Neumann heat-semigroup decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gradient, lq_norm, mean, FaceCoeffs, Grid, ScalarField};
use crate::model::ModelSpec;
use crate::solver::{cg_solve, ShiftedDiffusion, Trajectory};
use crate::stability::{fit_exponential_rate, RateFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Theorem1,
    Theorem2,
    /// The structural condition selects the first regime but the closed-form
    /// exponent bracket is not positive.
    Borderline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub p: f64,
    pub dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_minus: f64,
    /// `p(N+2+α₋)/N`.
    pub r1: f64,
    /// `max{p(β+α₋)/(p-1), 2+α₋}`, compared against `r1` to pick the regime.
    pub structural_max: f64,
    /// `r1 - max{p(β+α₋)N/(p-1), 2+α₋, p}`.
    pub theta_hat: f64,
    /// `1/κ = (p-1)/p θ̂`; `None` when `θ̂ <= 0` (infinite).
    pub kappa: Option<f64>,
    /// `1/κ̂ = (p+N)/p θ̂`; `None` when `θ̂ <= 0`.
    pub kappa_hat: Option<f64>,
    /// `r1 - max{p(β+α₋)/(p-1), 2+α₋, p}`, the gap used in the iteration.
    pub theta_hat_iteration: f64,
    pub kappa_iteration: Option<f64>,
    pub kappa_hat_iteration: Option<f64>,
    pub regime: Regime,
    /// The two gaps differ in sign or the classifier and the bracket disagree.
    pub readings_disagree: bool,
    /// Lower bound on `r` for the second-regime bound.
    pub r_min_theorem2: f64,
}

impl ExponentSet {
    /// Exponents used to evaluate the first-regime bound: the closed-form pair
    /// when finite, otherwise the iteration pair if that one is finite.
    pub fn effective(&self) -> Option<(f64, f64)> {
        match (self.kappa, self.kappa_hat) {
            (Some(k), Some(kh)) => Some((k, kh)),
            _ => match (self.kappa_iteration, self.kappa_hat_iteration) {
                (Some(k), Some(kh)) if self.regime != Regime::Theorem2 => Some((k, kh)),
                _ => None,
            },
        }
    }
}

pub fn exponents(p: f64, dim: usize, alpha: f64, beta: f64) -> Result<ExponentSet> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must exceed 1")));
    }
    if !(dim == 1 || dim == 2) {
        return Err(Error::InvalidArgument(format!("dimension {dim} not supported")));
    }
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidArgument("alpha and beta must be finite".into()));
    }
    let n = dim as f64;
    let am = (-alpha).max(0.0);
    let r1 = p * (n + 2.0 + am) / n;
    let cross = p * (beta + am) / (p - 1.0);
    let structural_max = cross.max(2.0 + am);
    let theta_hat = r1 - (cross * n).max(2.0 + am).max(p);
    let theta_it = r1 - cross.max(2.0 + am).max(p);
    let inv = |theta: f64, f: f64| if theta > 0.0 { Some(1.0 / (f * theta)) } else { None };
    let kappa = inv(theta_hat, (p - 1.0) / p);
    let kappa_hat = inv(theta_hat, (p + n) / p);
    let kappa_iteration = inv(theta_it, (p - 1.0) / p);
    let kappa_hat_iteration = inv(theta_it, (p + n) / p);
    let first = structural_max < r1;
    let regime = match (first, theta_hat > 0.0) {
        (true, true) => Regime::Theorem1,
        (true, false) => Regime::Borderline,
        (false, _) => Regime::Theorem2,
    };
    let r_min_theorem2 = cross
        .max(2.0 + am)
        .max(n * (2.0 + am) / p - n)
        .max((p + n) * (beta + am) / (p * (p - 1.0)) - n - 2.0 - am);
    Ok(ExponentSet {
        p,
        dim,
        alpha,
        beta,
        alpha_minus: am,
        r1,
        structural_max,
        theta_hat,
        kappa,
        kappa_hat,
        theta_hat_iteration: theta_it,
        kappa_iteration,
        kappa_hat_iteration,
        regime,
        readings_disagree: (theta_hat > 0.0) != (theta_it > 0.0) || first != (theta_hat > 0.0),
        r_min_theorem2,
    })
}

pub fn model_exponents(model: &ModelSpec, dim: usize) -> Result<ExponentSet> {
    exponents(model.diffusion.effective_p(), dim, model.diffusion.effective_alpha(), model.sensitivity.beta)
}

/// Threshold on `r` in the long-time bound: the second-regime lower bound
/// with the closed-form cross term and `r1` added to the max.
pub fn theorem4_r_threshold(e: &ExponentSet) -> f64 {
    let n = e.dim as f64;
    let p = e.p;
    let am = e.alpha_minus;
    (p * (e.beta + am) * n / (p - 1.0))
        .max(2.0 + am)
        .max(n * (2.0 + am) / p - n)
        .max((p + n) * (e.beta + am) / (p * (p - 1.0)) - n - 2.0 - am)
        .max(e.r1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Exponents {
    pub r: f64,
    pub theta_hat: f64,
    /// `(N r - p(N+2+α₋)) / (θ̂ (p+N))`, in `(0, 1)`.
    pub m: f64,
    pub kappa: f64,
    pub kappa_hat: f64,
    /// `κ / (1-m)` and `κ̂ / (1-m)`.
    pub kappa_eff: f64,
    pub kappa_hat_eff: f64,
}

pub fn theorem2_exponents(e: &ExponentSet, r: f64) -> Result<Theorem2Exponents> {
    if e.regime != Regime::Theorem2 {
        return Err(Error::WrongRegime(format!("exponents are in the {:?} regime", e.regime)));
    }
    if !(r > e.r_min_theorem2) {
        return Err(Error::InvalidArgument(format!("r = {r} must exceed {}", e.r_min_theorem2)));
    }
    let n = e.dim as f64;
    let p = e.p;
    let theta = r - e.structural_max;
    let m = (n * r - p * (n + 2.0 + e.alpha_minus)) / (theta * (p + n));
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidArgument(format!("r = {r} gives m = {m} outside (0, 1)")));
    }
    let kappa = p / (theta * (p - 1.0));
    let kappa_hat = p / (theta * (p + n));
    Ok(Theorem2Exponents {
        r,
        theta_hat: theta,
        m,
        kappa,
        kappa_hat,
        kappa_eff: kappa / (1.0 - m),
        kappa_hat_eff: kappa_hat / (1.0 - m),
    })
}

/// `max(sup |∇c|, 1)` over snapshots with `t0 - t̂ <= t <= t0`.
pub fn grad_c_sup(traj: &Trajectory, t0: f64, t_hat: f64) -> Result<f64> {
    let mut any = false;
    let mut best = 1.0f64;
    for s in traj.window(t0 - t_hat, t0) {
        any = true;
        best = best.max(gradient(&s.c).magnitude().max());
    }
    if any {
        Ok(best)
    } else {
        Err(Error::Precondition(format!("no snapshots in ({}, {t0})", t0 - t_hat)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub b_frak: f64,
    pub t_hat: f64,
    pub mean_integral: f64,
    pub kf: f64,
    pub dim: usize,
    pub p: f64,
}

impl BoundInputs {
    pub fn time_factor(&self) -> f64 {
        self.t_hat + self.t_hat.powf(-(self.dim as f64) / self.p)
    }
}

/// Minimizer `(N/p)^{p/(p+N)}` of `t + t^{-N/p}`.
pub fn optimal_t_hat(dim: usize, p: f64) -> f64 {
    let n = dim as f64;
    (n / p).powf(p / (p + n))
}

fn power_part(kappa: f64, kappa_hat: f64, inp: &BoundInputs) -> f64 {
    inp.b_frak.powf(kappa) * inp.time_factor().powf(kappa_hat) * inp.mean_integral.powf(kappa_hat)
}

fn check_inputs(inp: &BoundInputs) -> Result<()> {
    if !(inp.b_frak >= 1.0 && inp.t_hat > 0.0 && inp.mean_integral >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid bound inputs {inp:?}")));
    }
    Ok(())
}

/// `C 𝔟^κ (t̂ + t̂^{-N/p})^κ̂ (mean)^κ̂ + K_f` with the first-regime exponents.
pub fn theorem1_bound(e: &ExponentSet, inp: &BoundInputs, c: f64) -> Result<f64> {
    check_inputs(inp)?;
    let (k, kh) = e
        .effective()
        .filter(|_| e.regime != Regime::Theorem2)
        .ok_or_else(|| Error::WrongRegime(format!("no finite first-regime exponents ({:?})", e.regime)))?;
    Ok(c * power_part(k, kh, inp) + inp.kf)
}

/// Second-regime bound with the effective exponents `κ/(1-m)`, `κ̂/(1-m)`.
pub fn theorem2_bound(t2: &Theorem2Exponents, inp: &BoundInputs, c: f64) -> Result<f64> {
    check_inputs(inp)?;
    Ok(c * power_part(t2.kappa_eff, t2.kappa_hat_eff, inp) + inp.kf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    Theorem1,
    Theorem2 { r: f64 },
}

/// Data on which the constant is allowed to depend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataTuple {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a0: f64,
    pub b0: f64,
    pub dim: usize,
    pub extent: [f64; 2],
}

impl DataTuple {
    pub fn of(model: &ModelSpec, grid: &Grid) -> Self {
        Self {
            p: model.diffusion.effective_p(),
            alpha: model.diffusion.effective_alpha(),
            beta: model.sensitivity.beta,
            a0: model.diffusion.a0,
            b0: model.sensitivity.b0,
            dim: grid.dim(),
            extent: [grid.extent(0), grid.extent(1)],
        }
    }
}

/// Measured quantities of one trajectory on one window `(t0 - t̂, t0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeasure {
    pub id: String,
    pub data: DataTuple,
    pub t0: f64,
    pub inputs: BoundInputs,
    /// `max n` over snapshots in `(t0 - t̂/2, t0)`.
    pub measured_sup: f64,
}

/// Time average over `(t0 - t̂, t0)` of `∫ n^q`, trapezoid over snapshots.
pub fn mean_integral(traj: &Trajectory, t0: f64, t_hat: f64, q: f64) -> Result<f64> {
    let snaps: Vec<_> = traj.window(t0 - t_hat, t0).collect();
    if snaps.len() < 2 {
        return Err(Error::Precondition(format!("{} snapshots in ({}, {t0}), need 2", snaps.len(), t0 - t_hat)));
    }
    let vol = traj.grid().cell_volume();
    let vals: Vec<f64> = snaps.iter().map(|s| s.n.values().iter().map(|v| v.powf(q)).sum::<f64>() * vol).collect();
    let mut acc = 0.0;
    for k in 1..snaps.len() {
        acc += 0.5 * (snaps[k].time - snaps[k - 1].time) * (vals[k] + vals[k - 1]);
    }
    Ok(acc / t_hat)
}

pub fn measure_scenario(id: &str, traj: &Trajectory, t0: f64, t_hat: f64, kind: BoundKind) -> Result<ScenarioMeasure> {
    if !(t_hat > 0.0 && t_hat < t0) {
        return Err(Error::InvalidArgument(format!("need 0 < t_hat = {t_hat} < t0 = {t0}")));
    }
    let grid = *traj.grid();
    let e = model_exponents(&traj.model, grid.dim())?;
    let q = match kind {
        BoundKind::Theorem1 => e.r1,
        BoundKind::Theorem2 { r } => r,
    };
    let sup: Vec<f64> = traj.window(t0 - 0.5 * t_hat, t0).map(|s| s.n.max()).collect();
    if sup.is_empty() {
        return Err(Error::Precondition(format!("no snapshots in ({}, {t0})", t0 - 0.5 * t_hat)));
    }
    let measured_sup = sup.into_iter().fold(f64::NEG_INFINITY, f64::max);
    if matches!(kind, BoundKind::Theorem2 { .. }) && !measured_sup.is_finite() {
        return Err(Error::Precondition("density not bounded on the window".into()));
    }
    Ok(ScenarioMeasure {
        id: id.to_string(),
        data: DataTuple::of(&traj.model, &grid),
        t0,
        inputs: BoundInputs {
            b_frak: grad_c_sup(traj, t0, t_hat)?,
            t_hat,
            mean_integral: mean_integral(traj, t0, t_hat, q)?,
            kf: traj.model.kf()?,
            dim: grid.dim(),
            p: e.p,
        },
        measured_sup,
    })
}

fn exponent_pair(e: &ExponentSet, kind: BoundKind) -> Result<(f64, f64)> {
    match kind {
        BoundKind::Theorem1 => e
            .effective()
            .filter(|_| e.regime != Regime::Theorem2)
            .ok_or_else(|| Error::WrongRegime(format!("no finite first-regime exponents ({:?})", e.regime))),
        BoundKind::Theorem2 { r } => {
            let t2 = theorem2_exponents(e, r)?;
            Ok((t2.kappa_eff, t2.kappa_hat_eff))
        }
    }
}

pub fn bound_for(e: &ExponentSet, kind: BoundKind, inp: &BoundInputs, c: f64) -> Result<f64> {
    check_inputs(inp)?;
    let (k, kh) = exponent_pair(e, kind)?;
    Ok(c * power_part(k, kh, inp) + inp.kf)
}

/// Smallest `C >= ε` with `measured_sup <= bound` on every scenario.
pub fn calibrate_c(e: &ExponentSet, kind: BoundKind, scenarios: &[ScenarioMeasure]) -> Result<f64> {
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("empty scenario list".into()));
    }
    let (k, kh) = exponent_pair(e, kind)?;
    let mut c = f64::EPSILON;
    for s in scenarios {
        let excess = s.measured_sup - s.inputs.kf;
        if excess <= 0.0 {
            continue;
        }
        let part = power_part(k, kh, &s.inputs);
        if !(part > 0.0) {
            return Err(Error::Precondition(format!("scenario {} exceeds K_f with zero bound factor", s.id)));
        }
        c = c.max(excess / part);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub scenario: String,
    pub holdout: bool,
    pub b_frak: f64,
    pub t0: f64,
    pub t_hat: f64,
    pub mean_integral: f64,
    pub kf: f64,
    pub c_calibrated: f64,
    pub bound_value: f64,
    pub measured_sup: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub data: DataTuple,
    pub kind: BoundKind,
    pub exponents: ExponentSet,
    pub c_calibrated: f64,
    pub calibration_only: bool,
    pub certificates: Vec<BoundCertificate>,
    pub holdout_ok: bool,
}

/// Calibrates on one set and evaluates margins on both; all scenarios must
/// share a data tuple.
pub fn certify(
    kind: BoundKind,
    calibration: &[ScenarioMeasure],
    holdout: &[ScenarioMeasure],
) -> Result<CertificationReport> {
    let first = calibration.first().ok_or_else(|| Error::InvalidArgument("empty calibration set".into()))?;
    let data = first.data;
    if let Some(s) = calibration.iter().chain(holdout).find(|s| s.data != data) {
        return Err(Error::InvalidArgument(format!("scenario {} has a different data tuple", s.id)));
    }
    let e = exponents(data.p, data.dim, data.alpha, data.beta)?;
    let c = calibrate_c(&e, kind, calibration)?;
    let mut certificates = Vec::new();
    for (s, is_holdout) in calibration.iter().map(|s| (s, false)).chain(holdout.iter().map(|s| (s, true))) {
        let b = bound_for(&e, kind, &s.inputs, c)?;
        certificates.push(BoundCertificate {
            scenario: s.id.clone(),
            holdout: is_holdout,
            b_frak: s.inputs.b_frak,
            t0: s.t0,
            t_hat: s.inputs.t_hat,
            mean_integral: s.inputs.mean_integral,
            kf: s.inputs.kf,
            c_calibrated: c,
            bound_value: b,
            measured_sup: s.measured_sup,
            margin: b - s.measured_sup,
        });
    }
    let holdout_ok = certificates.iter().filter(|c| c.holdout).all(|c| c.margin >= 0.0);
    Ok(CertificationReport {
        data,
        kind,
        exponents: e,
        c_calibrated: c,
        calibration_only: holdout.is_empty(),
        certificates,
        holdout_ok,
    })
}

pub const SWEEP_HEADER: &str =
    "scenario,holdout,p,alpha,beta,a0,b0,dim,lx,ly,b_frak,t0,t_hat,mean_integral,bound,measured_sup,margin";

pub fn certificates_csv(report: &CertificationReport) -> String {
    let d = &report.data;
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for c in &report.certificates {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            c.scenario,
            c.holdout,
            d.p,
            d.alpha,
            d.beta,
            d.a0,
            d.b0,
            d.dim,
            d.extent[0],
            d.extent[1],
            c.b_frak,
            c.t0,
            c.t_hat,
            c.mean_integral,
            c.bound_value,
            c.measured_sup,
            c.margin
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Report {
    pub applicable: bool,
    pub status: String,
    pub k: f64,
    pub r_exp: f64,
    pub m_exp: f64,
    pub t_bar: Option<f64>,
    pub tail_sup: Option<f64>,
    pub lambda: f64,
    pub kappa: f64,
    pub bound: Option<f64>,
    pub margin: Option<f64>,
    pub passed: bool,
}

/// `Λ` that makes the long-time bound tight for the given tail.
pub fn calibrate_lambda(tail_sup: f64, k: f64, kappa: f64, kf: f64) -> f64 {
    (tail_sup - kf).max(0.0) / (k + 1.0).powf(kappa)
}

/// Checks `|u|_inf < K`, `|n|_r <= K` and `|g(n)|_m <= K` on the tail after
/// `t_bar0`, then `sup |n|_inf <= Λ (K+1)^κ + K_f` after the first time `T̄`
/// from which the hypotheses hold at every later snapshot.
pub fn theorem4_check(
    traj: &Trajectory,
    k: f64,
    r_exp: f64,
    m_exp: f64,
    t_bar0: f64,
    lambda: f64,
    kappa: f64,
) -> Result<Theorem4Report> {
    let grid = *traj.grid();
    let dim = grid.dim();
    if !(m_exp > dim as f64) {
        return Err(Error::InvalidArgument(format!("m = {m_exp} must exceed N = {dim}")));
    }
    let e = model_exponents(&traj.model, dim)?;
    let thr = theorem4_r_threshold(&e);
    if !(r_exp > thr) {
        return Err(Error::InvalidArgument(format!("r = {r_exp} must exceed {thr}")));
    }
    let kf = traj.model.kf()?;
    let model = traj.model;
    let holds = |s: &crate::solver::SystemState| -> Result<bool> {
        let g = s.n.map(|v| model.production.eval(v));
        Ok(s.u.magnitude().max_abs() < k && lq_norm(&s.n, r_exp)? <= k && lq_norm(&g, m_exp)? <= k)
    };
    let tail: Vec<_> = traj.states.iter().filter(|s| s.time > t_bar0).collect();
    let mut start = None;
    for (i, s) in tail.iter().enumerate().rev() {
        if holds(s)? {
            start = Some(i);
        } else {
            break;
        }
    }
    let mut rep = Theorem4Report {
        applicable: false,
        status: "not applicable".into(),
        k,
        r_exp,
        m_exp,
        t_bar: None,
        tail_sup: None,
        lambda,
        kappa,
        bound: None,
        margin: None,
        passed: false,
    };
    let Some(i0) = start else {
        return Ok(rep);
    };
    let tail_sup = tail[i0..].iter().map(|s| s.n.max_abs()).fold(0.0, f64::max);
    let bound = lambda * (k + 1.0).powf(kappa) + kf;
    rep.applicable = true;
    rep.t_bar = Some(tail[i0].time);
    rep.tail_sup = Some(tail_sup);
    rep.bound = Some(bound);
    rep.margin = Some(bound - tail_sup);
    rep.passed = tail_sup <= bound;
    rep.status = if rep.passed { "passed".into() } else { "violated".into() };
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatDecayReport {
    pub times: Vec<f64>,
    pub q: f64,
    pub l: f64,
    /// `|e^{tΔ}φ0 - mean|_q` at each time.
    pub deviations: Vec<f64>,
    pub lambda2: f64,
    pub fit: Option<RateFit>,
    pub relative_rate_error: Option<f64>,
    /// `N/2 (1/ℓ - 1/q)`.
    pub envelope_exponent: f64,
    /// `|e^{tΔ}φ0 - mean|_q / |φ0 - mean|_ℓ`.
    pub smoothing_ratios: Vec<f64>,
    /// Calibrated on the earlier half of the times.
    pub prefactor: f64,
    /// Later half stays under `prefactor (1 + t^{-e})`.
    pub envelope_ok: bool,
}

/// Evolves `phi0` with backward-Euler Neumann heat steps of size at most `dt`
/// and compares the decay of its mean-free part with `λ₂`.
pub fn heat_decay_check(phi0: &ScalarField, q: f64, l: f64, times: &[f64], dt: f64) -> Result<HeatDecayReport> {
    if !(1.0 <= l && l <= q) {
        return Err(Error::InvalidArgument(format!("need 1 <= l = {l} <= q = {q}")));
    }
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("times must be positive and strictly increasing".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    let grid = *phi0.grid();
    let avg = mean(phi0);
    let lap = FaceCoeffs::uniform(grid, 1.0);
    let ones = vec![1.0; grid.len()];
    let mut x: Vec<f64> = phi0.values().iter().map(|v| v - avg).collect();
    let norm0 = lq_norm(&ScalarField::new(grid, x.clone())?, l)?;
    let mut t = 0.0;
    let mut deviations = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let h = dt.min(target - t);
            let h = if target - (t + h) < 1e-9 * dt { target - t } else { h };
            let op = ShiftedDiffusion { diag: &ones, dt: h, coeffs: &lap };
            let rhs = x.clone();
            let out = cg_solve(&op, &rhs, &mut x, 1e-12, 10_000);
            if !out.converged {
                return Err(Error::StepFailed {
                    rejections: 0,
                    time: t,
                    reason: format!("heat solve residual {:.3e}", out.relative_residual),
                });
            }
            t += h;
        }
        t = target;
        deviations.push(lq_norm(&ScalarField::new(grid, x.clone())?, q)?);
    }
    let series: Vec<(f64, f64)> = times.iter().copied().zip(deviations.iter().copied()).collect();
    let fit = fit_exponential_rate(&series, (times[0], *times.last().unwrap())).ok();
    let lambda2 = grid.lambda2();
    let n = grid.dim() as f64;
    let ex = 0.5 * n * (1.0 / l - 1.0 / q);
    let ratios: Vec<f64> = deviations.iter().map(|d| if norm0 > 0.0 { d / norm0 } else { 0.0 }).collect();
    let env = |t: f64| 1.0 + t.powf(-ex);
    let half = times.len().div_ceil(2);
    let prefactor = (0..half).map(|i| ratios[i] / env(times[i])).fold(0.0, f64::max);
    let envelope_ok = (half..times.len()).all(|i| ratios[i] <= prefactor * env(times[i]) * (1.0 + 1e-12));
    Ok(HeatDecayReport {
        times: times.to_vec(),
        q,
        l,
        deviations,
        lambda2,
        relative_rate_error: fit.map(|f| (f.fitted_rate - lambda2).abs() / lambda2),
        fit,
        envelope_exponent: ex,
        smoothing_ratios: ratios,
        prefactor,
        envelope_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{SeriesRecord, SystemState};
    use crate::RunStatus;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn static_traj(model: ModelSpec, n: ScalarField, c: ScalarField, times: &[f64]) -> Trajectory {
        let states: Vec<SystemState> = times
            .iter()
            .map(|&t| {
                let mut s = SystemState::new(&model, n.clone(), c.clone(), None).unwrap();
                s.time = t;
                s
            })
            .collect();
        let series = vec![SeriesRecord::measure(&states[0], 0.0, 0.0)];
        Trajectory { model, states, series, status: RunStatus::Completed, warnings: vec![], steps: 0, rejections: 0 }
    }

    #[test]
    fn exponent_examples() {
        let e = exponents(3.0, 2, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(e.theta_hat, 3.0);
        assert_abs_diff_eq!(e.kappa.unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.kappa_hat.unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(e.regime, Regime::Theorem1);
        assert_eq!(exponents(3.0, 2, 0.7, 0.0).unwrap().alpha_minus, 0.0);

        let a = exponents(2.0, 2, 0.0, 1.0).unwrap();
        assert_eq!(a.structural_max, 2.0);
        assert_eq!(a.r1, 4.0);
        assert_eq!(a.theta_hat, 0.0);
        assert!(a.kappa.is_none() && a.kappa_hat.is_none());
        assert_eq!(a.regime, Regime::Borderline);
        assert!(a.readings_disagree);
        assert_abs_diff_eq!(a.kappa_iteration.unwrap(), 1.0);
        assert_abs_diff_eq!(a.kappa_hat_iteration.unwrap(), 0.25);
        assert_eq!(a.effective(), Some((1.0, 0.25)));
        assert!(exponents(1.0, 2, 0.0, 0.0).is_err());
        assert!(exponents(2.0, 3, 0.0, 0.0).is_err());
    }

    #[test]
    fn second_regime_exponents() {
        // Strong cross term: p(β+α₋)/(p-1) = 6 >= r1 = 4.
        let e = exponents(2.0, 2, 0.0, 3.0).unwrap();
        assert_eq!(e.regime, Regime::Theorem2);
        assert_abs_diff_eq!(e.r_min_theorem2, 6.0);
        let t2 = theorem2_exponents(&e, 10.0).unwrap();
        assert_abs_diff_eq!(t2.theta_hat, 4.0);
        assert_abs_diff_eq!(t2.m, 0.75);
        assert_abs_diff_eq!(t2.kappa_eff, 0.5 / 0.25);
        assert_abs_diff_eq!(t2.kappa_hat_eff, 0.125 / 0.25);
        // r = 7 sits above the lower bound but gives m = 1.5.
        assert!(theorem2_exponents(&e, 7.0).is_err());
        assert!(theorem2_exponents(&e, 6.0).is_err());
        assert!(theorem2_exponents(&exponents(3.0, 2, 0.0, 0.0).unwrap(), 7.0).is_err());
    }

    #[test]
    fn theorem2_scaling_and_zero() {
        let e = exponents(3.0, 2, 0.0, 5.0).unwrap();
        assert_eq!(e.regime, Regime::Theorem2);
        let r = e.r_min_theorem2 + 2.0;
        let t2 = theorem2_exponents(&e, r).unwrap();
        assert!(t2.m > 0.0 && t2.m < 1.0);
        let inp = BoundInputs { b_frak: 2.0, t_hat: 0.5, mean_integral: 3.0, kf: 1.5, dim: 2, p: 3.0 };
        let b1 = theorem2_bound(&t2, &inp, 0.7).unwrap() - 1.5;
        let b2 = theorem2_bound(&t2, &BoundInputs { b_frak: 4.0, ..inp }, 0.7).unwrap() - 1.5;
        assert_abs_diff_eq!(b2 / b1, 2f64.powf(t2.kappa_eff), epsilon = 1e-12);
        let zero = theorem2_bound(&t2, &BoundInputs { mean_integral: 0.0, ..inp }, 5.0).unwrap();
        assert_eq!(zero, 1.5);
    }

    #[test]
    fn theorem1_bound_examples() {
        let e = exponents(3.0, 2, 0.0, 0.0).unwrap();
        let inp = BoundInputs { b_frak: 1.0, t_hat: 0.5, mean_integral: 0.0, kf: 1.25, dim: 2, p: 3.0 };
        assert_eq!(theorem1_bound(&e, &inp, 10.0).unwrap(), 1.25);
        let inp = BoundInputs { mean_integral: 2.0, ..inp };
        let b1 = theorem1_bound(&e, &inp, 3.0).unwrap() - 1.25;
        let b2 = theorem1_bound(&e, &BoundInputs { b_frak: 2.0, ..inp }, 3.0).unwrap() - 1.25;
        assert_abs_diff_eq!(b2 / b1, 2f64.powf(0.5), epsilon = 1e-12);
        let t2 = exponents(2.0, 2, 0.0, 3.0).unwrap();
        assert!(matches!(theorem1_bound(&t2, &inp, 1.0), Err(Error::WrongRegime(_))));
    }

    #[test]
    fn grad_c_sup_examples() {
        let g = Grid::unit(1, 512).unwrap();
        let m = ModelSpec::example_a(0.5);
        let times = [0.0, 0.5, 1.0];
        let t = static_traj(m, ScalarField::constant(g, 1.0), ScalarField::constant(g, 2.0), &times);
        assert_eq!(grad_c_sup(&t, 1.0, 0.5).unwrap(), 1.0);
        let c = ScalarField::from_fn(g, |x, _| (PI * x).cos() / PI);
        let t = static_traj(m, ScalarField::constant(g, 1.0), c, &times);
        assert_abs_diff_eq!(grad_c_sup(&t, 1.0, 0.5).unwrap(), 1.0, epsilon = 1e-4);
        assert!(grad_c_sup(&t, 0.4, 0.3).is_err());
    }

    #[test]
    fn optimal_time_factor() {
        for (dim, p) in [(2usize, 2.0), (2, 3.0), (1, 2.5)] {
            let ts = optimal_t_hat(dim, p);
            let f = |t: f64| t + t.powf(-(dim as f64) / p);
            assert!(f(ts) <= f(ts * 1.01) && f(ts) <= f(ts * 0.99));
        }
    }

    fn scenario(id: &str, sup: f64, mean: f64) -> ScenarioMeasure {
        ScenarioMeasure {
            id: id.into(),
            data: DataTuple { p: 2.0, alpha: 0.0, beta: 1.0, a0: 1.0, b0: 1.0, dim: 2, extent: [1.0, 1.0] },
            t0: 2.0,
            inputs: BoundInputs { b_frak: 1.0, t_hat: 1.0, mean_integral: mean, kf: 1.0, dim: 2, p: 2.0 },
            measured_sup: sup,
        }
    }

    #[test]
    fn calibration_examples() {
        let e = exponents(2.0, 2, 0.0, 1.0).unwrap();
        let c = calibrate_c(&e, BoundKind::Theorem1, &[scenario("a", 1.0, 5.0)]).unwrap();
        assert_eq!(c, f64::EPSILON);
        assert!(calibrate_c(&e, BoundKind::Theorem1, &[]).is_err());
        let set = vec![scenario("a", 3.0, 5.0), scenario("b", 4.0, 2.0), scenario("c", 2.0, 9.0)];
        let c1 = calibrate_c(&e, BoundKind::Theorem1, &set).unwrap();
        let mut rev = set.clone();
        rev.reverse();
        assert!((calibrate_c(&e, BoundKind::Theorem1, &rev).unwrap() - c1).abs() <= 1e-12 * c1);
        let rep = certify(BoundKind::Theorem1, &set, &[]).unwrap();
        assert!(rep.calibration_only);
        assert!(rep.certificates.iter().all(|c| c.margin >= -1e-12));
        let mut other = scenario("d", 1.0, 1.0);
        other.data.beta = 0.5;
        assert!(certify(BoundKind::Theorem1, &set, &[other]).is_err());
        let csv = certificates_csv(&rep);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn theorem4_examples() {
        let g = Grid::unit(2, 8).unwrap();
        let m = ModelSpec::example_a(0.5);
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let t = static_traj(m, ScalarField::constant(g, 0.3), ScalarField::constant(g, 0.3f64.sqrt()), &times);
        let e = model_exponents(&m, 2).unwrap();
        let r = theorem4_r_threshold(&e) + 1.0;
        let rep = theorem4_check(&t, 0.3f64.sqrt() + 1e-9, r, 3.0, 2.0, 0.0, 1.0).unwrap();
        assert!(rep.applicable && rep.passed);
        assert_eq!(rep.tail_sup, Some(0.3));
        let zero = static_traj(m, ScalarField::zeros(g), ScalarField::zeros(g), &times);
        assert!(theorem4_check(&zero, 1.0, r, 3.0, 0.0, 0.0, 1.0).unwrap().passed);
        let growing: Vec<SystemState> = times
            .iter()
            .map(|&tt| {
                let mut s = SystemState::new(&m, ScalarField::constant(g, 1.0 + tt), ScalarField::zeros(g), None).unwrap();
                s.time = tt;
                s
            })
            .collect();
        let gt = Trajectory { states: growing, ..zero.clone() };
        let rep = theorem4_check(&gt, 5.0, r, 3.0, 0.0, 0.0, 1.0).unwrap();
        assert!(!rep.applicable);
        assert_eq!(rep.status, "not applicable");
        assert!(theorem4_check(&zero, 1.0, r, 2.0, 0.0, 0.0, 1.0).is_err());
        assert!(theorem4_check(&zero, 1.0, 1.0, 3.0, 0.0, 0.0, 1.0).is_err());
        assert_abs_diff_eq!(calibrate_lambda(3.0, 1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn heat_check_small_grid() {
        let g = Grid::unit(2, 32).unwrap();
        let phi = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let times: Vec<f64> = (1..=10).map(|k| 0.02 * k as f64).collect();
        let rep = heat_decay_check(&phi, 2.0, 2.0, &times, 1e-3).unwrap();
        assert!(rep.relative_rate_error.unwrap() < 0.02);
        assert_eq!(rep.envelope_exponent, 0.0);
        assert!(rep.envelope_ok);
        let flat = heat_decay_check(&ScalarField::constant(g, 2.0), 2.0, 1.0, &times, 1e-3).unwrap();
        assert!(flat.deviations.iter().all(|&d| d == 0.0));
        assert!(heat_decay_check(&phi, 1.0, 2.0, &times, 1e-3).is_err());
        assert!(heat_decay_check(&phi, 2.0, 1.0, &[0.2, 0.1], 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn kappa_grows_with_beta(p in 1.5f64..4.0, alpha in -1.0f64..1.0, b1 in 0.0f64..2.0, db in 0.0f64..1.0) {
            let e1 = exponents(p, 2, alpha, b1).unwrap();
            let e2 = exponents(p, 2, alpha, b1 + db).unwrap();
            if let (Some(k1), Some(k2)) = (e1.kappa, e2.kappa) {
                prop_assert!(k2 >= k1 * (1.0 - 1e-12));
                prop_assert!(e2.kappa_hat.unwrap() >= e1.kappa_hat.unwrap() * (1.0 - 1e-12));
            }
            prop_assert_eq!(e1.kappa.is_some(), e1.theta_hat > 0.0);
        }

        #[test]
        fn bound_monotone(b in 1.0f64..10.0, db in 1e-3f64..5.0, m in 0.0f64..10.0, dm in 1e-3f64..5.0,
                          kf in 1.0f64..3.0, c in 1e-3f64..10.0) {
            let e = exponents(3.0, 2, 0.0, 0.0).unwrap();
            let inp = BoundInputs { b_frak: b, t_hat: 0.4, mean_integral: m, kf, dim: 2, p: 3.0 };
            let v = theorem1_bound(&e, &inp, c).unwrap();
            prop_assert!(v >= kf);
            let more_b = BoundInputs { b_frak: b + db, ..inp };
            let more_m = BoundInputs { mean_integral: m + dm, ..inp };
            if m > 0.0 {
                prop_assert!(theorem1_bound(&e, &more_b, c).unwrap() > v);
            }
            prop_assert!(theorem1_bound(&e, &more_m, c).unwrap() > v);
        }
    }
}
