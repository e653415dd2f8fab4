//! Level ladders, truncation energies and the quantities of the De Giorgi
//! iteration, evaluated on stored trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gradient, level_set_measure, ScalarField};
use crate::solver::{SystemState, Trajectory};

/// Minimum number of snapshots inside the support of a cutoff.
pub const MIN_CUTOFF_SNAPSHOTS: usize = 8;
/// Minimum number of snapshots strictly inside the rising part of a cutoff,
/// so that the `|η'|` term is resolved.
pub const MIN_RAMP_SNAPSHOTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLadder {
    pub k0: f64,
    pub t0: f64,
    pub t_hat: f64,
    pub tau_hat: f64,
    pub sigma: f64,
    pub depth: usize,
    /// `k_j = (2 - 2^-j) k0` for `j = 0..=depth`.
    pub k: Vec<f64>,
    /// `(k_{j+1} + k_j) / 2` for `j = 0..depth`.
    pub k_tilde: Vec<f64>,
    /// `Γ_j = (t0 - σ τ̂ - 2^-j (1-σ) τ̂, t0)` for `j = 0..=depth`.
    pub gamma: Vec<(f64, f64)>,
}

pub fn level(k0: f64, j: usize) -> f64 {
    (2.0 - 0.5f64.powi(j as i32)) * k0
}

/// Ladder with `τ̂ = t̂`.
pub fn build_ladder(k0: f64, t0: f64, t_hat: f64, sigma: f64, depth: usize) -> Result<LevelLadder> {
    build_ladder_with(k0, t0, t_hat, t_hat, sigma, depth)
}

pub fn build_ladder_with(
    k0: f64,
    t0: f64,
    t_hat: f64,
    tau_hat: f64,
    sigma: f64,
    depth: usize,
) -> Result<LevelLadder> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if !(k0 > 0.0 && k0.is_finite()) {
        return bad(format!("k0 = {k0} must be positive"));
    }
    if !(t_hat > 0.0 && t_hat < t0) {
        return bad(format!("t_hat = {t_hat} must lie in (0, t0 = {t0})"));
    }
    if !(tau_hat > 0.0 && tau_hat <= t_hat) {
        return bad(format!("tau_hat = {tau_hat} must lie in (0, t_hat]"));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return bad(format!("sigma = {sigma} must lie in (0, 1)"));
    }
    if depth < 1 {
        return bad("ladder depth must be at least 1".into());
    }
    let k: Vec<f64> = (0..=depth).map(|j| level(k0, j)).collect();
    let k_tilde = k.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let gamma: Vec<(f64, f64)> = (0..=depth)
        .map(|j| (t0 - sigma * tau_hat - 0.5f64.powi(j as i32) * (1.0 - sigma) * tau_hat, t0))
        .collect();
    debug_assert!(gamma.windows(2).all(|w| w[1].0 >= w[0].0));
    Ok(LevelLadder { k0, t0, t_hat, tau_hat, sigma, depth, k, k_tilde, gamma })
}

impl LevelLadder {
    pub fn ensure_above_kf(&self, kf: f64) -> Result<()> {
        if self.k0 >= kf {
            Ok(())
        } else {
            Err(Error::Precondition(format!("k0 = {} below K_f = {kf}", self.k0)))
        }
    }

    pub fn gamma_len(&self, j: usize) -> f64 {
        self.gamma[j].1 - self.gamma[j].0
    }

    /// Cutoff equal to 1 on `Γ_{j+1}` and rising smoothly from 0 across
    /// `Γ_j \ Γ_{j+1}`.
    pub fn cutoff(&self, j: usize) -> Result<TimeCutoff> {
        if j + 1 > self.depth {
            return Err(Error::InvalidArgument(format!("cutoff index {j} needs ladder depth > {j}")));
        }
        Ok(TimeCutoff { start: self.gamma[j].0, ramp_end: self.gamma[j + 1].0, end: self.t0 })
    }
}

/// Piecewise-cubic time cutoff: 0 before `start`, smoothstep up to
/// `ramp_end`, then 1 through `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeCutoff {
    pub start: f64,
    pub ramp_end: f64,
    pub end: f64,
}

impl TimeCutoff {
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if t <= self.start || t > self.end {
            return (0.0, 0.0);
        }
        if t >= self.ramp_end {
            return (1.0, 0.0);
        }
        let l = self.ramp_end - self.start;
        let s = (t - self.start) / l;
        (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s) / l)
    }

    pub fn max_slope(&self) -> f64 {
        1.5 / (self.ramp_end - self.start)
    }
}

/// Constant `C` in `|η_j'| <= C 2^j / ((1-σ) τ̂)` for the smoothstep cutoff.
pub const CUTOFF_SLOPE_CONSTANT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliSides {
    pub level: f64,
    pub lhs_sup_term: f64,
    pub lhs_gradient_term: f64,
    pub rhs_time_derivative_term: f64,
    pub rhs_gradc_term: f64,
    pub rhs_source_term: f64,
    pub grad_c_sup: f64,
    pub snapshots: usize,
    pub eta: TimeCutoff,
}

impl CaccioppoliSides {
    pub fn lhs(&self) -> f64 {
        self.lhs_sup_term + self.lhs_gradient_term
    }

    pub fn rhs(&self) -> f64 {
        self.rhs_time_derivative_term + self.rhs_gradc_term + self.rhs_source_term
    }
}

fn snapshots_in(traj: &Trajectory, a: f64, b: f64) -> Vec<&SystemState> {
    traj.window(a, b).collect()
}

/// Trapezoid weights for a time-ordered list of nodes.
fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        w[k - 1] += 0.5 * h;
        w[k] += 0.5 * h;
    }
    w
}

/// Every integral of the energy inequality for `(n - k)_+` with cutoff `eta`.
pub fn caccioppoli_sides(traj: &Trajectory, k: f64, eta: &TimeCutoff, alpha_minus: f64) -> Result<CaccioppoliSides> {
    if !(k > 1.0) {
        return Err(Error::InvalidArgument(format!("level k = {k} must exceed 1")));
    }
    let snaps = snapshots_in(traj, eta.start, eta.end);
    if snaps.len() < MIN_CUTOFF_SNAPSHOTS {
        return Err(Error::Precondition(format!(
            "{} snapshots inside the cutoff support ({}, {}), need {MIN_CUTOFF_SNAPSHOTS}",
            snaps.len(),
            eta.start,
            eta.end
        )));
    }
    let in_ramp = snaps.iter().filter(|s| s.time > eta.start && s.time < eta.ramp_end).count();
    if in_ramp < MIN_RAMP_SNAPSHOTS {
        return Err(Error::Precondition(format!(
            "{in_ramp} snapshots inside the cutoff ramp ({}, {}), need {MIN_RAMP_SNAPSHOTS}",
            eta.start, eta.ramp_end
        )));
    }
    let model = &traj.model;
    let p = model.diffusion.effective_p();
    let beta = model.sensitivity.beta;
    let vol = traj.grid().cell_volume();
    let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
    let weights = trapezoid_weights(&times);
    let grad_c_sup = snaps.iter().map(|s| gradient(&s.c).magnitude().max()).fold(0.0, f64::max);
    let cross_exp = p * (beta + alpha_minus) / (p - 1.0);

    let mut out = CaccioppoliSides {
        level: k,
        lhs_sup_term: 0.0,
        lhs_gradient_term: 0.0,
        rhs_time_derivative_term: 0.0,
        rhs_gradc_term: 0.0,
        rhs_source_term: 0.0,
        grad_c_sup,
        snapshots: snaps.len(),
        eta: *eta,
    };
    for (st, wt) in snaps.iter().zip(&weights) {
        let (e, ep) = eta.eval(st.time);
        let nv = st.n.values();
        if !nv.iter().any(|&v| v > k) {
            continue;
        }
        let trunc = st.n.map(|v| (v - k).max(0.0));
        let gw = gradient(&trunc).magnitude();
        let hw = st.w.as_ref().map(|w| w.values());
        let (mut sup, mut grad, mut time, mut cross, mut src) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (idx, (&n, &w)) in nv.iter().zip(trunc.values()).enumerate() {
            let g = gw.values()[idx];
            if g > 0.0 {
                let weight = if alpha_minus == 0.0 { 1.0 } else { (n + 1.0).powf(-alpha_minus) * w.powf(alpha_minus) };
                grad += g.powf(p) * weight;
            }
            if n > k {
                let w2 = w.powf(2.0 + alpha_minus);
                sup += w2;
                time += w2;
                cross += (n + 1.0).powf(cross_exp);
                let f = model.source.eval(n, hw.map_or(0.0, |h| h[idx]));
                src += f * w.powf(1.0 + alpha_minus);
            }
        }
        out.lhs_sup_term = f64::max(out.lhs_sup_term, sup * vol * e);
        out.lhs_gradient_term += wt * grad * vol * e;
        out.rhs_time_derivative_term += wt * time * vol * ep.abs();
        out.rhs_gradc_term += wt * cross * vol * e;
        out.rhs_source_term += wt * src * vol * e;
    }
    out.rhs_gradc_term *= grad_c_sup.powf(p / (p - 1.0));
    Ok(out)
}

/// `Y_j = (1/|Γ_{2j}|) ∫_{Γ_{2j}} ∫ (n - k_{2j})_+^r` for `2j <= depth`.
pub fn compute_yj(traj: &Trajectory, ladder: &LevelLadder, r_exp: f64) -> Result<Vec<f64>> {
    if !(r_exp > 0.0) {
        return Err(Error::InvalidArgument(format!("r = {r_exp} must be positive")));
    }
    let vol = traj.grid().cell_volume();
    let mut out = Vec::new();
    for j in 0..=ladder.depth / 2 {
        let (a, b) = ladder.gamma[2 * j];
        let k = ladder.k[2 * j];
        let snaps = snapshots_in(traj, a, b);
        if snaps.len() < 2 {
            return Err(Error::Precondition(format!(
                "{} snapshots in Γ_{} = ({a}, {b}); need at least 2",
                snaps.len(),
                2 * j
            )));
        }
        let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
        let weights = trapezoid_weights(&times);
        let mut acc = 0.0;
        for (st, wt) in snaps.iter().zip(&weights) {
            let s: f64 = st.n.values().iter().filter(|&&v| v > k).map(|&v| (v - k).powf(r_exp)).sum();
            acc += wt * s * vol;
        }
        out.push(acc / ladder.gamma_len(2 * j));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub sequence: Vec<f64>,
    pub converged: bool,
    pub threshold: f64,
}

/// Smallness threshold `K^(-1/δ) b^(-1/δ²)` of the fast geometric
/// convergence lemma.
pub fn iteration_threshold(k: f64, b: f64, delta: f64) -> f64 {
    (-(k.ln() / delta) - b.ln() / (delta * delta)).exp()
}

/// Iterates `Y_{j+1} = K b^j Y_j^{1+δ}` with equality.
///
/// Converged means the sequence dropped below `1e-30`, or it is strictly
/// decreasing and stays under the certificate `Y_0 b^(-j/δ)`.
pub fn iterate_lemma(k: f64, b: f64, delta: f64, y0: f64, j_max: usize) -> IterationOutcome {
    let threshold = iteration_threshold(k, b, delta);
    let mut seq = vec![y0];
    let mut y = y0;
    let mut reached_zero = y0 < 1e-30;
    for j in 0..j_max {
        if reached_zero || !y.is_finite() {
            break;
        }
        y = k * b.powi(j as i32) * y.powf(1.0 + delta);
        seq.push(y);
        if y < 1e-30 {
            reached_zero = true;
        }
    }
    let certified = seq.len() > 1
        && seq.windows(2).all(|w| w[1] < w[0])
        && seq
            .iter()
            .enumerate()
            .all(|(j, &v)| v <= y0 * b.powf(-(j as f64) / delta) * (1.0 + 1e-9));
    IterationOutcome { sequence: seq, converged: reached_zero || certified, threshold }
}

/// Largest violation of `w_{j-1}^ℓ >= k0^(ℓ-m) 2^(-(ℓ-m)(j+1)) w_j^m` over
/// cells with `n >= k_j`; nonpositive when the inequality holds everywhere.
pub fn truncation_inequality_defect(n: &ScalarField, k0: f64, j: usize, ell: f64, m: f64) -> f64 {
    assert!(j >= 1 && ell >= m && m >= 0.0);
    let kj = level(k0, j);
    let kjm = level(k0, j - 1);
    let factor = k0.powf(ell - m) * 2f64.powf(-(ell - m) * (j as f64 + 1.0));
    n.values()
        .iter()
        .filter(|&&v| v >= kj)
        .map(|&v| {
            let rhs = factor * (v - kj).max(0.0).powf(m);
            let lhs = (v - kjm).max(0.0).powf(ell);
            (rhs - lhs) / lhs.max(1e-300)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Empirical constant of the parabolic embedding
/// `∫∫|φ|^{p(N+m)/N} <= C (∫∫|∇φ|^p + |φ|^p) (sup_t ∫|φ|^m)^{p/N}`.
pub fn embedding_ratio(frames: &[(f64, &ScalarField)], p: f64, m: f64) -> Result<f64> {
    if !(p >= 1.0 && m >= 1.0) {
        return Err(Error::InvalidArgument(format!("need p, m >= 1 (p = {p}, m = {m})")));
    }
    if frames.len() < 2 {
        return Err(Error::Precondition("embedding ratio needs at least 2 frames".into()));
    }
    let grid = *frames[0].1.grid();
    let nd = grid.dim() as f64;
    let vol = grid.cell_volume();
    let q = p * (nd + m) / nd;
    let times: Vec<f64> = frames.iter().map(|f| f.0).collect();
    let weights = trapezoid_weights(&times);
    let (mut lhs, mut energy, mut sup_m) = (0.0, 0.0, 0.0f64);
    for ((_, phi), wt) in frames.iter().zip(&weights) {
        let g = gradient(phi).magnitude();
        let mut a = 0.0;
        let mut e = 0.0;
        let mut s = 0.0;
        for (&v, &gv) in phi.values().iter().zip(g.values()) {
            let av = v.abs();
            a += av.powf(q);
            e += gv.powf(p) + av.powf(p);
            s += av.powf(m);
        }
        lhs += wt * a * vol;
        energy += wt * e * vol;
        sup_m = sup_m.max(s * vol);
    }
    let denom = energy * sup_m.powf(p / nd);
    Ok(if denom > 0.0 { lhs / denom } else { 0.0 })
}

pub fn embedding_ratio_trajectory(traj: &Trajectory, p: f64, m: f64) -> Result<f64> {
    let frames: Vec<(f64, &ScalarField)> = traj.states.iter().map(|s| (s.time, &s.n)).collect();
    embedding_ratio(&frames, p, m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelRecord {
    pub j: usize,
    pub k_j: f64,
    pub gamma_len: f64,
    pub y: Option<f64>,
    pub level_set_measure_mid: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub ladder: LevelLadder,
    pub r_exp: f64,
    pub alpha_minus: f64,
    pub records: Vec<LevelRecord>,
    pub caccioppoli: Vec<CaccioppoliSides>,
    /// `max_j LHS_j / RHS_j` over levels with a nonzero right-hand side.
    pub c_cal: f64,
    pub eta_slope_constant: f64,
    pub outside_theory: bool,
}

/// Ladder records, `Y_j` and Caccioppoli sides for every level with a cutoff.
pub fn diagnose(traj: &Trajectory, ladder: &LevelLadder, r_exp: f64, alpha_minus: f64) -> Result<DiagnosticsReport> {
    ladder.ensure_above_kf(traj.model.kf()?)?;
    let ys = compute_yj(traj, ladder, r_exp)?;
    let mut records = Vec::new();
    for j in 0..=ladder.depth {
        let (a, b) = ladder.gamma[j];
        let mid = 0.5 * (a + b);
        let nearest = traj
            .states
            .iter()
            .min_by(|x, y| (x.time - mid).abs().total_cmp(&(y.time - mid).abs()))
            .expect("nonempty trajectory");
        records.push(LevelRecord {
            j,
            k_j: ladder.k[j],
            gamma_len: ladder.gamma_len(j),
            y: if j % 2 == 0 { ys.get(j / 2).copied() } else { None },
            level_set_measure_mid: level_set_measure(&nearest.n, ladder.k[j]),
        });
    }
    let mut sides = Vec::new();
    for j in 0..ladder.depth {
        let eta = ladder.cutoff(j)?;
        sides.push(caccioppoli_sides(traj, ladder.k[j], &eta, alpha_minus)?);
    }
    let c_cal = calibrate_caccioppoli(&sides);
    Ok(DiagnosticsReport {
        ladder: ladder.clone(),
        r_exp,
        alpha_minus,
        records,
        caccioppoli: sides,
        c_cal,
        eta_slope_constant: CUTOFF_SLOPE_CONSTANT,
        outside_theory: traj.grid().outside_theory(),
    })
}

/// Smallest single constant with `LHS <= C RHS` on every level.
pub fn calibrate_caccioppoli(sides: &[CaccioppoliSides]) -> f64 {
    sides
        .iter()
        .filter(|s| s.rhs() > 0.0)
        .map(|s| s.lhs() / s.rhs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use crate::model::ModelSpec;
    use crate::solver::{SeriesRecord, SystemState, Trajectory};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn static_trajectory(n: ScalarField, times: &[f64]) -> Trajectory {
        let model = ModelSpec::example_a(0.5);
        let g = *n.grid();
        let mut states = Vec::new();
        for &t in times {
            let mut s = SystemState::new(&model, n.clone(), ScalarField::zeros(g), None).unwrap();
            s.time = t;
            states.push(s);
        }
        let series = vec![SeriesRecord::measure(&states[0], 0.0, 0.0)];
        Trajectory { model, states, series, status: crate::RunStatus::Completed, warnings: vec![], steps: 0, rejections: 0 }
    }

    #[test]
    fn ladder_examples() {
        let l = build_ladder(1.0, 2.0, 1.0, 0.5, 3).unwrap();
        assert_eq!(l.k, vec![1.0, 1.5, 1.75, 1.875]);
        assert_eq!(l.k_tilde[0], 1.25);
        assert_eq!(l.tau_hat, l.t_hat);
        assert_eq!(l.gamma[0], (1.0, 2.0));
        assert_eq!(l.gamma[1], (1.25, 2.0));
        for w in l.gamma.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 == w[0].1);
        }
        assert!(build_ladder(1.0, 1.0, 1.0, 0.5, 3).is_err());
        assert!(build_ladder(1.0, 2.0, 1.0, 1.0, 3).is_err());
        assert!(build_ladder(1.0, 2.0, 1.0, 0.5, 0).is_err());
    }

    #[test]
    fn cutoff_slope_bound() {
        let l = build_ladder(1.0, 2.0, 1.0, 0.5, 4).unwrap();
        for j in 0..4 {
            let eta = l.cutoff(j).unwrap();
            let bound = CUTOFF_SLOPE_CONSTANT * 2f64.powi(j as i32) / ((1.0 - l.sigma) * l.tau_hat);
            assert_abs_diff_eq!(eta.max_slope(), bound, epsilon = 1e-12);
            let mid = 0.5 * (eta.start + eta.ramp_end);
            assert_abs_diff_eq!(eta.eval(mid).1, bound, epsilon = 1e-9);
            assert_eq!(eta.eval(eta.ramp_end + 1e-9).0, 1.0);
        }
    }

    #[test]
    fn yj_constant_field() {
        let g = Grid::unit(2, 4).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let traj = static_trajectory(ScalarField::constant(g, 1.6), &times);
        let l = build_ladder(1.0, 2.0, 1.0, 0.5, 2).unwrap();
        let y = compute_yj(&traj, &l, 1.0).unwrap();
        assert_abs_diff_eq!(y[0], 0.6, epsilon = 1e-12);
        assert_eq!(y[1], 0.0);
        let low = static_trajectory(ScalarField::constant(g, 0.9), &times);
        assert!(compute_yj(&low, &l, 2.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn caccioppoli_empty_level_and_density_precondition() {
        let g = Grid::unit(2, 8).unwrap();
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.02).collect();
        let traj = static_trajectory(ScalarField::from_fn(g, |x, _| 1.0 + x), &times);
        let l = build_ladder(2.0, 2.0, 1.0, 0.5, 2).unwrap();
        let s = caccioppoli_sides(&traj, 2.5, &l.cutoff(0).unwrap(), 0.0).unwrap();
        assert_eq!((s.lhs(), s.rhs()), (0.0, 0.0));
        let sparse = static_trajectory(ScalarField::constant(g, 3.0), &[0.0, 1.5, 2.0]);
        assert!(matches!(
            caccioppoli_sides(&sparse, 1.5, &l.cutoff(0).unwrap(), 0.0),
            Err(Error::Precondition(_))
        ));
        // Enough snapshots overall but the ramp (1.0, 1.25) is unresolved.
        let coarse: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let coarse = static_trajectory(ScalarField::constant(g, 3.0), &coarse);
        assert!(matches!(
            caccioppoli_sides(&coarse, 1.5, &l.cutoff(0).unwrap(), 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn caccioppoli_scaling_under_dilation() {
        // Static field, k scaled with n: sup and time terms scale as λ^2,
        // the gradient term (p = 2) as λ^2 as well.
        let g = Grid::unit(2, 16).unwrap();
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.02).collect();
        let base = ScalarField::from_fn(g, |x, y| 1.0 + 2.0 * (x * y));
        let l = build_ladder(1.2, 2.0, 1.0, 0.5, 2).unwrap();
        let eta = l.cutoff(0).unwrap();
        let s1 = caccioppoli_sides(&static_trajectory(base.clone(), &times), 1.5, &eta, 0.0).unwrap();
        let s2 = caccioppoli_sides(&static_trajectory(base.map(|v| 2.0 * v), &times), 3.0, &eta, 0.0).unwrap();
        assert_abs_diff_eq!(s2.lhs_sup_term / s1.lhs_sup_term, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s2.lhs_gradient_term / s1.lhs_gradient_term, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s2.rhs_time_derivative_term / s1.rhs_time_derivative_term, 4.0, epsilon = 1e-10);
        assert_eq!(s1.rhs_gradc_term, 0.0);
    }

    #[test]
    fn lemma_hand_cases() {
        let out = iterate_lemma(2.0, 2.0, 1.0, 0.25, 10);
        assert_eq!(out.threshold, 0.25);
        assert_eq!(&out.sequence[..4], &[0.25, 0.125, 0.0625, 0.03125]);
        assert!(out.converged);
        let zero = iterate_lemma(2.0, 2.0, 1.0, 0.0, 10);
        assert!(zero.converged && zero.sequence.iter().all(|&v| v == 0.0));
        let div = iterate_lemma(2.0, 2.0, 1.0, 1.0, 4);
        assert_eq!(&div.sequence[..4], &[1.0, 2.0, 16.0, 2048.0]);
        assert!(!div.converged);
    }

    #[test]
    fn embedding_ratio_zero_and_args() {
        let g = Grid::unit(2, 8).unwrap();
        let z = ScalarField::zeros(g);
        assert_eq!(embedding_ratio(&[(0.0, &z), (1.0, &z)], 2.0, 2.0).unwrap(), 0.0);
        assert!(embedding_ratio(&[(0.0, &z), (1.0, &z)], 0.5, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn ladder_increments_exact(k0 in 0.1f64..100.0, j in 0usize..30) {
            let d = level(k0, j + 1) - level(k0, j);
            let want = 0.5f64.powi(j as i32 + 1) * k0;
            prop_assert!((d - want).abs() <= 2.0 * f64::EPSILON * 2.0 * k0);
        }

        #[test]
        fn gamma_nested(t0 in 1.0f64..10.0, frac in 0.05f64..0.95, sigma in 0.01f64..0.99) {
            let l = build_ladder(1.0, t0, frac * t0, sigma, 8).unwrap();
            for w in l.gamma.windows(2) {
                prop_assert!(w[1].0 >= w[0].0);
            }
            for w in l.k.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
            for (j, kt) in l.k_tilde.iter().enumerate() {
                prop_assert!(*kt > l.k[j] && *kt < l.k[j + 1]);
            }
        }

        #[test]
        fn truncation_inequality(vals in proptest::collection::vec(0.0f64..5.0, 16),
                                 k0 in 0.5f64..2.0, j in 1usize..6,
                                 m in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let g = Grid::unit(1, 16).unwrap();
            let n = ScalarField::new(g, vals).unwrap();
            let defect = truncation_inequality_defect(&n, k0, j, m + extra, m);
            prop_assert!(defect <= 1e-12);
        }

        #[test]
        fn yj_nested_monotone(amp in 0.5f64..3.0, r in 1.0f64..4.0) {
            let g = Grid::unit(2, 8).unwrap();
            let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.05).collect();
            let model = ModelSpec::example_a(0.5);
            let states = times.iter().map(|&t| {
                let n = ScalarField::from_fn(g, |x, y| amp * (1.0 + x * y) * (1.0 + 0.3 * (3.0 * t).sin()));
                let mut s = SystemState::new(&model, n, ScalarField::zeros(g), None).unwrap();
                s.time = t;
                s
            }).collect::<Vec<_>>();
            let series = vec![SeriesRecord::measure(&states[0], 0.0, 0.0)];
            let traj = Trajectory { model, states, series, status: crate::RunStatus::Completed, warnings: vec![], steps: 0, rejections: 0 };
            let l = build_ladder(1.0, 2.0, 1.5, 0.5, 6).unwrap();
            let y = compute_yj(&traj, &l, r).unwrap();
            for j in 0..y.len() - 1 {
                let scale = l.gamma_len(2 * j) / l.gamma_len(2 * j + 2);
                prop_assert!(y[j + 1] <= y[j] * scale * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
