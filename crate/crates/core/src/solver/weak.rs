use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{gradient, Grid};

/// Separable test function `eta(t) cos(kx pi x / Lx) cos(ky pi y / Ly)` with a
/// smooth compactly supported bump `eta` on `(t_a, t_b)`. The cosines satisfy
/// the no-flux condition, so no boundary terms appear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpTestFunction {
    pub t_a: f64,
    pub t_b: f64,
    pub kx: u32,
    pub ky: u32,
}

impl BumpTestFunction {
    /// `(eta, eta')` at `t`.
    pub fn eta(&self, t: f64) -> (f64, f64) {
        let half = 0.5 * (self.t_b - self.t_a);
        let s = (t - 0.5 * (self.t_a + self.t_b)) / half;
        if s.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 - s * s;
        let e = (1.0 - 1.0 / q).exp();
        (e, e * (-2.0 * s / (q * q)) / half)
    }

    /// `(psi, d psi/dx, d psi/dy)` at a point.
    fn space(&self, grid: &Grid, x: f64, y: f64) -> (f64, f64, f64) {
        let ax = self.kx as f64 * std::f64::consts::PI / grid.extent(0);
        let ay = if grid.dim() == 2 { self.ky as f64 * std::f64::consts::PI / grid.extent(1) } else { 0.0 };
        let (cx, sx) = ((ax * x).cos(), (ax * x).sin());
        let (cy, sy) = ((ay * y).cos(), (ay * y).sin());
        (cx * cy, -ax * sx * cy, -ay * cx * sy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub residual: f64,
    pub time_term: f64,
    pub advection_term: f64,
    pub diffusion_term: f64,
    pub cross_term: f64,
    pub source_term: f64,
}

/// Normalized defect of the weak form of the density equation on the stored
/// snapshots (trapezoid in time, midpoint in space).
pub fn weak_residual(traj: &Trajectory, phi: &BumpTestFunction) -> Result<WeakResidual> {
    if traj.states.len() < 3 {
        return Err(Error::Precondition(format!("{} snapshots, need at least 3", traj.states.len())));
    }
    let (t0, t1) = (traj.states[0].time, traj.last().time);
    if !(phi.t_a > t0 && phi.t_b < t1 && phi.t_a < phi.t_b) {
        return Err(Error::Precondition(format!(
            "test-function support ({}, {}) must lie strictly inside ({t0}, {t1})",
            phi.t_a, phi.t_b
        )));
    }
    let model = &traj.model;
    let grid = *traj.grid();
    let vol = grid.cell_volume();
    let mut psi = Vec::with_capacity(grid.len());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.center(i, j);
            psi.push(phi.space(&grid, x, y));
        }
    }
    let eps = crate::solver::DEFAULT_EPS_REG;
    // Per-snapshot spatial integrals: [n psi eta', n u.grad psi, -a grad n . grad psi, b grad c . grad psi, f psi].
    let mut rows = Vec::with_capacity(traj.states.len());
    for st in &traj.states {
        let (e, ep) = phi.eta(st.time);
        let mut acc = [0.0f64; 5];
        if e != 0.0 || ep != 0.0 {
            let gn = gradient(&st.n);
            let gc = gradient(&st.c);
            let gw = st.w.as_ref().map(gradient);
            let (gnx, gny) = (gn.component(0), gn.component(1));
            let (gcx, gcy) = (gc.component(0), gc.component(1));
            for k in 0..grid.len() {
                let (p, px, py) = psi[k];
                let n = st.n.values()[k];
                acc[0] += n * p * ep;
                if model.tau == 1 {
                    acc[1] += e * n * (st.u.component(0)[k] * px + st.u.component(1)[k] * py);
                }
                let g2 = gnx[k] * gnx[k] + gny[k] * gny[k];
                let a = model.diffusion.eval(n, g2, eps);
                acc[2] -= e * a * (gnx[k] * px + gny[k] * py);
                let b = model.sensitivity.eval(n);
                acc[3] += e * b * (gcx[k] * px + gcy[k] * py);
                let w = st.w.as_ref().map_or(0.0, |w| w.values()[k]);
                if let (Some(h), Some(gw)) = (&model.haptotaxis, &gw) {
                    acc[3] += e * h.xi * n * (gw.component(0)[k] * px + gw.component(1)[k] * py);
                }
                acc[4] += e * model.source.eval(n, w) * p;
            }
        }
        rows.push((st.time, acc.map(|v| v * vol)));
    }
    let mut total = [0.0f64; 5];
    for pair in rows.windows(2) {
        let h = pair[1].0 - pair[0].0;
        for (t, (a, b)) in total.iter_mut().zip(pair[0].1.iter().zip(&pair[1].1)) {
            *t += 0.5 * h * (a + b);
        }
    }
    let lhs = -total[0];
    let rhs = total[1] + total[2] + total[3] + total[4];
    let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 };
    Ok(WeakResidual {
        residual,
        time_term: lhs,
        advection_term: total[1],
        diffusion_term: total[2],
        cross_term: total[3],
        source_term: total[4],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarField;
    use crate::model::ModelSpec;
    use crate::solver::{run, SolverConfig, SystemState};

    #[test]
    fn bump_derivative_matches_difference() {
        let f = BumpTestFunction { t_a: 0.2, t_b: 0.8, kx: 1, ky: 1 };
        for &t in &[0.3, 0.45, 0.6, 0.75] {
            let h = 1e-6;
            let fd = (f.eta(t + h).0 - f.eta(t - h).0) / (2.0 * h);
            assert!((fd - f.eta(t).1).abs() < 1e-6);
        }
        assert_eq!(f.eta(0.1), (0.0, 0.0));
    }

    #[test]
    fn zero_solution_gives_zero() {
        let g = Grid::unit(2, 8).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, ScalarField::zeros(g), ScalarField::zeros(g), None).unwrap();
        let traj = run(&model, st, &SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
        let r = weak_residual(&traj, &BumpTestFunction { t_a: 0.2, t_b: 0.8, kx: 1, ky: 1 }).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn support_must_be_interior() {
        let g = Grid::unit(1, 8).unwrap();
        let model = ModelSpec::example_a(0.5);
        let st = SystemState::new(&model, ScalarField::constant(g, 1.0), ScalarField::zeros(g), None).unwrap();
        let traj = run(&model, st, &SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
        assert!(weak_residual(&traj, &BumpTestFunction { t_a: 0.0, t_b: 0.5, kx: 1, ky: 0 }).is_err());
        assert!(weak_residual(&traj, &BumpTestFunction { t_a: 0.5, t_b: 1.0, kx: 1, ky: 0 }).is_err());
    }
}
