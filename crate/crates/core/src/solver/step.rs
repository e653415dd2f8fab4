use super::cg::{self, ShiftedDiffusion};
use super::{SolverConfig, SystemState};
use crate::error::{Error, Result};
use crate::geometry::{
    advect_unchecked, diffusion_conductances, quadrature, upwind_cross_div, FaceCoeffs, ScalarField, VectorField,
};
use crate::model::{ModelSpec, ProductionForm, SensitivitySpec};

#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    pub dt: f64,
    pub courant: f64,
    pub clamp_mag: f64,
    pub cg_iterations: usize,
    pub rejections: usize,
}

/// Why a single attempt was refused; the driver halves `dt` and retries.
#[derive(Debug, Clone)]
pub enum Rejection {
    Courant(f64),
    Solve { what: &'static str, residual: f64 },
    Reaction,
    NonFinite,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Courant(c) => write!(f, "explicit Courant number {c:.3e} > 1"),
            Rejection::Solve { what, residual } => {
                write!(f, "{what} solve did not converge (relative residual {residual:.3e})")
            }
            Rejection::Reaction => write!(f, "reaction step lost monotonicity"),
            Rejection::NonFinite => write!(f, "non-finite values"),
        }
    }
}

fn outflow_rate(b: &SensitivitySpec, n: &[f64], c: &ScalarField, scale: f64, rate: &mut [f64]) {
    let g = c.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let cx = scale / (g.h(0) * g.h(0));
    let cy = scale / (g.h(1) * g.h(1));
    let cv = c.values();
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            let mut up = 0.0;
            if i + 1 < nx {
                up += (cv[k + 1] - cv[k]).max(0.0) * cx;
            }
            if i > 0 {
                up += (cv[k - 1] - cv[k]).max(0.0) * cx;
            }
            if j + 1 < ny {
                up += (cv[k + nx] - cv[k]).max(0.0) * cy;
            }
            if j > 0 {
                up += (cv[k - nx] - cv[k]).max(0.0) * cy;
            }
            rate[k] += b.rate(n[k]) * up;
        }
    }
}

fn advective_rate(u: &VectorField, rate: &mut [f64]) {
    let g = *u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.h(0), g.h(1));
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            if i + 1 < nx {
                rate[k] += u.face_x(i, j).max(0.0) / hx;
            }
            if i > 0 {
                rate[k] += (-u.face_x(i - 1, j)).max(0.0) / hx;
            }
            if j + 1 < ny {
                rate[k] += u.face_y(i, j).max(0.0) / hy;
            }
            if j > 0 {
                rate[k] += (-u.face_y(i, j - 1)).max(0.0) / hy;
            }
        }
    }
}

/// Largest per-cell outflow rate of the explicit transport terms; the explicit
/// update keeps `n >= 0` whenever `dt` times this rate is at most 1.
pub fn transport_rate(state: &SystemState, model: &ModelSpec, c: &ScalarField) -> f64 {
    let len = c.grid().len();
    let mut rate = vec![0.0; len];
    outflow_rate(&model.sensitivity, state.n.values(), c, 1.0, &mut rate);
    if let (Some(h), Some(w)) = (&model.haptotaxis, &state.w) {
        let hs = SensitivitySpec::linear(h.xi);
        outflow_rate(&hs, state.n.values(), w, 1.0, &mut rate);
    }
    if model.tau == 1 {
        advective_rate(&state.u, &mut rate);
    }
    rate.into_iter().fold(0.0, f64::max)
}

fn clamp(values: &mut [f64], floor: f64) -> f64 {
    let mut mag = 0.0;
    for v in values.iter_mut() {
        if *v < floor {
            mag += floor - *v;
            *v = floor;
        }
    }
    mag
}

/// Exact solution of `w_t = -c w` over `dt` with `c` frozen.
pub fn w_update(w: &ScalarField, c: &ScalarField, dt: f64) -> ScalarField {
    w.zip_map(c, |wv, cv| wv * (-dt * cv).exp())
}

/// One splitting step of size `dt` without retries.
pub fn try_step(
    state: &SystemState,
    model: &ModelSpec,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<(SystemState, StepInfo), Rejection> {
    let grid = *state.n.grid();
    let len = grid.len();
    let vol = grid.cell_volume();
    let mut info = StepInfo { dt, ..Default::default() };
    let lap = FaceCoeffs::uniform(grid, 1.0);

    // Signal: implicit in diffusion, decay and consumption.
    let mut rhs: Vec<f64> = state.c.values().to_vec();
    if model.tau == 1 {
        let adv = advect_unchecked(&state.c, &state.u);
        for (r, a) in rhs.iter_mut().zip(adv.values()) {
            *r -= dt * a;
        }
    }
    let diag: Vec<f64> = match model.production.form {
        ProductionForm::Consumption => state.n.values().iter().map(|&s| 1.0 + dt * s).collect(),
        _ => {
            for (r, &s) in rhs.iter_mut().zip(state.n.values()) {
                *r += dt * model.production.eval(s);
            }
            vec![1.0 + dt; len]
        }
    };
    let mut c_new = state.c.values().to_vec();
    let op = ShiftedDiffusion { diag: &diag, dt, coeffs: &lap };
    let out = cg::solve(&op, &rhs, &mut c_new, cfg.implicit_tolerance, cfg.implicit_max_iters);
    info.cg_iterations += out.iterations;
    if !out.converged {
        return Err(Rejection::Solve { what: "signal", residual: out.relative_residual });
    }
    info.clamp_mag += clamp(&mut c_new, cfg.positivity_floor) * vol;
    let c_new = ScalarField::from_vec_unchecked(grid, c_new);

    let w_new = state.w.as_ref().map(|w| w_update(w, &c_new, dt));

    // Density: explicit upwind transport.
    info.courant = dt * transport_rate(state, model, &c_new);
    if info.courant > 1.0 + 1e-12 {
        return Err(Rejection::Courant(info.courant));
    }
    let nv = state.n.values();
    let mut n1: Vec<f64> = nv.to_vec();
    if !model.sensitivity.is_zero() {
        let b: Vec<f64> = nv.iter().map(|&s| model.sensitivity.eval(s)).collect();
        let chemo = upwind_cross_div(&b, &c_new);
        for (x, d) in n1.iter_mut().zip(chemo.values()) {
            *x += dt * d;
        }
    }
    if let (Some(h), Some(w)) = (&model.haptotaxis, &state.w) {
        let b: Vec<f64> = nv.iter().map(|&s| h.xi * s).collect();
        let hapto = upwind_cross_div(&b, w);
        for (x, d) in n1.iter_mut().zip(hapto.values()) {
            *x += dt * d;
        }
    }
    if model.tau == 1 {
        let adv = advect_unchecked(&state.n, &state.u);
        for (x, a) in n1.iter_mut().zip(adv.values()) {
            *x -= dt * a;
        }
    }
    for x in n1.iter_mut() {
        // Rounding can leave -1e-17 where the Courant bound is exactly met.
        if *x < 0.0 && *x > -1e-14 {
            *x = 0.0;
        }
    }

    // Density: implicit diffusion with lagged coefficients.
    let ones = vec![1.0; len];
    let mut n2 = n1.clone();
    let mut lagged = ScalarField::from_vec_unchecked(grid, n1.clone());
    for _ in 0..cfg.picard_sweeps.max(1) {
        let coeffs = diffusion_conductances(&lagged, &model.diffusion, cfg.eps_reg)
            .map_err(|_| Rejection::NonFinite)?;
        let op = ShiftedDiffusion { diag: &ones, dt, coeffs: &coeffs };
        let out = cg::solve(&op, &n1, &mut n2, cfg.implicit_tolerance, cfg.implicit_max_iters);
        info.cg_iterations += out.iterations;
        if !out.converged {
            return Err(Rejection::Solve { what: "density", residual: out.relative_residual });
        }
        lagged = ScalarField::from_vec_unchecked(grid, n2.clone());
    }
    // The exact solve conserves mass; project away the solver residual's share.
    let m1: f64 = n1.iter().sum();
    let m2: f64 = n2.iter().sum();
    if m2 > 0.0 && m1 > 0.0 {
        let s = m1 / m2;
        n2.iter_mut().for_each(|v| *v *= s);
    }

    // Density: one linearly implicit step on the reaction.
    if !model.source.is_zero() {
        let wv = w_new.as_ref().map(|w| w.values());
        for (k, v) in n2.iter_mut().enumerate() {
            let wk = wv.map_or(0.0, |w| w[k]);
            let f = model.source.eval(*v, wk);
            let fp = model.source.derivative(*v, wk);
            let denom = 1.0 - dt * fp;
            if !(denom > 0.0) {
                return Err(Rejection::Reaction);
            }
            *v += dt * f / denom;
        }
    }
    info.clamp_mag += clamp(&mut n2, cfg.positivity_floor) * vol;
    if n2.iter().chain(c_new.values()).any(|v| !v.is_finite()) {
        return Err(Rejection::NonFinite);
    }

    Ok((
        SystemState {
            time: state.time + dt,
            n: ScalarField::from_vec_unchecked(grid, n2),
            c: c_new,
            w: w_new,
            u: state.u.clone(),
        },
        info,
    ))
}

/// Step with rejection handling: each refusal halves `dt`, and more than
/// `cfg.max_rejections` refusals is a hard error.
pub fn step(state: &SystemState, model: &ModelSpec, cfg: &SolverConfig, dt: f64) -> Result<(SystemState, StepInfo)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    let mut dt = dt;
    let mut last = None;
    for rejections in 0..=cfg.max_rejections {
        match try_step(state, model, cfg, dt) {
            Ok((s, mut info)) => {
                info.rejections = rejections;
                return Ok((s, info));
            }
            Err(r) => {
                last = Some(r);
                dt *= 0.5;
            }
        }
    }
    Err(Error::StepFailed {
        rejections: cfg.max_rejections,
        time: state.time,
        reason: last.map(|r| r.to_string()).unwrap_or_default(),
    })
}

/// Mass of the density, used for bookkeeping checks.
pub fn mass(state: &SystemState) -> f64 {
    quadrature(&state.n)
}
