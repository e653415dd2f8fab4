//! Finite-volume operators with homogeneous Neumann (no-flux) boundaries.
//!
//! Ghost cells mirror the adjacent interior value, so every boundary face
//! carries zero diffusive flux and every flux-form operator telescopes.

use super::field::{ScalarField, VectorField, DIV_TOL};
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::model::{DiffusionSpec, SensitivitySpec};

/// Midpoint-rule integral over the domain.
pub fn quadrature(f: &ScalarField) -> f64 {
    f.values().iter().sum::<f64>() * f.grid().cell_volume()
}

/// Mean value over the domain.
pub fn mean(f: &ScalarField) -> f64 {
    quadrature(f) / f.grid().measure()
}

/// Discrete `L^q` norm; `q = f64::INFINITY` gives the cell maximum of `|f|`.
pub fn lq_norm(f: &ScalarField, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidArgument(format!("L^q norm needs q >= 1, got {q}")));
    }
    if q.is_infinite() {
        return Ok(f.max_abs());
    }
    let vol = f.grid().cell_volume();
    let s: f64 = if q == 1.0 {
        f.values().iter().map(|v| v.abs()).sum()
    } else if q == 2.0 {
        f.values().iter().map(|v| v * v).sum()
    } else {
        f.values().iter().map(|v| v.abs().powf(q)).sum()
    };
    Ok((s * vol).powf(1.0 / q))
}

#[inline]
fn ghost(i: isize, n: usize) -> usize {
    if i < 0 {
        0
    } else if i >= n as isize {
        n - 1
    } else {
        i as usize
    }
}

/// Central differences with mirrored ghosts.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = *f.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.h(0), g.h(1));
    let v = f.values();
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            let e = v[g.idx(ghost(i as isize + 1, nx), j)];
            let w = v[g.idx(ghost(i as isize - 1, nx), j)];
            gx[k] = (e - w) / (2.0 * hx);
            if ny > 1 {
                let n = v[g.idx(i, ghost(j as isize + 1, ny))];
                let s = v[g.idx(i, ghost(j as isize - 1, ny))];
                gy[k] = (n - s) / (2.0 * hy);
            }
        }
    }
    VectorField::new(g, gx, gy).expect("finite input gives finite gradient")
}

/// Face conductances of a symmetric flux operator `div(k grad x)`.
///
/// `kx[j * (nx - 1) + i]` sits between cells `(i, j)` and `(i + 1, j)`;
/// `ky[j * nx + i]` between `(i, j)` and `(i, j + 1)`.
#[derive(Debug, Clone)]
pub struct FaceCoeffs {
    pub grid: Grid,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
}

impl FaceCoeffs {
    pub fn uniform(grid: Grid, k: f64) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        Self {
            grid,
            kx: vec![k; (nx - 1) * ny],
            ky: vec![k; nx * ny.saturating_sub(1)],
        }
    }

    /// `out = div(k grad x)`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let cx = 1.0 / (g.h(0) * g.h(0));
        let cy = 1.0 / (g.h(1) * g.h(1));
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx - 1 {
                let k = self.kx[j * (nx - 1) + i];
                let flux = k * (x[row + i + 1] - x[row + i]) * cx;
                out[row + i] += flux;
                out[row + i + 1] -= flux;
            }
        }
        for j in 0..ny.saturating_sub(1) {
            let row = j * nx;
            for i in 0..nx {
                let k = self.ky[row + i];
                let flux = k * (x[row + nx + i] - x[row + i]) * cy;
                out[row + i] += flux;
                out[row + nx + i] -= flux;
            }
        }
    }

    /// Diagonal of `-div(k grad .)`, for Jacobi preconditioning.
    pub fn neg_diagonal(&self) -> Vec<f64> {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let cx = 1.0 / (g.h(0) * g.h(0));
        let cy = 1.0 / (g.h(1) * g.h(1));
        let mut d = vec![0.0; g.len()];
        for j in 0..ny {
            for i in 0..nx - 1 {
                let k = self.kx[j * (nx - 1) + i] * cx;
                d[j * nx + i] += k;
                d[j * nx + i + 1] += k;
            }
        }
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx {
                let k = self.ky[j * nx + i] * cy;
                d[j * nx + i] += k;
                d[(j + 1) * nx + i] += k;
            }
        }
        d
    }

    pub fn max_coefficient(&self) -> f64 {
        self.kx.iter().chain(&self.ky).fold(0.0, |m: f64, v| m.max(*v))
    }
}

/// Conservative five-point (three-point in 1D) Laplacian.
pub fn neumann_laplacian(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let mut out = vec![0.0; g.len()];
    FaceCoeffs::uniform(g, 1.0).apply(f.values(), &mut out);
    ScalarField::from_vec_unchecked(g, out)
}

/// Face conductances `a0 (n+1)^alpha (|grad n|^2 + eps^2)^((p-2)/2)` with the
/// density factor averaged over the two cells and the gradient taken from the
/// normal difference plus the averaged tangential central difference.
pub fn diffusion_conductances(n: &ScalarField, spec: &DiffusionSpec, eps_reg: f64) -> Result<FaceCoeffs> {
    let p = spec.effective_p();
    if p < 2.0 && eps_reg <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "p = {p} < 2 needs a positive regularization, got eps = {eps_reg}"
        )));
    }
    if p <= 1.0 {
        return Err(Error::InvalidArgument(format!("diffusion exponent p = {p} must exceed 1")));
    }
    let g = *n.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.h(0), g.h(1));
    let v = n.values();
    let dens: Vec<f64> = v.iter().map(|&s| spec.density_factor(s)).collect();
    let grad = if p != 2.0 { Some(gradient(n)) } else { None };
    let mut coeffs = FaceCoeffs::uniform(g, 0.0);
    let eps2 = eps_reg * eps_reg;
    let expo = 0.5 * (p - 2.0);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let (a, b) = (g.idx(i, j), g.idx(i + 1, j));
            let mut k = 0.5 * (dens[a] + dens[b]);
            if let Some(gr) = &grad {
                let dn = (v[b] - v[a]) / hx;
                let gt = 0.5 * (gr.component(1)[a] + gr.component(1)[b]);
                k *= (dn * dn + gt * gt + eps2).powf(expo);
            }
            coeffs.kx[j * (nx - 1) + i] = k;
        }
    }
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            let (a, b) = (g.idx(i, j), g.idx(i, j + 1));
            let mut k = 0.5 * (dens[a] + dens[b]);
            if let Some(gr) = &grad {
                let dn = (v[b] - v[a]) / hy;
                let gt = 0.5 * (gr.component(0)[a] + gr.component(0)[b]);
                k *= (dn * dn + gt * gt + eps2).powf(expo);
            }
            coeffs.ky[j * nx + i] = k;
        }
    }
    Ok(coeffs)
}

/// Flux-form `div(a(grad n, n) grad n)`.
pub fn nonlinear_diffusion_div(n: &ScalarField, spec: &DiffusionSpec, eps_reg: f64) -> Result<ScalarField> {
    let coeffs = diffusion_conductances(n, spec, eps_reg)?;
    let mut out = vec![0.0; n.grid().len()];
    coeffs.apply(n.values(), &mut out);
    Ok(ScalarField::from_vec_unchecked(*n.grid(), out))
}

/// `-div(b grad c)` with `b` given per cell and upwinded along the sign of
/// the face-normal difference of `c`.
pub fn upwind_cross_div(b: &[f64], c: &ScalarField) -> ScalarField {
    let g = *c.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let cx = 1.0 / (g.h(0) * g.h(0));
    let cy = 1.0 / (g.h(1) * g.h(1));
    let cv = c.values();
    let mut out = vec![0.0; g.len()];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx - 1 {
            let (a, e) = (row + i, row + i + 1);
            let dc = cv[e] - cv[a];
            let bf = if dc > 0.0 { b[a] } else { b[e] };
            let flux = bf * dc * cx;
            out[a] -= flux;
            out[e] += flux;
        }
    }
    for j in 0..ny.saturating_sub(1) {
        let row = j * nx;
        for i in 0..nx {
            let (a, e) = (row + i, row + nx + i);
            let dc = cv[e] - cv[a];
            let bf = if dc > 0.0 { b[a] } else { b[e] };
            let flux = bf * dc * cy;
            out[a] -= flux;
            out[e] += flux;
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

/// Chemotactic term `-div(b(n) grad c)`.
pub fn chemotaxis_div(n: &ScalarField, c: &ScalarField, spec: &SensitivitySpec) -> Result<ScalarField> {
    n.same_grid(c)?;
    let b: Vec<f64> = n.values().iter().map(|&s| spec.eval(s)).collect();
    Ok(upwind_cross_div(&b, c))
}

/// Conservative upwind `div(u f)`; rejects velocity fields that are not
/// discretely divergence-free.
pub fn advect(f: &ScalarField, u: &VectorField) -> Result<ScalarField> {
    if f.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    u.ensure_solenoidal(DIV_TOL)?;
    Ok(advect_unchecked(f, u))
}

pub(crate) fn advect_unchecked(f: &ScalarField, u: &VectorField) -> ScalarField {
    let g = *f.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.h(0), g.h(1));
    let v = f.values();
    let mut out = vec![0.0; g.len()];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx - 1 {
            let (a, e) = (row + i, row + i + 1);
            let uf = u.face_x(i, j);
            let flux = uf * if uf > 0.0 { v[a] } else { v[e] } / hx;
            out[a] += flux;
            out[e] -= flux;
        }
    }
    for j in 0..ny.saturating_sub(1) {
        let row = j * nx;
        for i in 0..nx {
            let (a, e) = (row + i, row + nx + i);
            let uf = u.face_y(i, j);
            let flux = uf * if uf > 0.0 { v[a] } else { v[e] } / hy;
            out[a] += flux;
            out[e] -= flux;
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

/// Measure of `{f > k}` (strict).
pub fn level_set_measure(f: &ScalarField, k: f64) -> f64 {
    f.values().iter().filter(|&&v| v > k).count() as f64 * f.grid().cell_volume()
}

/// Cellwise `(f - k)_+`.
pub fn truncate_plus(f: &ScalarField, k: f64) -> ScalarField {
    f.map(|v| (v - k).max(0.0))
}

/// Gaussian bump `exp(-|x - center|^2 / width^2)` rescaled to the given
/// spatial mean.
pub fn gaussian_bump(grid: Grid, center: (f64, f64), width: f64, target_mean: f64) -> ScalarField {
    let f = ScalarField::from_fn(grid, |x, y| {
        let dy = if grid.dim() == 2 { y - center.1 } else { 0.0 };
        (-((x - center.0).powi(2) + dy * dy) / (width * width)).exp()
    });
    let s = target_mean / mean(&f);
    f.map(|v| v * s)
}
