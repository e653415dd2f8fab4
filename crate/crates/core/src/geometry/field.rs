use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// Default tolerance on the discrete divergence of a solenoidal field.
pub const DIV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at cell {k}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at cell centers (`y = 0` in 1D).
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Checks the density invariant (all values nonnegative).
    pub fn check_density(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(k) => Err(Error::Precondition(format!(
                "density field negative at cell {k}: {:e}",
                self.values[k]
            ))),
            None => Ok(()),
        }
    }

    pub(crate) fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Cell-centered vector field. Face values are the averages of adjacent cells,
/// and the normal component vanishes on the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    grid: Grid,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::InvalidArgument("vector component length".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vector component".into()));
        }
        Ok(Self { grid, x, y })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, x: vec![0.0; grid.len()], y: vec![0.0; grid.len()] }
    }

    /// Velocity `(psi_y, -psi_x)` from a stream function sampled at cell
    /// centers. Ghost values are odd reflections, which makes the boundary
    /// normal flux consistent with zero and the discrete divergence vanish to
    /// rounding.
    pub fn from_stream_function(grid: Grid, psi: impl Fn(f64, f64) -> f64) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut vals = vec![0.0; grid.len()];
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = grid.center(i, j);
                vals[grid.idx(i, j)] = psi(x, y);
            }
        }
        let ext = |i: isize, j: isize| -> f64 {
            let mut s = 1.0;
            let ii = if i < 0 {
                s = -s;
                0
            } else if i >= nx as isize {
                s = -s;
                nx - 1
            } else {
                i as usize
            };
            let jj = if j < 0 {
                s = -s;
                0
            } else if j >= ny as isize {
                s = -s;
                ny - 1
            } else {
                j as usize
            };
            s * vals[grid.idx(ii, jj)]
        };
        let mut ux = vec![0.0; grid.len()];
        let mut uy = vec![0.0; grid.len()];
        if grid.dim() == 2 {
            let (hx, hy) = (grid.h(0), grid.h(1));
            for j in 0..ny {
                for i in 0..nx {
                    let (ii, jj) = (i as isize, j as isize);
                    let k = grid.idx(i, j);
                    ux[k] = (ext(ii, jj + 1) - ext(ii, jj - 1)) / (2.0 * hy);
                    uy[k] = -(ext(ii + 1, jj) - ext(ii - 1, jj)) / (2.0 * hx);
                }
            }
        }
        Self { grid, x: ux, y: uy }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        if axis == 0 {
            &self.x
        } else {
            &self.y
        }
    }

    /// Normal velocity on the x-face between cells `(i, j)` and `(i+1, j)`.
    #[inline]
    pub fn face_x(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        0.5 * (self.x[g.idx(i, j)] + self.x[g.idx(i + 1, j)])
    }

    /// Normal velocity on the y-face between cells `(i, j)` and `(i, j+1)`.
    #[inline]
    pub fn face_y(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        0.5 * (self.y[g.idx(i, j)] + self.y[g.idx(i, j + 1)])
    }

    /// Cellwise divergence of the face flux.
    pub fn divergence(&self) -> ScalarField {
        let g = self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.h(0), g.h(1));
        let mut out = vec![0.0; g.len()];
        for j in 0..ny {
            for i in 0..nx {
                let e = if i + 1 < nx { self.face_x(i, j) } else { 0.0 };
                let w = if i > 0 { self.face_x(i - 1, j) } else { 0.0 };
                let mut d = (e - w) / hx;
                if ny > 1 {
                    let n = if j + 1 < ny { self.face_y(i, j) } else { 0.0 };
                    let s = if j > 0 { self.face_y(i, j - 1) } else { 0.0 };
                    d += (n - s) / hy;
                }
                out[g.idx(i, j)] = d;
            }
        }
        ScalarField::from_vec_unchecked(g, out)
    }

    pub fn max_divergence(&self) -> f64 {
        self.divergence().max_abs()
    }

    pub fn ensure_solenoidal(&self, tol: f64) -> Result<()> {
        let max_div = self.max_divergence();
        if max_div <= tol {
            Ok(())
        } else {
            Err(Error::NonSolenoidal { max_div, tol })
        }
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let values = self.x.iter().zip(&self.y).map(|(a, b)| a.hypot(*b)).collect();
        ScalarField::from_vec_unchecked(self.grid, values)
    }

    pub fn max_abs_face(&self) -> f64 {
        let g = &self.grid;
        let mut m: f64 = 0.0;
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                if i + 1 < g.nx() {
                    m = m.max(self.face_x(i, j).abs());
                }
                if j + 1 < g.ny() {
                    m = m.max(self.face_y(i, j).abs());
                }
            }
        }
        m
    }
}
