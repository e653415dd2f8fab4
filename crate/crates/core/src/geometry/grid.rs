use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centered grid on a rectangle `[0, Lx] x [0, Ly]`.
///
/// One-dimensional grids are stored with a single row (`ny = 1`) so every
/// stencil can treat them as a degenerate 2D case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: [f64; 2],
    cells: [usize; 2],
}

impl Grid {
    pub fn new_1d(length: f64, nx: usize) -> Result<Self> {
        Self::build(1, [length, 1.0], [nx, 1])
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::build(2, [lx, ly], [nx, ny])
    }

    /// Unit interval or unit square with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        match dim {
            1 => Self::new_1d(1.0, n),
            2 => Self::new_2d(1.0, 1.0, n, n),
            d => Err(Error::InvalidGrid(format!("dimension {d} not in {{1,2}}"))),
        }
    }

    fn build(dim: usize, extent: [f64; 2], cells: [usize; 2]) -> Result<Self> {
        for a in 0..dim {
            if !(extent[a].is_finite() && extent[a] > 0.0) {
                return Err(Error::InvalidGrid(format!("extent {} on axis {a}", extent[a])));
            }
            if cells[a] == 0 {
                return Err(Error::InvalidGrid(format!("zero cells on axis {a}")));
            }
        }
        Ok(Self { dim, extent, cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.extent[axis] / self.cells[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        match self.dim {
            1 => self.h(0),
            _ => self.h(0) * self.h(1),
        }
    }

    pub fn measure(&self) -> f64 {
        match self.dim {
            1 => self.extent[0],
            _ => self.extent[0] * self.extent[1],
        }
    }

    /// Row-major index with x fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    /// Cell-center coordinates.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let x = (i as f64 + 0.5) * self.h(0);
        let y = if self.dim == 1 { 0.0 } else { (j as f64 + 0.5) * self.h(1) };
        (x, y)
    }

    /// True when the grid lies outside the N >= 2 setting of the theory.
    pub fn outside_theory(&self) -> bool {
        self.dim < 2
    }

    /// First nonzero Neumann eigenvalue of the rectangle.
    pub fn lambda2(&self) -> f64 {
        (0..self.dim)
            .map(|a| (std::f64::consts::PI / self.extent[a]).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    /// Refined copy with `factor` times as many cells per axis.
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = *self;
        g.cells[0] *= factor;
        if self.dim == 2 {
            g.cells[1] *= factor;
        }
        g
    }
}
