mod field;
mod grid;
pub mod io;
mod ops;

pub use field::{ScalarField, VectorField, DIV_TOL};
pub use grid::Grid;
pub use ops::{
    advect, chemotaxis_div, diffusion_conductances, gaussian_bump, gradient, level_set_measure, lq_norm, mean,
    neumann_laplacian, nonlinear_diffusion_div, quadrature, truncate_plus, upwind_cross_div, FaceCoeffs,
};
pub(crate) use ops::advect_unchecked;
