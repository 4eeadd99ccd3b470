//! Numerical laboratory for the degenerate parabolic operator
//! `D_t - Δ_x - 2a·∇_x D_y - D_yy - (c/y) D_y` on the upper half-space with
//! the weighted Neumann condition `y^c D_y u → 0` at `y = 0`.

pub mod barrier;
pub mod error;
pub mod grid;
pub mod harnack;
pub mod kernel;
pub mod linsolve;
pub mod mc;
pub mod measure;
pub mod operator;
pub mod params;
pub mod quad;
pub mod report;
pub mod rng;
pub mod solver;
pub mod special;
pub mod uniqueness;

pub use error::{Error, Result};
pub use params::{validate_params, CylinderBall, HalfSpacePoint, OperatorParams, ParabolicCylinder};
pub use grid::{build_grid, Grid, SolutionField};
pub use operator::{apply_operator, CrossStencil, OuterBoundary};
pub use solver::{solve, step, weighted_neumann_residual, Scheme, Solver, SolverConfig, TimeMethod, Trajectory};
