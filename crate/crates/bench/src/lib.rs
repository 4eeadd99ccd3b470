//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use harnack_core::{build_grid, Grid, HalfSpacePoint, OperatorParams, SolutionField};

/// `N = 1`, `c = 0.5`, `a = (0.5)`.
pub fn coupled_params() -> OperatorParams {
    OperatorParams::new(1, 0.5, &[0.5]).expect("valid parameters")
}

/// Square grid on `[-3, 3] × [0, 4]` with `n` cells per axis.
pub fn square_grid(params: &OperatorParams, n: usize) -> Arc<Grid> {
    Arc::new(build_grid(params, 3.0, 4.0, n, n).expect("valid grid"))
}

/// Gaussian bump centred at `(0, 1)`.
pub fn bump(grid: Arc<Grid>) -> SolutionField {
    let c = HalfSpacePoint { x: vec![0.0; grid.dim_x()], y: 1.0 };
    SolutionField::from_fn(grid, 0.0, move |z| (-z.dist_sq(&c) / 0.18).exp())
}
