//! Time integration of `∂_t u = L u` on a truncated half-space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, SolutionField};
use crate::linsolve::{bicgstab, pcg, thomas, SolveStats};
use crate::operator::{CrossStencil, CsrMatrix, DiscreteOperator, OuterBoundary};
use crate::params::OperatorParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Axial part implicit, mixed term explicit (CFL-limited).
    ImplicitAxialExplicitCross,
    #[default]
    FullyImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeMethod {
    BackwardEuler,
    /// Crank–Nicolson; the first steps are replaced by backward-Euler half
    /// steps (Rannacher start) to damp the point-mass transient.
    #[default]
    CrankNicolson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub horizon: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub time_method: TimeMethod,
    pub cross_stencil: CrossStencil,
    pub outer: OuterBoundary,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rannacher_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dt: 1e-3,
            scheme: Scheme::FullyImplicit,
            time_method: TimeMethod::CrankNicolson,
            cross_stencil: CrossStencil::Monotone,
            outer: OuterBoundary::Neumann,
            tolerance: 1e-13,
            max_iterations: 5000,
            rannacher_steps: 4,
        }
    }
}

impl SolverConfig {
    /// Backward Euler, fully implicit, positive-type mixed stencil: every
    /// step is an M-matrix solve, so signs are preserved.
    pub fn monotone(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            time_method: TimeMethod::BackwardEuler,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "solver tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Snapshots of a solve, in increasing time.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<SolutionField>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &SolutionField {
        self.snapshots.last().expect("trajectory is never empty")
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.snapshots[0].grid
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().all(|s| s.is_finite())
    }
}

enum Factor {
    Tridiagonal(Vec<f64>, Vec<f64>, Vec<f64>),
    /// `W M` is symmetric positive definite; `weights` holds `W`.
    Symmetric { m: CsrMatrix, weights: Vec<f64>, inv_diag: Vec<f64> },
    General(CsrMatrix),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverStats {
    pub steps: usize,
    pub iterations: usize,
    pub max_residual: f64,
}

/// Owns the assembled operator and cached step matrices.
pub struct Solver {
    op: DiscreteOperator,
    config: SolverConfig,
    cell_weights: Vec<f64>,
    cache: Vec<(f64, Factor)>,
    steps_taken: usize,
    pub stats: SolverStats,
}

impl Solver {
    pub fn new(grid: Arc<Grid>, params: &OperatorParams, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let op = DiscreteOperator::new(grid.clone(), params, config.cross_stencil, config.outer)?;
        let cell_weights = (0..grid.len()).map(|i| grid.weights()[i % grid.n_y()]).collect();
        Ok(Self {
            op,
            config: config.clone(),
            cell_weights,
            cache: Vec::new(),
            steps_taken: 0,
            stats: SolverStats::default(),
        })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Largest admissible step for the explicit mixed term, `0.9 h_x h_y / (4 |a| N)`.
    pub fn cfl_limit(&self) -> f64 {
        let g = &self.op.grid;
        let denom = 4.0 * self.op.params.a_norm() * self.op.params.dim_x() as f64;
        if denom == 0.0 {
            f64::INFINITY
        } else {
            0.9 * g.h_x() * g.h_y() / denom
        }
    }

    fn explicit_cross(&self) -> bool {
        self.config.scheme == Scheme::ImplicitAxialExplicitCross && self.op.has_cross()
    }

    fn implicit_matrix(&self) -> &CsrMatrix {
        if self.explicit_cross() {
            &self.op.axial
        } else {
            &self.op.full
        }
    }

    fn factor(&mut self, theta_dt: f64) -> Result<usize> {
        if let Some(pos) = self.cache.iter().position(|(k, _)| *k == theta_dt) {
            return Ok(pos);
        }
        let m = self.implicit_matrix().shifted(1.0, -theta_dt);
        let factor = if self.op.grid.dim_x() == 0 {
            let (sub, diag, sup) = m
                .tridiagonal_bands()
                .ok_or_else(|| Error::InvalidArgument("half-line system is not tridiagonal".into()))?;
            Factor::Tridiagonal(sub, diag, sup)
        } else if !self.op.has_cross() || self.explicit_cross() {
            let inv_diag = m
                .diagonal()
                .iter()
                .zip(&self.cell_weights)
                .map(|(d, w)| 1.0 / (d * w))
                .collect();
            Factor::Symmetric { m, weights: self.cell_weights.clone(), inv_diag }
        } else {
            Factor::General(m)
        };
        if self.cache.len() >= 4 {
            self.cache.remove(0);
        }
        self.cache.push((theta_dt, factor));
        Ok(self.cache.len() - 1)
    }

    fn linear_solve(&mut self, theta_dt: f64, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        let pos = self.factor(theta_dt)?;
        let tol = self.config.tolerance;
        let max_iter = self.config.max_iterations;
        let mut x = guess.to_vec();
        let stats = match &self.cache[pos].1 {
            Factor::Tridiagonal(sub, diag, sup) => {
                x = thomas(sub, diag, sup, rhs)?;
                SolveStats { iterations: 1, residual: 0.0 }
            }
            Factor::Symmetric { m, weights, inv_diag } => {
                let wb: Vec<f64> = rhs.iter().zip(weights).map(|(b, w)| b * w).collect();
                pcg(
                    |v, out| {
                        m.mul_vec(v, out);
                        out.iter_mut().zip(weights).for_each(|(o, w)| *o *= w);
                    },
                    inv_diag,
                    &wb,
                    &mut x,
                    tol,
                    max_iter,
                )?
            }
            Factor::General(m) => bicgstab(m, rhs, &mut x, tol, max_iter)?,
        };
        self.stats.iterations += stats.iterations;
        self.stats.max_residual = self.stats.max_residual.max(stats.residual);
        Ok(x)
    }

    fn theta_step(&mut self, u: &[f64], dt: f64, theta: f64) -> Result<Vec<f64>> {
        let implicit = self.implicit_matrix();
        let mut rhs = u.to_vec();
        if theta < 1.0 {
            let lu = implicit.apply(u);
            for (r, l) in rhs.iter_mut().zip(&lu) {
                *r += (1.0 - theta) * dt * l;
            }
        }
        if self.explicit_cross() {
            let xu = self.op.cross.apply(u);
            for (r, x) in rhs.iter_mut().zip(&xu) {
                *r += dt * x;
            }
        }
        self.linear_solve(theta * dt, &rhs, u)
    }

    /// One step of size `dt` from `u`.
    pub fn step(&mut self, u: &SolutionField, dt: f64) -> Result<SolutionField> {
        if !Arc::ptr_eq(&u.grid, &self.op.grid) && !u.grid.same_shape(&self.op.grid) {
            return Err(Error::GridMismatch("field lives on a different grid".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if self.explicit_cross() && dt > self.cfl_limit() {
            return Err(Error::Cfl { dt, limit: self.cfl_limit() });
        }
        let values = match self.config.time_method {
            TimeMethod::BackwardEuler => self.theta_step(&u.values, dt, 1.0)?,
            TimeMethod::CrankNicolson if self.steps_taken < self.config.rannacher_steps => {
                let half = self.theta_step(&u.values, 0.5 * dt, 1.0)?;
                self.theta_step(&half, 0.5 * dt, 1.0)?
            }
            TimeMethod::CrankNicolson => self.theta_step(&u.values, dt, 0.5)?,
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("solution blew up at t = {}", u.t + dt)));
        }
        self.steps_taken += 1;
        self.stats.steps += 1;
        Ok(SolutionField { grid: u.grid.clone(), t: u.t + dt, values })
    }

    /// Integrates from `u0` and records a snapshot at each requested time
    /// (which must be `>= u0.t`). Step sizes are shrunk so every snapshot
    /// time is hit exactly. The initial field is always the first snapshot.
    pub fn solve_at(&mut self, u0: &SolutionField, times: &[f64]) -> Result<Trajectory> {
        let mut snapshots = vec![u0.clone()];
        let mut current = u0.clone();
        let mut sorted: Vec<f64> = times.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        for &target in &sorted {
            if target < current.t {
                return Err(Error::InvalidArgument(format!(
                    "snapshot time {target} precedes t = {}",
                    current.t
                )));
            }
            let span = target - current.t;
            if span <= 0.0 {
                continue;
            }
            let n = ((span / self.config.dt) - 1e-9).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            let start = current.t;
            for k in 0..n {
                current = self.step(&current, dt)?;
                current.t = start + (k + 1) as f64 * dt;
            }
            current.t = target;
            snapshots.push(current.clone());
        }
        Ok(Trajectory { snapshots })
    }
}

/// Advances `u` by one step with a freshly assembled operator.
pub fn step(u: &SolutionField, dt: f64, params: &OperatorParams, config: &SolverConfig) -> Result<SolutionField> {
    Solver::new(u.grid.clone(), params, config)?.step(u, dt)
}

/// Solves up to `config.horizon`; snapshots at the start and the end.
pub fn solve(u0: &SolutionField, params: &OperatorParams, config: &SolverConfig) -> Result<Trajectory> {
    Solver::new(u0.grid.clone(), params, config)?.solve_at(u0, &[u0.t + config.horizon])
}

/// `max` over `x` columns of `|y^c D_y u|` at the first interior face,
/// from the one-sided difference of the two lowest cells.
pub fn weighted_neumann_residual(u: &SolutionField) -> f64 {
    let g = &u.grid;
    let fw = g.face_weights()[0];
    (0..g.n_columns())
        .map(|col| {
            let d = u.values[g.index(col, 1)] - u.values[g.index(col, 0)];
            (fw * d / g.h_y()).abs()
        })
        .fold(0.0, f64::max)
}

/// Mass per unit time that would leave through the outer faces if they were
/// absorbing: `Σ_faces y^c |u| area / (h/2)`. Small values certify that
/// truncating the domain is harmless.
pub fn outer_boundary_flux(u: &SolutionField) -> f64 {
    let g = &u.grid;
    let n = g.dim_x();
    let hx = g.h_x();
    let mut total = 0.0;
    let top = g.y_extent().powf(g.c()) * hx.powi(n as i32) * 2.0 / g.h_y();
    for col in 0..g.n_columns() {
        total += top * u.values[g.index(col, g.n_y() - 1)].abs();
    }
    if n > 0 {
        let side = g.h_y() * hx.powi(n as i32 - 1) * 2.0 / hx;
        for idx in 0..g.len() {
            let (ix, j) = g.split(idx);
            let faces = (0..n).filter(|&k| ix[k] == 0).count() + (0..n).filter(|&k| ix[k] + 1 == g.n_x()).count();
            if faces > 0 {
                total += faces as f64 * side * g.weights()[j] * u.values[idx].abs();
            }
        }
    }
    total
}
