//! Maximum principle, semigroup representation, domination, mean-value
//! constants and growth functionals on solver trajectories.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, SolutionField};
use crate::kernel::{explicit_kernel_a0, numerical_kernel_column, numerical_kernel_row};
use crate::mc::{semigroup_estimate, simulate_density, DensityHistogram, PathConfig};
use crate::operator::OuterBoundary;
use crate::params::{HalfSpacePoint, OperatorParams, ParabolicCylinder};
use crate::rng::{log_uniform, seeded};
use crate::solver::{Solver, SolverConfig, Trajectory};

/// Initial data used by the scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Datum {
    Zero,
    /// `amplitude · exp(-|z - center|² / (2 width²))`.
    Bump { center: HalfSpacePoint, width: f64, amplitude: f64 },
    /// `min(0, amplitude · bump - offset)`.
    ClippedBump { center: HalfSpacePoint, width: f64, amplitude: f64, offset: f64 },
}

impl Datum {
    pub fn eval(&self, z: &HalfSpacePoint) -> f64 {
        let bump = |c: &HalfSpacePoint, w: f64| (-z.dist_sq(c) / (2.0 * w * w)).exp();
        match self {
            Datum::Zero => 0.0,
            Datum::Bump { center, width, amplitude } => amplitude * bump(center, *width),
            Datum::ClippedBump { center, width, amplitude, offset } => (amplitude * bump(center, *width) - offset).min(0.0),
        }
    }

    pub fn field(&self, grid: Arc<Grid>) -> SolutionField {
        SolutionField::from_fn(grid, 0.0, |z| self.eval(z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleScenario {
    pub datum: Datum,
    pub x_extent: f64,
    pub y_extent: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub horizon: f64,
    pub dt: f64,
    pub snapshots: usize,
    pub outer: OuterBoundary,
    pub tolerance: f64,
}

impl MaxPrincipleScenario {
    pub fn new(datum: Datum) -> Self {
        Self {
            datum,
            x_extent: 2.0,
            y_extent: 3.0,
            n_x: 24,
            n_y: 36,
            horizon: 1.0,
            dt: 0.01,
            snapshots: 10,
            outer: OuterBoundary::ZeroDirichlet,
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleOutcome {
    /// Largest value over all snapshots.
    pub max_value: f64,
    pub passed: bool,
}

/// Runs the monotone solver on non-positive data and checks `u ≤ tolerance`
/// at every snapshot.
pub fn max_principle_scenario(params: &OperatorParams, scenario: &MaxPrincipleScenario) -> Result<MaxPrincipleOutcome> {
    let grid = Arc::new(build_grid(params, scenario.x_extent, scenario.y_extent, scenario.n_x, scenario.n_y)?);
    let u0 = scenario.datum.field(grid.clone());
    if u0.max() > 0.0 {
        return Err(Error::InvalidArgument("maximum-principle datum must be non-positive".into()));
    }
    let config = SolverConfig { outer: scenario.outer, ..SolverConfig::monotone(scenario.horizon, scenario.dt) };
    let mut solver = Solver::new(grid, params, &config)?;
    if !solver.operator().is_monotone() {
        return Err(Error::InvalidArgument("discrete operator is not monotone for these parameters and grid".into()));
    }
    let k = scenario.snapshots.max(1);
    let times: Vec<f64> = (1..=k).map(|i| scenario.horizon * i as f64 / k as f64).collect();
    let traj = solver.solve_at(&u0, &times)?;
    let max_value = traj.snapshots.iter().map(|s| s.max()).fold(f64::NEG_INFINITY, f64::max);
    Ok(MaxPrincipleOutcome { max_value, passed: max_value <= scenario.tolerance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub max_rel_deviation: f64,
    pub cells_compared: usize,
    pub support_cells: usize,
}

fn max_rel_deviation(u: &[f64], reference: &[f64], rel_floor: f64) -> (f64, usize) {
    let max = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut dev = 0.0f64;
    let mut n = 0;
    for (a, b) in u.iter().zip(reference) {
        if b.abs() >= rel_floor * max && max > 0.0 {
            dev = dev.max((a - b).abs() / b.abs());
            n += 1;
        }
    }
    (dev, n)
}

/// Compares `solve(u0, t)` with `Σ_m p(t, ·, z_m) u0(z_m) μ(cell_m)` on cells
/// where the solution is at least `1e-3` of its maximum. The kernel is the
/// closed form for `a = 0` and a solver column otherwise.
pub fn representation_check(u0: &SolutionField, t: f64, params: &OperatorParams, config: &SolverConfig) -> Result<RepresentationReport> {
    if u0.min() < 0.0 {
        return Err(Error::InvalidArgument("representation datum must be non-negative".into()));
    }
    let grid = u0.grid.clone();
    let mut solver = Solver::new(grid.clone(), params, config)?;
    let u = solver.solve_at(u0, &[t])?.last().clone();
    let support: Vec<usize> = (0..grid.len()).filter(|&i| u0.values[i] != 0.0).collect();
    let points: Vec<HalfSpacePoint> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let mut reference = vec![0.0; grid.len()];
    if params.is_uncoupled() {
        let rows: Vec<f64> = points
            .par_iter()
            .map(|z| {
                support
                    .iter()
                    .map(|&m| Ok(explicit_kernel_a0(t, z, &points[m], params)? * u0.values[m] * grid.cell_measure(m)))
                    .sum::<Result<f64>>()
            })
            .collect::<Result<_>>()?;
        reference = rows;
    } else {
        let columns: Vec<SolutionField> = support
            .par_iter()
            .map(|&m| numerical_kernel_column(t, &points[m], params, grid.clone(), config))
            .collect::<Result<_>>()?;
        for (col, &m) in columns.iter().zip(&support) {
            let w = u0.values[m] * grid.cell_measure(m);
            reference.iter_mut().zip(&col.values).for_each(|(r, v)| *r += w * v);
        }
    }
    let (dev, n) = max_rel_deviation(&u.values, &reference, 1e-3);
    Ok(RepresentationReport { max_rel_deviation: dev, cells_compared: n, support_cells: support.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub max_rel_deviation: f64,
    pub cells_compared: usize,
    pub min_hits: u64,
    pub paths: usize,
}

/// Endpoint histogram of paths from `source` against the discrete density
/// `p(t, source, ·)` from [`numerical_kernel_row`] on cells with at least
/// `min_hits` endpoints.
pub fn mc_column_check(
    source: &HalfSpacePoint,
    t: f64,
    params: &OperatorParams,
    grid: Arc<Grid>,
    solver_config: &SolverConfig,
    paths: &PathConfig,
    min_hits: u64,
) -> Result<McComparison> {
    let row = numerical_kernel_row(t, source, params, grid.clone(), solver_config)?;
    let hist = simulate_density(source, t, params, paths, grid)?;
    compare_histogram(&hist, &row, min_hits)
}

/// Largest relative gap between histogram density and `reference` over cells
/// with at least `min_hits` endpoints.
pub fn compare_histogram(hist: &DensityHistogram, reference: &SolutionField, min_hits: u64) -> Result<McComparison> {
    if !hist.grid.same_shape(&reference.grid) {
        return Err(Error::GridMismatch("histogram and reference live on different grids".into()));
    }
    let mut dev = 0.0f64;
    let mut n = 0;
    for i in 0..hist.counts.len() {
        if hist.counts[i] >= min_hits {
            let p = reference.values[i];
            dev = dev.max((hist.density[i] - p).abs() / p.abs());
            n += 1;
        }
    }
    Ok(McComparison { max_rel_deviation: dev, cells_compared: n, min_hits, paths: hist.n_paths })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupPoint {
    pub z: HalfSpacePoint,
    pub solver: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
}

/// `solve(u0, t)(z)` against the path average `E_z[u0(Z_t)]` at each point.
pub fn mc_semigroup_check(
    datum: &Datum,
    grid: Arc<Grid>,
    t: f64,
    params: &OperatorParams,
    solver_config: &SolverConfig,
    paths: &PathConfig,
    points: &[HalfSpacePoint],
) -> Result<Vec<SemigroupPoint>> {
    let u0 = datum.field(grid.clone());
    let mut solver = Solver::new(grid, params, solver_config)?;
    let u = solver.solve_at(&u0, &[t])?.last().clone();
    points
        .iter()
        .map(|z| {
            let (m, se) = semigroup_estimate(z, t, |w| datum.eval(w), params, paths)?;
            Ok(SemigroupPoint { z: z.clone(), solver: u.eval(z), monte_carlo: m, std_error: se })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub radii: Vec<f64>,
    /// Largest `v_{r_i} - v_{r_{i+1}}` over cells, snapshots and consecutive radii
    /// (the last comparison is against the untruncated datum).
    pub max_violation: f64,
}

/// Solves from `u0 · 1{|z| < r}` for increasing `r` and checks that the
/// solutions increase with `r` and stay below the untruncated solution.
pub fn domination_check(
    datum: &Datum,
    radii: &[f64],
    params: &OperatorParams,
    grid: Arc<Grid>,
    config: &SolverConfig,
    times: &[f64],
) -> Result<DominationReport> {
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let full = datum.field(grid.clone());
    if full.min() < 0.0 {
        return Err(Error::InvalidArgument("domination datum must be non-negative".into()));
    }
    let mut data: Vec<SolutionField> = radii
        .iter()
        .map(|&r| SolutionField::from_fn(grid.clone(), 0.0, |z| if z.norm_sq() < r * r { datum.eval(z) } else { 0.0 }))
        .collect();
    data.push(full);
    let trajs: Vec<Trajectory> = data
        .par_iter()
        .map(|u0| Solver::new(grid.clone(), params, config)?.solve_at(u0, times))
        .collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    for pair in trajs.windows(2) {
        for (a, b) in pair[0].snapshots.iter().zip(&pair[1].snapshots) {
            for (x, y) in a.values.iter().zip(&b.values) {
                worst = worst.max(x - y);
            }
        }
    }
    Ok(DominationReport { radii, max_violation: worst })
}

/// Time weights for integrating over `[lo, hi]` with one cell per snapshot.
fn time_weights(times: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|k| {
            let a = if k == 0 { times[0] } else { 0.5 * (times[k - 1] + times[k]) };
            let b = if k + 1 == n { times[n - 1] } else { 0.5 * (times[k] + times[k + 1]) };
            (b.min(hi) - a.max(lo)).max(0.0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValueReport {
    pub p: f64,
    pub constant: f64,
    pub evaluated: usize,
    /// Cylinders where `u` vanishes identically.
    pub excluded: usize,
}

/// `sup_cylinders sup_{I(r/2)} |u| / (⨍_{I(r)} |u|^p)^{1/p}`, with `u`
/// extended by zero before the first snapshot. Cylinders must stay two cells
/// inside the grid window and end by the last snapshot.
pub fn mean_value_constant(traj: &Trajectory, cylinders: &[ParabolicCylinder], p: f64) -> Result<MeanValueReport> {
    if !(p > 0.0 && p <= 2.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 2], got {p}")));
    }
    let grid = traj.grid().clone();
    let times = traj.times();
    let t_first = times[0];
    let t_last = *times.last().unwrap();
    let mut constant = 0.0f64;
    let mut excluded = 0;
    for cyl in cylinders {
        let b = &cyl.ball;
        let inside_x = b.center.x.iter().all(|x| x.abs() + b.radius <= grid.x_extent() - 2.0 * grid.h_x());
        let inside_y = b.center.y + b.radius <= grid.y_extent() - 2.0 * grid.h_y();
        if !inside_x || !inside_y || cyl.apex_time > t_last || b.center.x.len() != grid.dim_x() {
            return Err(Error::CylinderExitsDomain(format!("{cyl:?}")));
        }
        let half = cyl.shrink(0.5);
        let cells: Vec<usize> = (0..grid.len()).filter(|&i| b.contains(&grid.point(i))).collect();
        let half_cells: Vec<usize> = cells.iter().copied().filter(|&i| half.ball.contains(&grid.point(i))).collect();
        let volume: f64 = cells.iter().map(|&i| grid.cell_measure(i)).sum();
        if cells.is_empty() || half_cells.is_empty() {
            return Err(Error::CylinderExitsDomain(format!("cylinder resolves no cells: {cyl:?}")));
        }
        let (lo, hi) = cyl.time_range();
        let (hlo, hhi) = half.time_range();
        let mut sup = 0.0f64;
        for (k, s) in traj.snapshots.iter().enumerate() {
            if times[k] > hlo && times[k] <= hhi {
                for &i in &half_cells {
                    sup = sup.max(s.values[i].abs());
                }
            }
        }
        let w = time_weights(&times, lo.max(t_first), hi);
        let integral: f64 = traj
            .snapshots
            .iter()
            .zip(&w)
            .filter(|(_, &w)| w > 0.0)
            .map(|(s, &w)| w * cells.iter().map(|&i| s.values[i].abs().powf(p) * grid.cell_measure(i)).sum::<f64>())
            .sum();
        let mean = integral / ((hi - lo) * volume);
        if sup == 0.0 && mean == 0.0 {
            excluded += 1;
            continue;
        }
        constant = constant.max(sup / mean.powf(1.0 / p));
    }
    Ok(MeanValueReport { p, constant, evaluated: cylinders.len() - excluded, excluded })
}

/// Random cylinders whose balls stay two cells inside the window and whose
/// apex lies in `[t_min, t_max]`; radii log-uniform in `[r_min, r_max]`.
pub fn random_cylinders(grid: &Grid, t_min: f64, t_max: f64, r_min: f64, r_max: f64, n: usize, seed: u64) -> Result<Vec<ParabolicCylinder>> {
    let x_room = grid.x_extent() - 2.0 * grid.h_x();
    let y_room = grid.y_extent() - 2.0 * grid.h_y();
    if grid.dim_x() > 0 && r_max >= x_room || r_max >= y_room {
        return Err(Error::InvalidArgument("cylinder radii do not fit the grid window".into()));
    }
    let mut rng = seeded(seed, 4);
    (0..n)
        .map(|_| {
            let r = log_uniform(&mut rng, r_min, r_max);
            let x = (0..grid.dim_x()).map(|_| rng.random_range(-(x_room - r)..=(x_room - r))).collect();
            let y = rng.random_range(0.0..=(y_room - r));
            let t0 = rng.random_range(t_min..=t_max);
            ParabolicCylinder::new(t0, HalfSpacePoint { x, y }, r)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub beta: f64,
    pub p: f64,
    /// Smallest `C` with `|u| ≤ C e^{β|z|²}` on the grid.
    pub pointwise_constant: f64,
    /// `∫∫ e^{-β|z|²} |u|^p dt dμ`.
    pub weighted_integral: f64,
    /// `(r, ∫∫_{Q(0,r)} |u|^p dt dμ)`.
    pub cylinder_integrals: Vec<(f64, f64)>,
}

impl GrowthReport {
    pub fn is_finite(&self) -> bool {
        self.pointwise_constant.is_finite()
            && self.weighted_integral.is_finite()
            && self.cylinder_integrals.iter().all(|(_, v)| v.is_finite())
    }
}

/// The three growth functionals over the whole trajectory window.
pub fn growth_functionals(traj: &Trajectory, beta: f64, p: f64, radii: &[f64]) -> Result<GrowthReport> {
    if !(p > 0.0) || !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("need p > 0 and beta >= 0, got p = {p}, beta = {beta}")));
    }
    if !traj.is_finite() {
        return Err(Error::NonFinite("trajectory".into()));
    }
    let grid = traj.grid().clone();
    let times = traj.times();
    let w = time_weights(&times, times[0], *times.last().unwrap());
    let points: Vec<HalfSpacePoint> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let decay: Vec<f64> = points.iter().map(|z| (-beta * z.norm_sq()).exp()).collect();
    let mut pointwise_constant = 0.0f64;
    let mut weighted_integral = 0.0;
    let mut cylinder_integrals: Vec<(f64, f64)> = radii.iter().map(|&r| (r, 0.0)).collect();
    for (s, &wt) in traj.snapshots.iter().zip(&w) {
        for i in 0..grid.len() {
            let v = s.values[i].abs();
            pointwise_constant = pointwise_constant.max(v * decay[i]);
            let m = v.powf(p) * grid.cell_measure(i) * wt;
            weighted_integral += decay[i] * m;
            let z = &points[i];
            let r_x = z.x.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (r, acc) in cylinder_integrals.iter_mut() {
                if r_x < *r && z.y < *r {
                    *acc += m;
                }
            }
        }
    }
    Ok(GrowthReport { beta, p, pointwise_constant, weighted_integral, cylinder_integrals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::TimeMethod;

    fn bump(center: HalfSpacePoint, amplitude: f64) -> Datum {
        Datum::Bump { center, width: 0.3, amplitude }
    }

    #[test]
    fn max_principle_scenarios() {
        let p = OperatorParams::new(1, 0.5, &[0.4]).unwrap();
        let c = HalfSpacePoint { x: vec![0.2], y: 0.8 };
        for datum in [
            Datum::Zero,
            bump(c.clone(), -1.0),
            Datum::ClippedBump { center: c.clone(), width: 0.4, amplitude: 2.0, offset: 1.0 },
        ] {
            let zero = datum == Datum::Zero;
            let out = max_principle_scenario(&p, &MaxPrincipleScenario::new(datum)).unwrap();
            assert!(out.passed, "max {}", out.max_value);
            if zero {
                assert_eq!(out.max_value, 0.0);
            }
        }
        assert!(max_principle_scenario(&p, &MaxPrincipleScenario::new(bump(c, 1.0))).is_err());
    }

    #[test]
    fn representation_a0_and_refinement() {
        let p = OperatorParams::uncoupled(0, 1.0).unwrap();
        let datum = Datum::Bump { center: HalfSpacePoint::on_axis(0, 1.0), width: 0.2, amplitude: 1.0 };
        let mut devs = vec![];
        for n in [60, 120] {
            let grid = Arc::new(build_grid(&p, 0.0, 4.0, 1, n).unwrap());
            let dt = 0.25 / n as f64;
            let config = SolverConfig { horizon: 0.25, dt, ..SolverConfig::default() };
            let r = representation_check(&datum.field(grid), 0.25, &p, &config).unwrap();
            devs.push(r.max_rel_deviation);
        }
        assert!(devs[1] <= 0.02, "{devs:?}");
        assert!(devs[0] >= 1.5 * devs[1], "{devs:?}");
    }

    #[test]
    fn representation_coupled_is_linear() {
        let p = OperatorParams::new(1, 0.5, &[0.3]).unwrap();
        let grid = Arc::new(build_grid(&p, 1.5, 2.0, 16, 16).unwrap());
        let two = SolutionField::from_fn(grid.clone(), 0.0, |z| {
            let d1 = z.dist_sq(&HalfSpacePoint { x: vec![-0.3], y: 0.6 });
            let d2 = z.dist_sq(&HalfSpacePoint { x: vec![0.4], y: 1.0 });
            let v = (-d1 / 0.02).exp() + 0.5 * (-d2 / 0.02).exp();
            if v > 1e-3 { v } else { 0.0 }
        });
        let config = SolverConfig::monotone(0.1, 0.01);
        let r = representation_check(&two, 0.1, &p, &config).unwrap();
        assert!(r.support_cells > 1);
        assert!(r.max_rel_deviation < 1e-8, "{}", r.max_rel_deviation);
    }

    #[test]
    fn mc_checks_small() {
        let p = OperatorParams::new(1, 0.5, &[0.5]).unwrap();
        let grid = Arc::new(build_grid(&p, 2.0, 2.5, 20, 25).unwrap());
        let config = SolverConfig { horizon: 0.25, dt: 2.5e-3, ..SolverConfig::default() };
        let source = HalfSpacePoint { x: vec![0.1], y: 0.75 };
        let paths = PathConfig::for_horizon(0.25, 400_000, 11);
        let r = mc_column_check(&source, 0.25, &p, grid.clone(), &config, &paths, 1500).unwrap();
        assert!(r.cells_compared > 5);
        assert!(r.max_rel_deviation < 0.15, "{r:?}");
        let coupled = p.clone();

        let datum = bump(HalfSpacePoint { x: vec![0.0], y: 0.8 }, 1.0);
        let g2 = Arc::new(build_grid(&coupled, 2.5, 3.0, 40, 48).unwrap());
        let pts = vec![HalfSpacePoint { x: vec![0.1], y: 0.7 }, HalfSpacePoint { x: vec![-0.3], y: 1.2 }];
        let paths = PathConfig::for_horizon(0.25, 100_000, 12);
        for s in mc_semigroup_check(&datum, g2, 0.25, &coupled, &config, &paths, &pts).unwrap() {
            assert!((s.solver - s.monte_carlo).abs() < 4.0 * s.std_error + 0.03 * s.solver, "{s:?}");
        }
    }

    #[test]
    fn domination_is_monotone() {
        let p = OperatorParams::new(1, 0.5, &[0.3]).unwrap();
        let grid = Arc::new(build_grid(&p, 2.0, 2.0, 16, 16).unwrap());
        let datum = Datum::Bump { center: HalfSpacePoint { x: vec![0.0], y: 0.5 }, width: 1.0, amplitude: 1.0 };
        let config = SolverConfig::monotone(0.5, 0.02);
        let r = domination_check(&datum, &[1.5, 0.5, 1.0], &p, grid, &config, &[0.1, 0.5]).unwrap();
        assert_eq!(r.radii, vec![0.5, 1.0, 1.5]);
        assert!(r.max_violation <= 1e-12, "{}", r.max_violation);
    }

    fn kernel_trajectory(n_y: usize) -> Trajectory {
        let p = OperatorParams::uncoupled(1, 1.0).unwrap();
        let grid = Arc::new(build_grid(&p, 2.0, 3.0, n_y * 4 / 3, n_y).unwrap());
        let config = SolverConfig { horizon: 0.6, dt: 0.005, time_method: TimeMethod::CrankNicolson, ..SolverConfig::default() };
        let source = HalfSpacePoint { x: vec![0.0], y: 0.8 };
        let delta = SolutionField::point_mass(grid.clone(), &source).unwrap();
        let times: Vec<f64> = (1..=60).map(|k| 0.01 * k as f64).collect();
        let mut s = Solver::new(grid, &p, &config).unwrap();
        let mut traj = s.solve_at(&delta, &times).unwrap();
        // start the window after the singular datum
        traj.snapshots.remove(0);
        traj
    }

    #[test]
    fn mean_value_constants_finite_and_stable() {
        let coarse = kernel_trajectory(24);
        let fine = kernel_trajectory(48);
        let g = coarse.grid().clone();
        let cyl = random_cylinders(&g, 0.3, 0.6, 0.2, 0.5, 20, 9).unwrap();
        let mut by_p = vec![];
        for p in [1.0, 2.0] {
            let a = mean_value_constant(&coarse, &cyl, p).unwrap();
            let b = mean_value_constant(&fine, &cyl, p).unwrap();
            assert!(a.constant.is_finite() && a.constant > 0.0);
            assert!((a.constant / b.constant - 1.0).abs() < 0.25, "{} vs {}", a.constant, b.constant);
            by_p.push(a.constant);
        }
        assert!(by_p.iter().all(|c| c.is_finite()));

        let zero = Trajectory {
            snapshots: coarse.snapshots.iter().map(|s| SolutionField::constant(s.grid.clone(), s.t, 0.0)).collect(),
        };
        let r = mean_value_constant(&zero, &cyl, 2.0).unwrap();
        assert_eq!((r.constant, r.excluded), (0.0, 20));
        let outside = ParabolicCylinder::new(0.5, HalfSpacePoint { x: vec![1.9], y: 1.0 }, 0.3).unwrap();
        assert!(mean_value_constant(&coarse, &[outside], 2.0).is_err());
    }

    #[test]
    fn growth_functionals_scale() {
        let traj = kernel_trajectory(24);
        let a = growth_functionals(&traj, 0.5, 2.0, &[0.5, 1.0, 2.0]).unwrap();
        assert!(a.is_finite());
        let scaled = Trajectory {
            snapshots: traj
                .snapshots
                .iter()
                .map(|s| SolutionField::new(s.grid.clone(), s.t, s.values.iter().map(|v| 10.0 * v).collect()).unwrap())
                .collect(),
        };
        let b = growth_functionals(&scaled, 0.5, 2.0, &[0.5, 1.0, 2.0]).unwrap();
        assert!((b.pointwise_constant / a.pointwise_constant - 10.0).abs() < 1e-12);
        assert!((b.weighted_integral / a.weighted_integral - 100.0).abs() < 1e-9);
        let tab = &a.cylinder_integrals;
        assert!(tab.windows(2).all(|w| w[0].1 <= w[1].1));
        for (r, v) in tab {
            assert!(*v <= a.pointwise_constant.powi(2) * (0.5 * r * r).exp() * 1e3);
        }
    }
}
