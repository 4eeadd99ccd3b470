//! Heat kernel of `L` with respect to `μ`: the closed form at `a = 0`,
//! numerical columns for any `a`, two-sided envelopes and their fitting.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{Grid, SolutionField};
use crate::linsolve::bicgstab;
use crate::measure::ball_volume_at;
use crate::operator::{CsrMatrix, DiscreteOperator};
use crate::params::{HalfSpacePoint, OperatorParams};
use crate::quad::{integrate, integrate_to_infinity, QuadOptions};
use crate::rng::{log_uniform, seeded};
use crate::solver::{Solver, SolverConfig, TimeMethod};
use crate::special::ln_bessel_i_scaled;

/// `ln b_c(t, y1, y2)` where
/// `b_c = (2t)^{-1} (y1 y2)^{-ν} I_ν(y1 y2 / 2t) exp(-(y1² + y2²)/4t)`, `ν = (c-1)/2`.
pub fn ln_bessel_kernel(t: f64, y1: f64, y2: f64, c: f64) -> f64 {
    let nu = 0.5 * (c - 1.0);
    let q = y1 * y2 / (2.0 * t);
    if q == 0.0 {
        // (y1 y2)^{-ν} I_ν(q) → (4t)^{-ν} / Γ(ν+1)
        return -(2.0 * t).ln() - nu * (4.0 * t).ln() - ln_gamma(nu + 1.0) - (y1 * y1 + y2 * y2) / (4.0 * t);
    }
    let ln_i = ln_bessel_i_scaled(nu, q).expect("order > -1 for c > -1");
    -(2.0 * t).ln() - nu * (y1 * y2).ln() + ln_i - (y1 - y2) * (y1 - y2) / (4.0 * t)
}

fn check_explicit(t: f64, z1: &HalfSpacePoint, z2: &HalfSpacePoint, params: &OperatorParams) -> Result<()> {
    if !params.is_uncoupled() {
        return Err(Error::InvalidArgument("closed-form kernel requires a = 0".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    if z1.x.len() != params.dim_x() || z2.x.len() != params.dim_x() {
        return Err(Error::InvalidArgument("point dimension does not match N".into()));
    }
    if z1.y < 0.0 || z2.y < 0.0 {
        return Err(Error::InvalidArgument("points must lie in the closed half-space".into()));
    }
    Ok(())
}

/// `ln p(t, z1, z2)` for `a = 0`.
pub fn ln_explicit_kernel_a0(t: f64, z1: &HalfSpacePoint, z2: &HalfSpacePoint, params: &OperatorParams) -> Result<f64> {
    check_explicit(t, z1, z2, params)?;
    let n = params.dim_x() as f64;
    let dx2: f64 = z1.x.iter().zip(&z2.x).map(|(a, b)| (a - b) * (a - b)).sum();
    let gauss = -0.5 * n * (4.0 * std::f64::consts::PI * t).ln() - dx2 / (4.0 * t);
    Ok(gauss + ln_bessel_kernel(t, z1.y, z2.y, params.c()))
}

/// `p(t, z1, z2) = (4πt)^{-N/2} e^{-|x1-x2|²/4t} b_c(t, y1, y2)`, density in `z2` w.r.t. `μ`.
pub fn explicit_kernel_a0(t: f64, z1: &HalfSpacePoint, z2: &HalfSpacePoint, params: &OperatorParams) -> Result<f64> {
    ln_explicit_kernel_a0(t, z1, z2, params).map(f64::exp)
}

/// Solves from the `μ`-normalized single-cell mass at `source` up to time `t`.
pub fn numerical_kernel_column(
    t: f64,
    source: &HalfSpacePoint,
    params: &OperatorParams,
    grid: Arc<Grid>,
    config: &SolverConfig,
) -> Result<SolutionField> {
    let delta = SolutionField::point_mass(grid.clone(), source)?;
    let mut solver = Solver::new(grid, params, config)?;
    Ok(solver.solve_at(&delta, &[t])?.last().clone())
}

/// `p(t, source, ·)`: the unit mass in the source cell is moved by the
/// transposed operator (Crank–Nicolson with backward Euler start steps) and
/// divided by the cell measures. This is the density of the process started
/// at `source`; it differs from [`numerical_kernel_column`] when `L` is not
/// symmetric, which is the case for `a ≠ 0`.
pub fn numerical_kernel_row(
    t: f64,
    source: &HalfSpacePoint,
    params: &OperatorParams,
    grid: Arc<Grid>,
    config: &SolverConfig,
) -> Result<SolutionField> {
    config.validate()?;
    let op = DiscreteOperator::new(grid.clone(), params, config.cross_stencil, config.outer)?;
    let at = op.full.transpose();
    let src = grid
        .locate(source)
        .ok_or_else(|| Error::InvalidArgument(format!("source {source:?} lies outside the grid")))?;
    let mut mass = vec![0.0; grid.len()];
    mass[src] = 1.0;
    let n_steps = (t / config.dt).ceil().max(1.0) as usize;
    let dt = t / n_steps as f64;
    let full_be = at.shifted(1.0, -dt);
    let half_be = at.shifted(1.0, -0.5 * dt);
    let explicit_cn = at.shifted(1.0, 0.5 * dt);
    let mut rhs = vec![0.0; mass.len()];
    let solve = |m: &CsrMatrix, rhs: &[f64], x: &mut [f64]| bicgstab(m, rhs, x, config.tolerance, config.max_iterations);
    for k in 0..n_steps {
        match config.time_method {
            TimeMethod::BackwardEuler => {
                rhs.copy_from_slice(&mass);
                solve(&full_be, &rhs, &mut mass)?;
            }
            TimeMethod::CrankNicolson if k < config.rannacher_steps => {
                for _ in 0..2 {
                    rhs.copy_from_slice(&mass);
                    solve(&half_be, &rhs, &mut mass)?;
                }
            }
            TimeMethod::CrankNicolson => {
                explicit_cn.mul_vec(&mass, &mut rhs);
                solve(&half_be, &rhs, &mut mass)?;
            }
        }
    }
    let values = mass.iter().enumerate().map(|(i, m)| m / grid.cell_measure(i)).collect();
    SolutionField::new(grid, t, values)
}

/// Independent columns for several sources, solved in parallel.
pub fn numerical_kernel_columns(
    t: f64,
    sources: &[HalfSpacePoint],
    params: &OperatorParams,
    grid: Arc<Grid>,
    config: &SolverConfig,
) -> Result<Vec<SolutionField>> {
    sources
        .par_iter()
        .map(|s| numerical_kernel_column(t, s, params, grid.clone(), config))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeForm {
    /// `t^{-(N+1)/2} Π_i y_i^{-c/2} (1 ∧ y_i/√t)^{c/2}`.
    Weight,
    /// `V(z1, √t)^{-1/2} V(z2, √t)^{-1/2}`.
    Volume,
    /// `t^{-(N+1)/2} y_i^{-c} (1 ∧ y_i/√t)^c` with `i ∈ {1, 2}`.
    OneSided(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

fn ln_weight_factor(y: f64, t: f64, c: f64) -> f64 {
    // y^{-c/2} (1 ∧ y/√t)^{c/2}
    let s = t.sqrt();
    if y >= s {
        -0.5 * c * y.ln()
    } else {
        -0.5 * c * s.ln()
    }
}

/// `ln` of the envelope shape without `C` and without the Gaussian factor.
pub fn ln_envelope_prefactor(t: f64, z1: &HalfSpacePoint, z2: &HalfSpacePoint, params: &OperatorParams, form: EnvelopeForm) -> f64 {
    let n = params.dim_x() as f64;
    let c = params.c();
    match form {
        EnvelopeForm::Weight => {
            -0.5 * (n + 1.0) * t.ln() + ln_weight_factor(z1.y, t, c) + ln_weight_factor(z2.y, t, c)
        }
        EnvelopeForm::OneSided(i) => {
            let y = if i == 2 { z2.y } else { z1.y };
            -0.5 * (n + 1.0) * t.ln() + 2.0 * ln_weight_factor(y, t, c)
        }
        EnvelopeForm::Volume => {
            let s = t.sqrt();
            -0.5 * (ball_volume_at(z1.y, s, params).ln() + ball_volume_at(z2.y, s, params).ln())
        }
    }
}

/// `C · shape · exp(-|z1-z2|²/(k t))` for the chosen form.
pub fn envelope_value(
    t: f64,
    z1: &HalfSpacePoint,
    z2: &HalfSpacePoint,
    params: &OperatorParams,
    constant: f64,
    k: f64,
    form: EnvelopeForm,
) -> Result<f64> {
    if !(constant > 0.0) || !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("envelope needs C, k > 0, got C = {constant}, k = {k}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let ln = constant.ln() + ln_envelope_prefactor(t, z1, z2, params, form) - z1.dist_sq(z2) / (k * t);
    Ok(ln.exp())
}

/// Empirical `(C1, C2)` with
/// `C1 e^{-ε|y1-y2|²} <= f(y1)/f(y2) <= C2 e^{ε|y1-y2|²}`, `f(y) = y^{-c/2}(1 ∧ y)^{c/2}`.
pub fn equivalence_factor_check(c: f64, eps: f64, samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(y1, y2) in samples {
        let ln_ratio = ln_weight_factor(y1, 1.0, c) - ln_weight_factor(y2, 1.0, c);
        let g = eps * (y1 - y2) * (y1 - y2);
        lo = lo.min(ln_ratio + g);
        hi = hi.max(ln_ratio - g);
    }
    Ok((lo.exp(), hi.exp()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub t: f64,
    pub z1: HalfSpacePoint,
    pub z2: HalfSpacePoint,
    pub p: f64,
}

/// Sampling law for kernel probes: `t` log-uniform, `x` uniform, `y` log-uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLaw {
    pub t_min: f64,
    pub t_max: f64,
    pub x_extent: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for SampleLaw {
    fn default() -> Self {
        Self { t_min: 0.05, t_max: 1.0, x_extent: 2.0, y_min: 0.01, y_max: 3.0 }
    }
}

impl SampleLaw {
    pub fn draw_point<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> HalfSpacePoint {
        let x = (0..n).map(|_| rng.random_range(-self.x_extent..=self.x_extent)).collect();
        HalfSpacePoint { x, y: log_uniform(rng, self.y_min, self.y_max) }
    }

    pub fn draw_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        log_uniform(rng, self.t_min, self.t_max)
    }
}

/// Exact-kernel samples at `a = 0`.
pub fn explicit_kernel_samples(params: &OperatorParams, law: &SampleLaw, n: usize, seed: u64) -> Result<Vec<KernelSample>> {
    let mut rng = seeded(seed, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = law.draw_time(&mut rng);
        let z1 = law.draw_point(&mut rng, params.dim_x());
        let z2 = law.draw_point(&mut rng, params.dim_x());
        let p = explicit_kernel_a0(t, &z1, &z2, params)?;
        out.push(KernelSample { t, z1, z2, p });
    }
    Ok(out)
}

/// Every `stride`-th cell of a column as a sample `p(t, z1 = cell, z2 = source)`.
pub fn column_samples(column: &SolutionField, source: &HalfSpacePoint, stride: usize) -> Vec<KernelSample> {
    let g = &column.grid;
    (0..g.len())
        .step_by(stride.max(1))
        .map(|i| KernelSample { t: column.t, z1: g.point(i), z2: source.clone(), p: column.values[i] })
        .collect()
}

/// Options for [`fit_bound_constants`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub k_min: f64,
    pub k_max: f64,
    pub k_points: usize,
    /// Samples below `floor · max p` are ignored by the lower fit.
    pub lower_floor: f64,
    /// Relative slack before a held-out sample counts as a violation.
    pub held_out_rtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { k_min: 1.0, k_max: 100.0, k_points: 60, lower_floor: 1e-8, held_out_rtol: 0.02 }
    }
}

impl FitOptions {
    pub fn k_grid(&self) -> Vec<f64> {
        let n = self.k_points.max(2);
        let (a, b) = (self.k_min.ln(), self.k_max.ln());
        (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub form: EnvelopeForm,
    #[serde(rename = "C_up")]
    pub c_up: f64,
    pub k_up: f64,
    #[serde(rename = "C_low")]
    pub c_low: f64,
    pub k_low: f64,
    pub n_samples: usize,
    pub violation_count: usize,
    pub held_out_violations: usize,
    pub held_out_strict_violations: usize,
    pub n_held_out: usize,
}

impl KernelEstimate {
    pub fn envelope(&self, t: f64, z1: &HalfSpacePoint, z2: &HalfSpacePoint, params: &OperatorParams, side: Side) -> Result<f64> {
        match side {
            Side::Upper => envelope_value(t, z1, z2, params, self.c_up, self.k_up, self.form),
            Side::Lower => envelope_value(t, z1, z2, params, self.c_low, self.k_low, self.form),
        }
    }

    /// `(strict, with slack)` violation counts of `samples` against this estimate.
    pub fn count_violations(&self, samples: &[KernelSample], params: &OperatorParams, floor: f64, rtol: f64) -> (usize, usize) {
        let mut strict = 0;
        let mut loose = 0;
        for s in samples {
            if s.p <= 0.0 {
                continue;
            }
            let pre = ln_envelope_prefactor(s.t, &s.z1, &s.z2, params, self.form);
            let d = s.z1.dist_sq(&s.z2) / s.t;
            let ln_p = s.p.ln();
            let ln_up = self.c_up.ln() + pre - d / self.k_up;
            let ln_low = self.c_low.ln() + pre - d / self.k_low;
            let over = ln_p - ln_up;
            let under = if s.p >= floor { ln_low - ln_p } else { f64::NEG_INFINITY };
            let excess = over.max(under);
            if excess > 1e-12 {
                strict += 1;
            }
            if excess > rtol.ln_1p() {
                loose += 1;
            }
        }
        (strict, loose)
    }
}

struct Prepared {
    /// `ln p - ln prefactor`
    a: Vec<f64>,
    /// `|z1 - z2|² / t`
    d: Vec<f64>,
    lower_ok: Vec<bool>,
    floor: f64,
}

fn prepare(samples: &[KernelSample], params: &OperatorParams, form: EnvelopeForm, opts: &FitOptions) -> Result<Prepared> {
    let positive: Vec<&KernelSample> = samples.iter().filter(|s| s.p > 0.0 && s.p.is_finite()).collect();
    if positive.len() < 2 {
        return Err(Error::Fit("need at least two positive samples".into()));
    }
    let max_p = positive.iter().map(|s| s.p).fold(0.0, f64::max);
    let floor = opts.lower_floor * max_p;
    let mut a = Vec::with_capacity(positive.len());
    let mut d = Vec::with_capacity(positive.len());
    let mut lower_ok = Vec::with_capacity(positive.len());
    for s in positive {
        a.push(s.p.ln() - ln_envelope_prefactor(s.t, &s.z1, &s.z2, params, form));
        d.push(s.z1.dist_sq(&s.z2) / s.t);
        lower_ok.push(s.p >= floor);
    }
    if !lower_ok.iter().any(|&b| b) {
        return Err(Error::Fit("all samples below the fitting floor".into()));
    }
    let d_spread = d.iter().copied().fold(f64::NEG_INFINITY, f64::max) - d.iter().copied().fold(f64::INFINITY, f64::min);
    let a_spread = a.iter().copied().fold(f64::NEG_INFINITY, f64::max) - a.iter().copied().fold(f64::INFINITY, f64::min);
    if d_spread == 0.0 && a_spread == 0.0 {
        return Err(Error::Fit("degenerate sample: all probes coincide".into()));
    }
    Ok(Prepared { a, d, lower_ok, floor })
}

/// Tight two-sided envelope constants for the samples.
///
/// For each `k` on the log grid the constants `C_up(k) = max p/shape` and
/// `C_low(k) = min p/shape` make the envelope touch the data. `k_up`
/// (`k_low`) is the grid value whose upper (lower) envelope has the smallest
/// mean log-gap to the data; ties go to smaller `k_up` and larger `k_low`.
pub fn fit_bound_constants(
    samples: &[KernelSample],
    params: &OperatorParams,
    form: EnvelopeForm,
    opts: &FitOptions,
) -> Result<KernelEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let prep = prepare(samples, params, form, opts)?;
    let grid = opts.k_grid();
    let per_k: Vec<(f64, f64, f64, f64, f64)> = grid
        .par_iter()
        .map(|&k| {
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            let mut sum = 0.0;
            let mut sum_low = 0.0;
            let mut n_low = 0usize;
            for i in 0..prep.a.len() {
                let v = prep.a[i] + prep.d[i] / k;
                hi = hi.max(v);
                sum += v;
                if prep.lower_ok[i] {
                    lo = lo.min(v);
                    sum_low += v;
                    n_low += 1;
                }
            }
            let gap_up = hi - sum / prep.a.len() as f64;
            let gap_low = sum_low / n_low as f64 - lo;
            (k, hi, lo, gap_up, gap_low)
        })
        .collect();
    let mut best_up = per_k[0];
    let mut best_low = per_k[0];
    for &row in &per_k[1..] {
        if row.3 < best_up.3 {
            best_up = row;
        }
        if row.4 <= best_low.4 {
            best_low = row;
        }
    }
    let mut est = KernelEstimate {
        form,
        c_up: best_up.1.exp(),
        k_up: best_up.0,
        c_low: best_low.2.exp(),
        k_low: best_low.0,
        n_samples: prep.a.len(),
        violation_count: 0,
        held_out_violations: 0,
        held_out_strict_violations: 0,
        n_held_out: 0,
    };
    est.violation_count = est.count_violations(samples, params, prep.floor, 0.0).0;
    Ok(est)
}

/// Shuffles with `seed`, fits on the first half and counts violations on the second.
pub fn fit_with_holdout(
    samples: &[KernelSample],
    params: &OperatorParams,
    form: EnvelopeForm,
    opts: &FitOptions,
    seed: u64,
) -> Result<KernelEstimate> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seeded(seed, 1));
    let half = samples.len() / 2;
    let fit: Vec<KernelSample> = order[..half].iter().map(|&i| samples[i].clone()).collect();
    let test: Vec<KernelSample> = order[half..].iter().map(|&i| samples[i].clone()).collect();
    let mut est = fit_bound_constants(&fit, params, form, opts)?;
    let max_p = fit.iter().map(|s| s.p).fold(0.0, f64::max);
    let (strict, loose) = est.count_violations(&test, params, opts.lower_floor * max_p, opts.held_out_rtol);
    est.held_out_strict_violations = strict;
    est.held_out_violations = loose;
    est.n_held_out = test.len();
    Ok(est)
}

/// `max |p(t, z1, z2) - p(t, z2, z1)| / max(p)` over pairs of sources, from
/// numerical columns evaluated at each other's source points.
pub fn kernel_asymmetry(
    t: f64,
    sources: &[HalfSpacePoint],
    params: &OperatorParams,
    grid: Arc<Grid>,
    config: &SolverConfig,
) -> Result<f64> {
    let cols = numerical_kernel_columns(t, sources, params, grid.clone(), config)?;
    // snap sources to cell centers
    let cells: Vec<HalfSpacePoint> = sources
        .iter()
        .map(|s| grid.locate(s).map(|i| grid.point(i)))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument("source outside the grid".into()))?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..sources.len() {
        for j in 0..sources.len() {
            if i == j {
                continue;
            }
            let forward = cols[j].eval(&cells[i]);
            let backward = cols[i].eval(&cells[j]);
            worst = worst.max((forward - backward).abs());
            scale = scale.max(forward.abs()).max(backward.abs());
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { 0.0 })
}

/// `max_y1 |∂_t p - L_{z1} p| / max p` for the closed form, by fourth-order
/// central differences on an interior line of `y1` values.
pub fn explicit_kernel_pde_residual(t: f64, z2: &HalfSpacePoint, params: &OperatorParams, y_values: &[f64]) -> Result<f64> {
    let n = params.dim_x();
    let c = params.c();
    let f = |tt: f64, z: &HalfSpacePoint| explicit_kernel_a0(tt, z, z2, params);
    let d1 = |g: &dyn Fn(f64) -> Result<f64>, v: f64, h: f64| -> Result<f64> {
        Ok((-g(v + 2.0 * h)? + 8.0 * g(v + h)? - 8.0 * g(v - h)? + g(v - 2.0 * h)?) / (12.0 * h))
    };
    let d2 = |g: &dyn Fn(f64) -> Result<f64>, v: f64, h: f64| -> Result<f64> {
        Ok((-g(v + 2.0 * h)? + 16.0 * g(v + h)? - 30.0 * g(v)? + 16.0 * g(v - h)? - g(v - 2.0 * h)?) / (12.0 * h * h))
    };
    let mut worst = 0.0f64;
    let mut max_p = 0.0f64;
    for &y in y_values {
        let z = HalfSpacePoint { x: z2.x.iter().map(|v| v + 0.3).collect(), y };
        let h = 1e-3 * t.sqrt().min(y);
        let p = f(t, &z)?;
        max_p = max_p.max(p);
        let pt = d1(&|s| f(s, &z), t, 1e-3 * t)?;
        let along_y = |s: f64| f(t, &HalfSpacePoint { x: z.x.clone(), y: s });
        let py = d1(&along_y, y, h)?;
        let pyy = d2(&along_y, y, h)?;
        let mut lp = pyy + c / y * py;
        for k in 0..n {
            let along_x = |s: f64| {
                let mut x = z.x.clone();
                x[k] = s;
                f(t, &HalfSpacePoint { x, y })
            };
            lp += d2(&along_x, z.x[k], 1e-3 * t.sqrt())?;
        }
        worst = worst.max((pt - lp).abs());
    }
    Ok(worst / max_p)
}

/// `|∫_0^∞ b_c(t, y1, y2) y2^c dy2 - 1|`.
pub fn explicit_kernel_normalization_error(t: f64, y1: f64, c: f64) -> Result<f64> {
    let opts = QuadOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_intervals: 50_000 };
    let f = |y2: f64| {
        if y2 <= 0.0 {
            0.0
        } else {
            (ln_bessel_kernel(t, y1, y2, c) + c * y2.ln()).exp()
        }
    };
    // split at the bulk of the mass
    let cut = y1 + 10.0 * t.sqrt();
    let body = integrate(f, 0.0, cut, opts)?.value;
    let tail = integrate_to_infinity(f, cut, opts)?.value;
    Ok((body + tail - 1.0).abs())
}

/// Largest relative deviation of `b_0(t, y1, ·)` from the reflected Gaussian
/// `(4πt)^{-1/2}[e^{-(y1-y2)²/4t} + e^{-(y1+y2)²/4t}]` over the given `y2`,
/// compared in the log domain so far tails do not underflow.
pub fn c0_reduction_error(t: f64, y1: f64, y2_values: &[f64]) -> f64 {
    y2_values
        .iter()
        .map(|&y2| {
            let near = -(y1 - y2).powi(2) / (4.0 * t);
            let far = -(y1 + y2).powi(2) / (4.0 * t);
            let ln_exact = -0.5 * (4.0 * std::f64::consts::PI * t).ln() + near + (far - near).exp().ln_1p();
            (ln_bessel_kernel(t, y1, y2, 0.0) - ln_exact).abs().exp_m1()
        })
        .fold(0.0, f64::max)
}

/// Writes samples as CSV `t,z1_x…,z1_y,z2_x…,z2_y,p`.
pub fn samples_csv(samples: &[KernelSample]) -> String {
    let n = samples.first().map_or(0, |s| s.z1.x.len());
    let mut header: Vec<String> = vec!["t".into()];
    for tag in ["z1", "z2"] {
        for k in 0..n {
            header.push(format!("{tag}_x{}", k + 1));
        }
        header.push(format!("{tag}_y"));
    }
    header.push("p".into());
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![s.t];
            r.extend(&s.z1.x);
            r.push(s.z1.y);
            r.extend(&s.z2.x);
            r.push(s.z2.y);
            r.push(s.p);
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    crate::report::csv_table(&h, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::quad::integrate;

    fn p0(n: usize, c: f64) -> OperatorParams {
        OperatorParams::uncoupled(n, c).unwrap()
    }

    #[test]
    fn rows_match_columns_only_when_symmetric() {
        let source = HalfSpacePoint { x: vec![0.05], y: 0.55 };
        let config = SolverConfig { horizon: 0.1, dt: 0.005, ..SolverConfig::default() };
        let sym = p0(1, 0.5);
        let grid = Arc::new(build_grid(&sym, 1.0, 1.5, 20, 15).unwrap());
        let row = numerical_kernel_row(0.1, &source, &sym, grid.clone(), &config).unwrap();
        let col = numerical_kernel_column(0.1, &source, &sym, grid.clone(), &config).unwrap();
        let gap = row.values.iter().zip(&col.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-9 * col.max(), "{gap}");

        let coupled = OperatorParams::new(1, 0.5, &[0.4]).unwrap();
        let row = numerical_kernel_row(0.1, &source, &coupled, grid.clone(), &config).unwrap();
        let col = numerical_kernel_column(0.1, &source, &coupled, grid, &config).unwrap();
        assert!((row.weighted_integral() - 1.0).abs() < 1e-10);
        assert!(row.min() >= -1e-12);
        let gap = row.values.iter().zip(&col.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-3 * col.max());
    }

    #[test]
    fn reduces_to_reflected_gaussian() {
        let ys: Vec<f64> = (1..200).map(|i| i as f64 * 0.03).collect();
        for &t in &[0.01, 0.25, 2.0] {
            for &y1 in &[0.0, 0.05, 1.0, 4.0] {
                assert!(c0_reduction_error(t, y1, &ys) < 1e-12, "t={t} y1={y1}");
            }
        }
    }

    #[test]
    fn normalized_against_mu() {
        for &c in &[-0.5, 0.5, 1.0, 2.0] {
            for &t in &[0.1, 1.0] {
                for &y1 in &[0.1, 1.0, 5.0] {
                    let e = explicit_kernel_normalization_error(t, y1, c).unwrap();
                    assert!(e < 1e-8, "c={c} t={t} y1={y1} err={e}");
                }
            }
        }
    }

    #[test]
    fn symmetric_in_y() {
        for &c in &[-0.5, 0.3, 2.0] {
            let a = ln_bessel_kernel(0.3, 0.4, 1.7, c);
            let b = ln_bessel_kernel(0.3, 1.7, 0.4, c);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_limit_is_continuous() {
        for &c in &[-0.5, 0.0, 1.0, 3.0] {
            let at0 = ln_bessel_kernel(0.5, 0.0, 1.0, c);
            let near = ln_bessel_kernel(0.5, 1e-9, 1.0, c);
            assert!((at0 - near).abs() < 1e-7, "c={c}");
        }
    }

    #[test]
    fn satisfies_the_equation() {
        let ys: Vec<f64> = (1..40).map(|i| 0.1 * i as f64).collect();
        for &c in &[-0.5, 0.5, 1.0, 2.0] {
            for n in [0, 1, 2] {
                let z2 = HalfSpacePoint { x: vec![0.1; n], y: 0.8 };
                let r = explicit_kernel_pde_residual(0.4, &z2, &p0(n, c), &ys).unwrap();
                assert!(r < 1e-4, "c={c} n={n} residual {r}");
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let opts = QuadOptions::default();
        for &(c, s, t, y1, y2) in &[
            (-0.5, 0.1, 0.2, 0.5, 0.7),
            (0.0, 0.3, 0.3, 1.0, 0.2),
            (0.5, 0.05, 0.5, 0.1, 1.5),
            (1.0, 0.2, 0.1, 2.0, 2.2),
            (2.0, 0.5, 0.5, 0.3, 0.3),
            (2.0, 0.1, 1.0, 3.0, 0.5),
            (-0.5, 1.0, 0.5, 0.01, 2.0),
            (1.0, 0.7, 0.3, 0.8, 0.05),
            (3.0, 0.25, 0.25, 1.0, 1.0),
            (0.5, 0.4, 0.6, 2.5, 1.0),
        ] {
            let f = |xi: f64| {
                if xi <= 0.0 {
                    return 0.0;
                }
                (ln_bessel_kernel(s, y1, xi, c) + ln_bessel_kernel(t, xi, y2, c) + c * xi.ln()).exp()
            };
            let cut = y1.max(y2) + 12.0 * (s + t).sqrt();
            let lhs = integrate(f, 0.0, cut, opts).unwrap().value;
            let rhs = ln_bessel_kernel(s + t, y1, y2, c).exp();
            assert!((lhs - rhs).abs() < 1e-5 * rhs, "c={c}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn weight_form_reduces_at_c_zero() {
        let p = p0(1, 0.0);
        let z1 = HalfSpacePoint { x: vec![0.3], y: 0.2 };
        let z2 = HalfSpacePoint { x: vec![-0.1], y: 1.4 };
        let v = envelope_value(0.5, &z1, &z2, &p, 2.0, 4.0, EnvelopeForm::Weight).unwrap();
        let want = 2.0 * 0.5f64.powf(-1.0) * (-z1.dist_sq(&z2) / 2.0).exp();
        assert!((v - want).abs() < 1e-14 * want);
    }

    #[test]
    fn one_sided_equals_weight_form_on_diagonal() {
        let p = p0(1, 1.7);
        for &y in &[0.05, 0.9, 3.0] {
            let z1 = HalfSpacePoint { x: vec![0.0], y };
            let z2 = HalfSpacePoint { x: vec![1.0], y };
            let a = envelope_value(0.3, &z1, &z2, &p, 1.0, 5.0, EnvelopeForm::Weight).unwrap();
            for i in [1, 2] {
                let b = envelope_value(0.3, &z1, &z2, &p, 1.0, 5.0, EnvelopeForm::OneSided(i)).unwrap();
                assert!((a - b).abs() < 1e-14 * a);
            }
        }
    }

    #[test]
    fn volume_and_weight_forms_are_comparable() {
        // V(z, √t) ≍ t^{(N+1)/2} y^c (1 ∧ y/√t)^{-c}, so the two forms differ by bounded factors
        let p = p0(0, 1.0);
        let z = HalfSpacePoint { x: vec![], y: 2.0 };
        let w = envelope_value(1.0, &z, &z, &p, 1.0, 4.0, EnvelopeForm::Weight).unwrap();
        let v = envelope_value(1.0, &z, &z, &p, 1.0, 4.0, EnvelopeForm::Volume).unwrap();
        // V(2, 1) = (9 - 1)/2 = 4, weight factor 1/2
        assert!((v - 0.25).abs() < 1e-14 && (w - 0.5).abs() < 1e-14);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..400 {
            let y = 1e-3 * 1.04f64.powi(i);
            let z = HalfSpacePoint { x: vec![], y };
            let r = envelope_value(1.0, &z, &z, &p, 1.0, 4.0, EnvelopeForm::Volume).unwrap()
                / envelope_value(1.0, &z, &z, &p, 1.0, 4.0, EnvelopeForm::Weight).unwrap();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        assert!(lo > 0.2 && hi < 2.5, "{lo} {hi}");
    }

    #[test]
    fn equivalence_factors() {
        let pairs: Vec<(f64, f64)> = {
            let mut rng = seeded(7, 0);
            (0..10_000).map(|_| (log_uniform(&mut rng, 1e-3, 1e3), log_uniform(&mut rng, 1e-3, 1e3))).collect()
        };
        let (c1, c2) = equivalence_factor_check(2.0, 0.1, &pairs).unwrap();
        assert!(c1 > 0.0 && c2.is_finite() && c1 <= 1.0 && c2 >= 1.0);
        let (a, b) = equivalence_factor_check(0.0, 0.1, &pairs).unwrap();
        assert!(a >= 1.0 && b <= 1.0);
        let (a, b) = equivalence_factor_check(1.5, 0.1, &[(0.7, 0.7)]).unwrap();
        assert_eq!((a, b), (1.0, 1.0));
        assert!(equivalence_factor_check(1.0, 0.1, &[]).is_err());
    }

    #[test]
    fn fitted_rate_for_heat_kernel() {
        let p = p0(0, 0.0);
        let samples = explicit_kernel_samples(&p, &SampleLaw::default(), 4000, 11).unwrap();
        let est = fit_with_holdout(&samples, &p, EnvelopeForm::Weight, &FitOptions::default(), 3).unwrap();
        assert!(est.k_up >= 4.0 && est.k_up <= 4.6, "k_up = {}", est.k_up);
        let norm = (4.0 * std::f64::consts::PI).powf(-0.5);
        assert!(est.c_up >= 0.5 * norm && est.c_up <= 2.0 * 2.0 * norm, "C_up = {}", est.c_up);
        assert_eq!(est.violation_count, 0);
        assert_eq!(est.held_out_violations, 0);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let p = p0(1, 1.0);
        let samples = explicit_kernel_samples(&p, &SampleLaw::default(), 500, 5).unwrap();
        let doubled: Vec<KernelSample> = samples.iter().map(|s| KernelSample { p: 2.0 * s.p, ..s.clone() }).collect();
        let opts = FitOptions::default();
        let a = fit_bound_constants(&samples, &p, EnvelopeForm::Volume, &opts).unwrap();
        let b = fit_bound_constants(&doubled, &p, EnvelopeForm::Volume, &opts).unwrap();
        assert_eq!((a.k_up, a.k_low), (b.k_up, b.k_low));
        assert!((b.c_up / a.c_up - 2.0).abs() < 1e-12);
        assert!((b.c_low / a.c_low - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let p = p0(0, 0.0);
        assert!(matches!(fit_bound_constants(&[], &p, EnvelopeForm::Weight, &FitOptions::default()), Err(Error::EmptySamples)));
        let s = KernelSample { t: 1.0, z1: HalfSpacePoint::on_axis(0, 1.0), z2: HalfSpacePoint::on_axis(0, 1.0), p: 0.3 };
        assert!(fit_bound_constants(&[s.clone(), s], &p, EnvelopeForm::Weight, &FitOptions::default()).is_err());
    }

    #[test]
    fn numerical_column_matches_closed_form() {
        let p = p0(0, 1.0);
        let g = Arc::new(build_grid(&p, 0.0, 6.0, 0, 600).unwrap());
        let src = HalfSpacePoint::on_axis(0, 1.0);
        let cfg = SolverConfig { dt: 1e-3, ..Default::default() };
        let col = numerical_kernel_column(0.25, &src, &p, g.clone(), &cfg).unwrap();
        let cell = g.point(g.locate(&src).unwrap());
        let max = col.max();
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            if col.values[i] >= 1e-3 * max {
                let exact = explicit_kernel_a0(0.25, &g.point(i), &cell, &p).unwrap();
                worst = worst.max((col.values[i] - exact).abs() / exact);
            }
        }
        assert!(worst < 0.02, "worst relative error {worst}");
        assert!((col.weighted_integral() - 1.0).abs() < 1e-10);
    }
}
