//! Monte Carlo simulation of the diffusion generated by `L`.
//!
//! The generator has diffusion matrix `2 [[I, a], [aᵀ, 1]]` and drift
//! `(c/y) e_y`; the weighted Neumann condition is reflection at `y = 0`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::{cholesky, HalfSpacePoint, OperatorParams};
use crate::rng::{seeded, LabRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    /// Euler–Maruyama with `Y ← |Y|` after each step.
    #[default]
    ReflectAtZero,
    /// Exact endpoint sampling; only for `a = 0`.
    ExactBessel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub reflection: Reflection,
    pub seed: u64,
    /// Paths per generator stream; fixes the work split independent of threads.
    pub chunk: usize,
}

impl PathConfig {
    /// `dt = min(t / 1000, 10⁻³)`.
    pub fn for_horizon(t: f64, n_paths: usize, seed: u64) -> Self {
        Self { dt: (t / 1000.0).min(1e-3), n_paths, reflection: Reflection::ReflectAtZero, seed, chunk: 4096 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.n_paths == 0 || self.chunk == 0 {
            return Err(Error::InvalidArgument("path config needs dt > 0, n_paths >= 1, chunk >= 1".into()));
        }
        Ok(())
    }
}

/// Per-path stepping data derived from the parameters.
#[derive(Clone, Debug)]
pub struct Stepper {
    n: usize,
    c: f64,
    a: Vec<f64>,
    /// Lower-triangular `B` with `B Bᵀ = I - a aᵀ`.
    b: Vec<f64>,
}

impl Stepper {
    pub fn new(params: &OperatorParams) -> Result<Self> {
        let n = params.dim_x();
        let a = params.a().to_vec();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = if i == j { 1.0 } else { 0.0 } - a[i] * a[j];
            }
        }
        let b = if n == 0 {
            Vec::new()
        } else {
            cholesky(&m, n).ok_or_else(|| Error::InvalidParams("I - a aᵀ is not positive definite".into()))?
        };
        Ok(Self { n, c: params.c(), a, b })
    }

    /// One Euler–Maruyama step in place.
    pub fn step<R: Rng + ?Sized>(&self, x: &mut [f64], y: &mut f64, dt: f64, rng: &mut R, eta: &mut [f64]) {
        let s = (2.0 * dt).sqrt();
        let xi: f64 = rng.sample(StandardNormal);
        for e in eta.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..self.n {
            let mut inc = self.a[i] * xi;
            for j in 0..=i {
                inc += self.b[i * self.n + j] * eta[j];
            }
            x[i] += s * inc;
        }
        let mut drift = self.c / *y * dt;
        let cap = 0.5 * *y;
        drift = drift.clamp(-cap, cap);
        let next = (*y + drift + s * xi).abs();
        *y = if next > 0.0 { next } else { f64::MIN_POSITIVE };
    }
}

/// Exact `Y_t` for the radial part `D_yy + (c/y) D_y` started at `y0`:
/// `K ~ Poisson(y0²/4t)`, `Y_t² = 4t · Gamma((c+1)/2 + K, 1)`.
pub fn exact_bessel_endpoint<R: Rng + ?Sized>(y0: f64, t: f64, c: f64, rng: &mut R) -> Result<f64> {
    if !(c + 1.0 > 0.0) {
        return Err(Error::InvalidParams(format!("c = {c} violates c + 1 > 0")));
    }
    if !(t > 0.0) || !(y0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("need t > 0 and y0 >= 0, got t = {t}, y0 = {y0}")));
    }
    let lambda = y0 * y0 / (4.0 * t);
    let k = if lambda > 0.0 {
        Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng)
    } else {
        0.0
    };
    let g: f64 = Gamma::new(0.5 * (c + 1.0) + k, 1.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(rng);
    Ok((4.0 * t * g).sqrt())
}

/// One endpoint `Z_t` started from `z0`.
pub fn sample_endpoint<R: Rng + ?Sized>(
    z0: &HalfSpacePoint,
    t: f64,
    params: &OperatorParams,
    config: &PathConfig,
    rng: &mut R,
) -> Result<HalfSpacePoint> {
    if !(z0.y > 0.0) {
        return Err(Error::InvalidArgument(format!("start point must be interior, got y0 = {}", z0.y)));
    }
    let stepper = Stepper::new(params)?;
    endpoint_with(&stepper, z0, t, params, config, rng)
}

fn endpoint_with<R: Rng + ?Sized>(
    stepper: &Stepper,
    z0: &HalfSpacePoint,
    t: f64,
    params: &OperatorParams,
    config: &PathConfig,
    rng: &mut R,
) -> Result<HalfSpacePoint> {
    match config.reflection {
        Reflection::ExactBessel => {
            if !params.is_uncoupled() {
                return Err(Error::InvalidArgument("exact sampling requires a = 0".into()));
            }
            let s = (2.0 * t).sqrt();
            let x = z0.x.iter().map(|v| v + s * rng.sample::<f64, _>(StandardNormal)).collect();
            Ok(HalfSpacePoint { x, y: exact_bessel_endpoint(z0.y, t, params.c(), rng)? })
        }
        Reflection::ReflectAtZero => {
            let n_steps = ((t / config.dt) - 1e-9).ceil().max(1.0) as usize;
            let dt = t / n_steps as f64;
            let mut x = z0.x.clone();
            let mut y = z0.y;
            let mut eta = vec![0.0; stepper.n];
            for _ in 0..n_steps {
                stepper.step(&mut x, &mut y, dt, rng, &mut eta);
            }
            Ok(HalfSpacePoint { x, y })
        }
    }
}

/// Runs `config.n_paths` paths in fixed-size chunks (one generator stream per
/// chunk) and folds each endpoint into an accumulator.
pub fn fold_endpoints<A, F, M>(
    z0: &HalfSpacePoint,
    t: f64,
    params: &OperatorParams,
    config: &PathConfig,
    init: impl Fn() -> A + Sync + Send,
    fold: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    F: Fn(&mut A, &HalfSpacePoint) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    config.validate()?;
    if !(z0.y > 0.0) {
        return Err(Error::InvalidArgument(format!("start point must be interior, got y0 = {}", z0.y)));
    }
    let stepper = Stepper::new(params)?;
    let n_chunks = config.n_paths.div_ceil(config.chunk);
    let parts: Vec<Result<A>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng: LabRng = seeded(config.seed, k as u64);
            let count = config.chunk.min(config.n_paths - k * config.chunk);
            let mut acc = init();
            for _ in 0..count {
                let z = endpoint_with(&stepper, z0, t, params, config, &mut rng)?;
                fold(&mut acc, &z);
            }
            Ok(acc)
        })
        .collect();
    let mut out: Option<A> = None;
    for p in parts {
        let p = p?;
        out = Some(match out {
            None => p,
            Some(acc) => merge(acc, p),
        });
    }
    Ok(out.expect("at least one chunk"))
}

/// All endpoints, in deterministic order.
pub fn simulate_endpoints(z0: &HalfSpacePoint, t: f64, params: &OperatorParams, config: &PathConfig) -> Result<Vec<HalfSpacePoint>> {
    fold_endpoints(
        z0,
        t,
        params,
        config,
        Vec::new,
        |v: &mut Vec<HalfSpacePoint>, z| v.push(z.clone()),
        |mut a, b| {
            a.extend(b);
            a
        },
    )
}

/// Histogram of endpoints on a grid, normalized as a density w.r.t. `μ`.
#[derive(Clone, Debug)]
pub struct DensityHistogram {
    pub grid: Arc<Grid>,
    pub counts: Vec<u64>,
    pub n_paths: usize,
    pub density: Vec<f64>,
}

impl DensityHistogram {
    fn from_counts(grid: Arc<Grid>, counts: Vec<u64>, n_paths: usize) -> Self {
        let density = counts
            .iter()
            .enumerate()
            .map(|(i, &k)| k as f64 / (n_paths as f64 * grid.cell_measure(i)))
            .collect();
        Self { grid, counts, n_paths, density }
    }

    /// Fraction of paths that landed inside the grid window, `Σ density · μ(cell)`.
    pub fn mass(&self) -> f64 {
        self.density.iter().enumerate().map(|(i, d)| d * self.grid.cell_measure(i)).sum()
    }

    /// Binomial standard error of [`DensityHistogram::mass`].
    pub fn mass_std_error(&self) -> f64 {
        let m = self.mass().clamp(0.0, 1.0);
        (m * (1.0 - m) / self.n_paths as f64).sqrt().max(1.0 / self.n_paths as f64)
    }

    /// CSV `x1..xN,y,density,hits`.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut header: Vec<String> = (0..g.dim_x()).map(|k| format!("x{}", k + 1)).collect();
        header.extend(["y".to_string(), "density".into(), "hits".into()]);
        let rows: Vec<Vec<f64>> = (0..g.len())
            .map(|i| {
                let z = g.point(i);
                let mut r = z.x.clone();
                r.extend([z.y, self.density[i], self.counts[i] as f64]);
                r
            })
            .collect();
        let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        crate::report::csv_table(&h, &rows)
    }
}

/// Bins precomputed endpoints; `n_paths` is taken as `endpoints.len()`.
pub fn estimate_density(endpoints: &[HalfSpacePoint], grid: Arc<Grid>) -> Result<DensityHistogram> {
    if endpoints.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts = vec![0u64; grid.len()];
    for z in endpoints {
        if let Some(i) = grid.locate(z) {
            counts[i] += 1;
        }
    }
    Ok(DensityHistogram::from_counts(grid, counts, endpoints.len()))
}

/// Simulates and bins without storing endpoints.
pub fn simulate_density(
    z0: &HalfSpacePoint,
    t: f64,
    params: &OperatorParams,
    config: &PathConfig,
    grid: Arc<Grid>,
) -> Result<DensityHistogram> {
    let g = grid.clone();
    let counts = fold_endpoints(
        z0,
        t,
        params,
        config,
        || vec![0u64; g.len()],
        |c: &mut Vec<u64>, z| {
            if let Some(i) = g.locate(z) {
                c[i] += 1;
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )?;
    Ok(DensityHistogram::from_counts(grid, counts, config.n_paths))
}

/// `E_z[f(Z_t)]` and its standard error.
pub fn semigroup_estimate<F>(z: &HalfSpacePoint, t: f64, f: F, params: &OperatorParams, config: &PathConfig) -> Result<(f64, f64)>
where
    F: Fn(&HalfSpacePoint) -> f64 + Sync + Send,
{
    let (s, s2) = fold_endpoints(
        z,
        t,
        params,
        config,
        || (0.0f64, 0.0f64),
        |acc: &mut (f64, f64), e| {
            let v = f(e);
            acc.0 += v;
            acc.1 += v * v;
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    let n = config.n_paths as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Sample covariance (row-major `(N+1)²`) of single-step increments `(ΔX, ΔY)`
/// from `(0, y0)`.
pub fn increment_covariance(params: &OperatorParams, y0: f64, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let stepper = Stepper::new(params)?;
    let m = params.dim_x() + 1;
    let mut rng = seeded(seed, 0);
    let mut eta = vec![0.0; params.dim_x()];
    let mut incs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = vec![0.0; params.dim_x()];
        let mut y = y0;
        stepper.step(&mut x, &mut y, dt, &mut rng, &mut eta);
        x.push(y - y0);
        incs.push(x);
    }
    let mean: Vec<f64> = (0..m).map(|i| incs.iter().map(|v| v[i]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; m * m];
    for v in &incs {
        for i in 0..m {
            for j in 0..m {
                cov[i * m + j] += (v[i] - mean[i]) * (v[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    Ok(cov)
}

/// Kolmogorov–Smirnov distance between samples and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
