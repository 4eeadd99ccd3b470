//! The measure `dμ = y^c dx dy` on cylinder balls.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::params::{neg_part, pos_part, HalfSpacePoint, OperatorParams};
use crate::rng::{log_uniform, seeded};

/// Lebesgue volume of the unit ball of `R^n`; `w_0 = 1`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => {
            let h = n as f64 / 2.0;
            std::f64::consts::PI.powf(h) / gamma(h + 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureContext {
    pub c: f64,
    pub w_n: f64,
}

impl MeasureContext {
    pub fn new(params: &OperatorParams) -> Self {
        Self {
            c: params.c(),
            w_n: unit_ball_volume(params.dim_x()),
        }
    }
}

/// `∫_{(y0-r)⁺}^{y0+r} y^c dy`, cancellation-free for `y0 ≫ r`.
pub fn weighted_interval(c: f64, y0: f64, r: f64) -> f64 {
    let p = c + 1.0;
    if y0 <= r {
        // lower limit is 0: ((y0 - r)⁺)^{c+1} is exactly 0
        (y0 + r).powf(p) / p
    } else {
        // y0^p [(1+ρ)^p − (1−ρ)^p] = y0^p (1−ρ)^p · expm1(2p·atanh ρ)
        let rho = r / y0;
        y0.powf(p) * (1.0 - rho).powf(p) * (2.0 * p * rho.atanh()).exp_m1() / p
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

/// `V(z0, r) = μ(Q(z0, r)) = w_N r^N ∫_{(y0-r)⁺}^{y0+r} y^c dy`.
pub fn ball_volume(z0: &HalfSpacePoint, r: f64, params: &OperatorParams) -> Result<f64> {
    check_radius(r)?;
    Ok(ball_volume_at(z0.y, r, params))
}

pub(crate) fn ball_volume_at(y0: f64, r: f64, params: &OperatorParams) -> f64 {
    unit_ball_volume(params.dim_x()) * r.powi(params.dim_x() as i32) * weighted_interval(params.c(), y0, r)
}

/// Two-branch comparison function: `r^{N+1+c}` if `y0 <= r`, else `r^{N+1} y0^c`.
pub fn volume_envelope(z0: &HalfSpacePoint, r: f64, params: &OperatorParams) -> Result<f64> {
    check_radius(r)?;
    Ok(volume_envelope_at(z0.y, r, params))
}

pub(crate) fn volume_envelope_at(y0: f64, r: f64, params: &OperatorParams) -> f64 {
    let n = params.dim_x() as f64;
    let c = params.c();
    if y0 <= r {
        r.powf(n + 1.0 + c)
    } else {
        r.powf(n + 1.0) * y0.powf(c)
    }
}

/// `|V(λz, λr) / (λ^{N+1+c} V(z, r)) - 1|`.
pub fn scaling_defect(params: &OperatorParams, y0: f64, r: f64, lambda: f64) -> f64 {
    let d = params.dim_x() as f64 + 1.0 + params.c();
    let scaled = ball_volume_at(lambda * y0, lambda * r, params);
    let base = ball_volume_at(y0, r, params);
    (scaled / (lambda.powf(d) * base) - 1.0).abs()
}

/// Infimum and supremum of `V(z, r) / volume_envelope(z, r)` over the half-space:
/// `w_N min(1/(c+1), 2)` and `w_N max(2^{c+1}/(c+1), 2)`.
pub fn envelope_constants(params: &OperatorParams) -> (f64, f64) {
    let w = unit_ball_volume(params.dim_x());
    let p = params.c() + 1.0;
    let edge = 2f64.powf(p) / p;
    (w * (1.0 / p).min(2.0), w * edge.max(2.0))
}

/// `(min, max)` of `V / volume_envelope` over the samples.
pub fn envelope_ratio_range(params: &OperatorParams, samples: &[VolumeSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in samples {
        check_radius(s.r)?;
        let q = ball_volume_at(s.y0, s.r, params) / volume_envelope_at(s.y0, s.r, params);
        lo = lo.min(q);
        hi = hi.max(q);
    }
    Ok((lo, hi))
}

/// One doubling probe: center height and radii `0 < r <= s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingSample {
    pub y0: f64,
    pub r: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingScan {
    /// `sup [V(z0,s)/V(z0,r)] / (s/r)^{N+1+c⁺}` over the samples.
    pub constant: f64,
    pub argmax: DoublingSample,
    pub n_samples: usize,
}

pub fn doubling_quotient(params: &OperatorParams, sample: &DoublingSample) -> f64 {
    let ratio = ball_volume_at(sample.y0, sample.s, params) / ball_volume_at(sample.y0, sample.r, params);
    ratio / (sample.s / sample.r).powf(params.homogeneous_dim_pos())
}

pub fn doubling_ratio_scan(params: &OperatorParams, samples: &[DoublingSample]) -> Result<DoublingScan> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    let mut best = (f64::NEG_INFINITY, *first);
    for s in samples {
        if !(s.r > 0.0 && s.r <= s.s) || !(s.y0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("doubling sample needs 0 < r <= s, got {s:?}")));
        }
        let q = doubling_quotient(params, s);
        if q > best.0 {
            best = (q, *s);
        }
    }
    Ok(DoublingScan {
        constant: best.0,
        argmax: best.1,
        n_samples: samples.len(),
    })
}

/// Log-uniform probes: `y0 ∈ [1e-3, 1e3]`, `r ∈ [1e-3, 1e3]`, `s/r ∈ [1, 1e3]`.
pub fn random_doubling_samples(n: usize, seed: u64) -> Vec<DoublingSample> {
    let mut rng = seeded(seed, 0);
    (0..n)
        .map(|_| {
            let y0 = if rng.random_bool(0.05) { 0.0 } else { log_uniform(&mut rng, 1e-3, 1e3) };
            let r = log_uniform(&mut rng, 1e-3, 1e3);
            let s = r * log_uniform(&mut rng, 1.0, 1e3);
            DoublingSample { y0, r, s }
        })
        .collect()
}

/// A `(y, r)` probe for the local volume bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSample {
    pub y0: f64,
    pub r: f64,
}

/// Empirical `(C1, C2)` with `C2 r^{N+1+c⁺} <= V(z, r) <= C1 r^{N+1-c⁻}` for all
/// samples with `r ∈ (0, r0]`, `y ∈ [0, R0]`.
pub fn local_volume_bounds(
    params: &OperatorParams,
    r0: f64,
    big_r0: f64,
    samples: &[VolumeSample],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = params.dim_x() as f64;
    let c = params.c();
    let upper_exp = n + 1.0 - neg_part(c);
    let lower_exp = n + 1.0 + pos_part(c);
    let mut c1 = 0.0_f64;
    let mut c2 = f64::INFINITY;
    for s in samples {
        if !(s.r > 0.0 && s.r <= r0 && s.y0 >= 0.0 && s.y0 <= big_r0) {
            return Err(Error::InvalidArgument(format!(
                "sample {s:?} outside r ∈ (0, {r0}], y ∈ [0, {big_r0}]"
            )));
        }
        let v = ball_volume_at(s.y0, s.r, params);
        c1 = c1.max(v / s.r.powf(upper_exp));
        c2 = c2.min(v / s.r.powf(lower_exp));
    }
    Ok((c1, c2))
}

pub fn random_volume_samples(r0: f64, big_r0: f64, n: usize, seed: u64) -> Vec<VolumeSample> {
    let mut rng = seeded(seed, 1);
    (0..n)
        .map(|_| VolumeSample {
            y0: rng.random_range(0.0..=big_r0),
            r: log_uniform(&mut rng, r0 * 1e-6, r0),
        })
        .collect()
}
