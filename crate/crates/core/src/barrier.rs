//! The growth barrier `v = (δ-t)^{-α} exp(κ|z|²/(δ-t))` and its
//! supersolution check.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{HalfSpacePoint, OperatorParams};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub alpha: f64,
    pub kappa: f64,
    pub delta: f64,
    /// Growth rate of the datum class.
    pub beta: f64,
}

impl BarrierParams {
    pub fn new(alpha: f64, kappa: f64, delta: f64, beta: f64) -> Result<Self> {
        let bp = Self { alpha, kappa, delta, beta };
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.alpha) && ok(self.kappa) && ok(self.delta)) || !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParams(format!("barrier parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `α = 2κ(N+1+c⁺) + margin`.
    pub fn minimal_alpha(params: &OperatorParams, kappa: f64, margin: f64) -> f64 {
        2.0 * kappa * params.homogeneous_dim_pos() + margin
    }

    /// Largest admissible κ, `α = 2κ(N+1+c⁺) + 1`, and `δ = κ/(2β)` so that `κ/δ = 2β > β`.
    pub fn for_growth(params: &OperatorParams, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("growth rate must be positive, got {beta}")));
        }
        let kappa = admissible_kappa(params).1;
        Self::new(Self::minimal_alpha(params, kappa, 1.0), kappa, kappa / (2.0 * beta), beta)
    }
}

/// Admissible κ interval `(0, 1/(4+4|a|)]`.
pub fn admissible_kappa(params: &OperatorParams) -> (f64, f64) {
    (0.0, 1.0 / (4.0 + 4.0 * params.a_norm()))
}

fn ln_barrier(t: f64, x: &[f64], y: f64, bp: &BarrierParams) -> f64 {
    let tau = bp.delta - t;
    let r2: f64 = x.iter().map(|v| v * v).sum::<f64>() + y * y;
    -bp.alpha * tau.ln() + bp.kappa * r2 / tau
}

fn check_time(t: f64, bp: &BarrierParams) -> Result<()> {
    if !(t >= 0.0 && t < bp.delta) {
        return Err(Error::InvalidArgument(format!("need 0 <= t < delta = {}, got t = {t}", bp.delta)));
    }
    Ok(())
}

pub fn barrier_value(t: f64, z: &HalfSpacePoint, bp: &BarrierParams) -> Result<f64> {
    check_time(t, bp)?;
    Ok(ln_barrier(t, &z.x, z.y, bp).exp())
}

/// `(v_t - Lv)/v` from the closed-form derivatives:
/// `(α - 2κ(N+1+c))/τ + ((κ-4κ²)|z|² - 8κ²(a·x)y)/τ²`.
pub fn normalized_residual(t: f64, z: &HalfSpacePoint, bp: &BarrierParams, params: &OperatorParams) -> f64 {
    let tau = bp.delta - t;
    let k = bp.kappa;
    let n = params.dim_x() as f64;
    let ax: f64 = params.a().iter().zip(&z.x).map(|(a, x)| a * x).sum();
    (bp.alpha - 2.0 * k * (n + 1.0 + params.c())) / tau + ((k - 4.0 * k * k) * z.norm_sq() - 8.0 * k * k * ax * z.y) / (tau * tau)
}

/// `(v_t - Lv)/v` by fourth-order central differences of the barrier,
/// normalised by its value at `(t, z)`.
pub fn normalized_residual_fd(t: f64, z: &HalfSpacePoint, bp: &BarrierParams, params: &OperatorParams) -> f64 {
    let n = params.dim_x();
    let tau = bp.delta - t;
    let grad = 2.0 * bp.kappa * z.norm_sq().sqrt() / tau;
    let h = 0.005 / (1.0 + grad + (2.0 * bp.kappa / tau).sqrt());
    let ht = (0.005 / (1.0 + bp.alpha / tau + bp.kappa * z.norm_sq() / (tau * tau))).min(0.1 * tau);
    // v(t+s, z+d)/v(t, z) from the increments, without forming ln v itself
    let ratio = |s: f64, dx: &[(usize, f64)], dy: f64| {
        let tau_s = tau - s;
        let mut dr2 = (2.0 * z.y + dy) * dy;
        for &(k, d) in dx {
            dr2 += (2.0 * z.x[k] + d) * d;
        }
        (-bp.alpha * (-s / tau).ln_1p() + bp.kappa * (dr2 / tau_s + z.norm_sq() * s / (tau * tau_s))).exp()
    };

    const D1: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    const D2: [(f64, f64); 5] = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];

    let shifted = |dx: &[(usize, f64)], dy: f64| ratio(0.0, dx, dy);
    let vt = D1.iter().map(|&(o, w)| w * ratio(o * ht, &[], 0.0)).sum::<f64>() / (12.0 * ht);
    let vy = D1.iter().map(|&(o, w)| w * shifted(&[], o * h)).sum::<f64>() / (12.0 * h);
    let vyy = D2.iter().map(|&(o, w)| w * shifted(&[], o * h)).sum::<f64>() / (12.0 * h * h);
    let mut lap_x = 0.0;
    let mut cross = 0.0;
    for k in 0..n {
        lap_x += D2.iter().map(|&(o, w)| w * shifted(&[(k, o * h)], 0.0)).sum::<f64>() / (12.0 * h * h);
        let a = params.a()[k];
        if a != 0.0 {
            let mut dxy = 0.0;
            for &(ox, wx) in &D1 {
                for &(oy, wy) in &D1 {
                    dxy += wx * wy * shifted(&[(k, ox * h)], oy * h);
                }
            }
            cross += 2.0 * a * dxy / (144.0 * h * h);
        }
    }
    vt - (lap_x + cross + vyy + params.c() / z.y * vy)
}

/// `v_t - Lv` at `(t, z)`. Both derivative paths, taken relative to `v(t, z)`,
/// must agree to `1e-6 (|A| + |B| + 1)`.
pub fn barrier_residual(t: f64, z: &HalfSpacePoint, bp: &BarrierParams, params: &OperatorParams) -> Result<f64> {
    check_time(t, bp)?;
    if !(z.y > 0.0) || z.x.len() != params.dim_x() {
        return Err(Error::InvalidArgument(format!("evaluation point must be interior with dimension {}", params.dim_x())));
    }
    let v = barrier_value(t, z, bp)?;
    let a = normalized_residual(t, z, bp, params);
    let b = normalized_residual_fd(t, z, bp, params);
    if !(a.is_finite() && b.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("barrier residual".into()));
    }
    if (a - b).abs() > 1e-6 * (a.abs() + b.abs() + 1.0) {
        return Err(Error::DerivativeMismatch { closed: v * a, numeric: v * b });
    }
    Ok(v * a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub t: f64,
    pub z: HalfSpacePoint,
    pub value: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualScan {
    pub samples: Vec<ResidualSample>,
    /// `min residual / v`.
    pub min_normalized: f64,
    /// Points with `residual < -1e-12 v`.
    pub negative: usize,
}

impl ResidualScan {
    pub fn is_supersolution(&self) -> bool {
        self.negative == 0
    }

    /// Columns `t, |z|, residual`.
    pub fn plot_rows(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| vec![s.t, s.z.norm_sq().sqrt(), s.residual]).collect()
    }

    /// Columns `t, x…, y, residual`.
    pub fn to_csv(&self, dim_x: usize) -> String {
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim_x).map(|k| format!("x{k}")));
        header.push("y".into());
        header.push("residual".into());
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .map(|s| {
                let mut r = vec![s.t];
                r.extend(&s.z.x);
                r.push(s.z.y);
                r.push(s.residual);
                r
            })
            .collect();
        let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        crate::report::csv_table(&h, &rows)
    }
}

/// Tensor lattice with about `n` points: `t` in `(0, 0.95δ)`, each `x_k` in
/// `[-radius, radius]`, `y` in `(0, radius]`.
pub fn lattice_points(bp: &BarrierParams, dim_x: usize, radius: f64, n: usize) -> Vec<(f64, HalfSpacePoint)> {
    let axes = dim_x + 2;
    let m = ((n as f64).powf(1.0 / axes as f64).ceil() as usize).max(2);
    let mut out = Vec::with_capacity(m.pow(axes as u32));
    let mut idx = vec![0usize; axes];
    loop {
        let t = 0.95 * bp.delta * idx[0] as f64 / (m - 1) as f64;
        let x = (0..dim_x).map(|k| -radius + 2.0 * radius * idx[1 + k] as f64 / (m - 1) as f64).collect();
        let y = radius * (idx[axes - 1] + 1) as f64 / m as f64;
        out.push((t, HalfSpacePoint { x, y }));
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == axes {
                return out;
            }
        }
    }
}

/// Uniform random points with the lattice's ranges.
pub fn random_points(bp: &BarrierParams, dim_x: usize, radius: f64, n: usize, seed: u64) -> Vec<(f64, HalfSpacePoint)> {
    let mut rng = seeded(seed, 3);
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..0.95 * bp.delta);
            let x = (0..dim_x).map(|_| rng.random_range(-radius..=radius)).collect();
            let y = radius * (1.0 - rng.random::<f64>()).max(1e-3);
            (t, HalfSpacePoint { x, y })
        })
        .collect()
}

/// Evaluates [`barrier_residual`] at every point; fails on the first
/// derivative-path disagreement.
pub fn residual_scan(points: &[(f64, HalfSpacePoint)], bp: &BarrierParams, params: &OperatorParams) -> Result<ResidualScan> {
    let samples: Vec<ResidualSample> = points
        .par_iter()
        .map(|(t, z)| {
            let residual = barrier_residual(*t, z, bp, params)?;
            Ok(ResidualSample { t: *t, z: z.clone(), value: barrier_value(*t, z, bp)?, residual })
        })
        .collect::<Result<_>>()?;
    let min_normalized = samples.iter().map(|s| s.residual / s.value).fold(f64::INFINITY, f64::min);
    let negative = samples.iter().filter(|s| s.residual < -1e-12 * s.value).count();
    Ok(ResidualScan { samples, min_normalized, negative })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bp(alpha: f64, kappa: f64) -> BarrierParams {
        BarrierParams::new(alpha, kappa, 1.0, 0.1).unwrap()
    }

    #[test]
    fn value_examples() {
        let o = HalfSpacePoint::on_axis(1, 0.0);
        assert_eq!(barrier_value(0.0, &o, &bp(1.0, 0.1)).unwrap(), 1.0);
        assert!((barrier_value(0.5, &o, &bp(1.0, 0.1)).unwrap() - 2.0).abs() < 1e-15);
        assert!(barrier_value(1.0, &o, &bp(1.0, 0.1)).is_err());
        let z = HalfSpacePoint { x: vec![0.4], y: 1.2 };
        let mut prev = 0.0;
        for k in 0..10 {
            let v = barrier_value(0.09 * k as f64, &z, &bp(1.0, 0.1)).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn admissible_interval() {
        assert_eq!(admissible_kappa(&OperatorParams::uncoupled(1, 0.0).unwrap()).1, 0.25);
        let p = OperatorParams::new(1, 0.0, &[0.5]).unwrap();
        assert!((admissible_kappa(&p).1 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn origin_residual_matches_display() {
        let p = OperatorParams::uncoupled(1, 1.0).unwrap();
        let b = bp(2.0, 0.125);
        let z = HalfSpacePoint { x: vec![0.0], y: 0.05 };
        let r = barrier_residual(0.5, &z, &b, &p).unwrap();
        let v = barrier_value(0.5, &z, &b).unwrap();
        let kappa = 0.125;
        let expect = ((2.0 - 2.0 * kappa * 3.0) / 0.5 + (kappa - 4.0 * kappa * kappa) * 0.0025 / 0.25) * v;
        assert!((r - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn dual_paths_agree_on_random_points() {
        for (n, c, a) in [(0usize, -0.5, 0.0), (1, 0.0, 0.5), (2, 1.0, -0.3), (1, 2.0, -0.7)] {
            let a_vec: Vec<f64> = if n == 0 { vec![] } else { (0..n).map(|k| if k == 0 { a } else { 0.2 }).collect() };
            let p = OperatorParams::new(n, c, &a_vec).unwrap();
            let b = bp(3.0, 0.2);
            let pts = random_points(&b, n, 4.0, 2000, 7);
            assert!(residual_scan(&pts, &b, &p).is_ok(), "n={n} c={c}");
        }
    }

    #[test]
    fn admissible_kappa_is_supersolution() {
        for a in [0.0, 0.5, -0.9] {
            for c in [-0.5, 0.0, 1.0] {
                let p = OperatorParams::new(1, c, &[a]).unwrap();
                let kappa = admissible_kappa(&p).1;
                let b = BarrierParams::new(BarrierParams::minimal_alpha(&p, kappa, 0.1), kappa, 1.0, 0.1).unwrap();
                let scan = residual_scan(&lattice_points(&b, 1, 4.0, 3000), &b, &p).unwrap();
                assert!(scan.is_supersolution(), "a={a} c={c} min={}", scan.min_normalized);
            }
        }
    }

    #[test]
    fn negative_controls_fail() {
        let p = OperatorParams::uncoupled(1, 0.0).unwrap();
        let b = bp(BarrierParams::minimal_alpha(&p, 0.5, 1.0), 0.5);
        assert!(!residual_scan(&lattice_points(&b, 1, 4.0, 1000), &b, &p).unwrap().is_supersolution());
        // the weaker bound 1/(4+2|a|) is not enough
        let p = OperatorParams::new(1, 0.0, &[0.5]).unwrap();
        let b = bp(BarrierParams::minimal_alpha(&p, 0.2, 1.0), 0.2);
        assert!(!residual_scan(&lattice_points(&b, 1, 4.0, 8000), &b, &p).unwrap().is_supersolution());
    }

    #[test]
    fn growth_choice() {
        let p = OperatorParams::new(1, 0.5, &[0.5]).unwrap();
        let b = BarrierParams::for_growth(&p, 0.2).unwrap();
        assert!(b.kappa / b.delta > b.beta);
        assert!(BarrierParams::for_growth(&p, 0.0).is_err());
        assert_eq!(lattice_points(&b, 1, 1.0, 1000).len(), 1000);
    }
}
