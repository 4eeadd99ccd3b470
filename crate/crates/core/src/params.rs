//! Problem instance and half-space geometry.
//!
//! The operator is
//!
//! ```text
//! L = Δ_x + 2 a·∇_x D_y + D_yy + (c/y) D_y      on { (x, y) : x ∈ R^N, y > 0 }
//! ```
//!
//! with the weighted Neumann condition `y^c D_y u → 0` as `y → 0`. Every
//! instance must satisfy `c + 1 > 0` and `|a| < 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive part `max(v, 0)`.
pub fn pos_part(v: f64) -> f64 {
    v.max(0.0)
}

/// Negative part `max(-v, 0)`, so that `v = pos_part(v) - neg_part(v)`.
pub fn neg_part(v: f64) -> f64 {
    (-v).max(0.0)
}

/// A validated `(N, c, a)` triple. Construct through [`OperatorParams::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct OperatorParams {
    n: usize,
    c: f64,
    a: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawParams {
    n: usize,
    c: f64,
    a: Vec<f64>,
}

impl TryFrom<RawParams> for OperatorParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        validate_params(raw.n, raw.c, &raw.a)
    }
}

impl From<OperatorParams> for RawParams {
    fn from(p: OperatorParams) -> Self {
        RawParams { n: p.n, c: p.c, a: p.a }
    }
}

/// Checks `c + 1 > 0`, `|a| < 1` and that `[[I, a], [aᵀ, 1]]` factors.
pub fn validate_params(n: usize, c: f64, a: &[f64]) -> Result<OperatorParams> {
    if a.len() != n {
        return Err(Error::InvalidParams(format!(
            "coupling vector has length {} but N = {n}",
            a.len()
        )));
    }
    if !c.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("non-finite parameter".into()));
    }
    if c + 1.0 <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "c = {c} violates c + 1 > 0 (y^c is not integrable at 0)"
        )));
    }
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm >= 1.0 {
        return Err(Error::InvalidParams(format!(
            "|a| = {norm} violates |a| < 1 (operator not elliptic)"
        )));
    }
    let params = OperatorParams { n, c, a: a.to_vec() };
    if cholesky(&params.diffusion_matrix(), n + 1).is_none() {
        return Err(Error::InvalidParams(
            "diffusion matrix is not positive definite".into(),
        ));
    }
    Ok(params)
}

impl OperatorParams {
    pub fn new(n: usize, c: f64, a: &[f64]) -> Result<Self> {
        validate_params(n, c, a)
    }

    /// Classical instance `a = 0`.
    pub fn uncoupled(n: usize, c: f64) -> Result<Self> {
        validate_params(n, c, &vec![0.0; n])
    }

    pub fn dim_x(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn a_norm(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_uncoupled(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    /// `N + 1 + c⁺`, the doubling and Harnack dimension.
    pub fn homogeneous_dim_pos(&self) -> f64 {
        self.n as f64 + 1.0 + pos_part(self.c)
    }

    /// Row-major `(N+1)×(N+1)` matrix `[[I_N, a], [aᵀ, 1]]`.
    pub fn diffusion_matrix(&self) -> Vec<f64> {
        let m = self.n + 1;
        let mut out = vec![0.0; m * m];
        for i in 0..self.n {
            out[i * m + i] = 1.0;
            out[i * m + self.n] = self.a[i];
            out[self.n * m + i] = self.a[i];
        }
        out[self.n * m + self.n] = 1.0;
        out
    }
}

/// Lower-triangular Cholesky factor of a row-major `m×m` symmetric matrix,
/// or `None` if the matrix is not positive definite.
pub fn cholesky(matrix: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = matrix[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}

/// A point `(x, y)` of the closed half-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpacePoint {
    pub x: Vec<f64>,
    pub y: f64,
}

impl HalfSpacePoint {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if !(y >= 0.0) || !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "half-space point needs finite x and y >= 0, got y = {y}"
            )));
        }
        Ok(Self { x, y })
    }

    /// Point on the `y` axis with `x = 0 ∈ R^n`.
    pub fn on_axis(n: usize, y: f64) -> Self {
        Self { x: vec![0.0; n], y }
    }

    pub fn is_interior(&self) -> bool {
        self.y > 0.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>() + self.y * self.y
    }

    pub fn dist_sq(&self, other: &HalfSpacePoint) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            + (self.y - other.y) * (self.y - other.y)
    }

    pub fn scaled(&self, s: f64) -> HalfSpacePoint {
        HalfSpacePoint {
            x: self.x.iter().map(|v| v * s).collect(),
            y: self.y * s,
        }
    }
}

/// `Q(z0, r) = B(x0, r) × ((y0 - r)⁺, y0 + r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderBall {
    pub center: HalfSpacePoint,
    pub radius: f64,
}

impl CylinderBall {
    pub fn new(center: HalfSpacePoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn y_range(&self) -> (f64, f64) {
        (
            pos_part(self.center.y - self.radius),
            self.center.y + self.radius,
        )
    }

    pub fn contains(&self, z: &HalfSpacePoint) -> bool {
        let dx2: f64 = z
            .x
            .iter()
            .zip(&self.center.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let (lo, hi) = self.y_range();
        dx2 < self.radius * self.radius && z.y > lo && z.y < hi
    }
}

/// `I((t0, z0), r) = ]t0 - r², t0[ × Q(z0, r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub apex_time: f64,
    pub ball: CylinderBall,
}

impl ParabolicCylinder {
    pub fn new(apex_time: f64, center: HalfSpacePoint, radius: f64) -> Result<Self> {
        Ok(Self {
            apex_time,
            ball: CylinderBall::new(center, radius)?,
        })
    }

    pub fn time_range(&self) -> (f64, f64) {
        let r = self.ball.radius;
        (self.apex_time - r * r, self.apex_time)
    }

    /// Same apex and center, radius scaled by `factor`.
    pub fn shrink(&self, factor: f64) -> ParabolicCylinder {
        ParabolicCylinder {
            apex_time: self.apex_time,
            ball: CylinderBall {
                center: self.ball.center.clone(),
                radius: self.ball.radius * factor,
            },
        }
    }

    pub fn contains(&self, t: f64, z: &HalfSpacePoint) -> bool {
        let (t0, t1) = self.time_range();
        t > t0 && t < t1 && self.ball.contains(z)
    }
}
