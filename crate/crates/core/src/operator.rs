//! Finite-volume discretization of `L` on a [`Grid`].
//!
//! The `y` part is in flux form,
//! `[y_{j+½}^c (u_{j+1} - u_j) - y_{j-½}^c (u_j - u_{j-1})] / (h_y² w_j)`,
//! with zero flux through `y = 0`, which is the discrete weighted Neumann
//! condition. The `x` part is the standard second difference. The mixed term
//! `2 a_k ∂_{x_k} ∂_y` has two stencils, see [`CrossStencil`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, SolutionField, MAX_DIM_X};
use crate::params::OperatorParams;

/// Discretization of the mixed derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossStencil {
    /// Four-point centered difference. Second order, not sign preserving.
    Centered,
    /// Seven-point positive-type stencil: the average of the two one-sided
    /// products aligned with `sign(a_k)`. First order, gives an M-matrix when
    /// the axial coefficients dominate.
    #[default]
    Monotone,
}

/// Treatment of the artificial outer faces `|x_k| = X` and `y = Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OuterBoundary {
    /// Zero normal derivative; conserves `∫ u dμ`.
    #[default]
    Neumann,
    /// `u = 0` on the outer faces (absorbing).
    ZeroDirichlet,
}

/// Compressed sparse row matrix with an explicit diagonal entry in every row.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.push((r, 0.0));
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            let d = start + cols[start..].iter().position(|&c| c == r).unwrap();
            diag_pos.push(d);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals, diag_pos }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag_pos.iter().map(|&p| self.vals[p]).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *out = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// `alpha I + beta A`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= beta;
        }
        for &p in &out.diag_pos {
            out.vals[p] += alpha;
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.n];
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        CsrMatrix::from_rows(rows)
    }

    /// Smallest off-diagonal entry (`+inf` for a diagonal matrix).
    pub fn min_off_diagonal(&self) -> f64 {
        let mut m = f64::INFINITY;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                if c != r {
                    m = m.min(v);
                }
            }
        }
        m
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bands `(sub, diag, sup)` if the matrix is tridiagonal.
    pub fn tridiagonal_bands(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut sub = vec![0.0; self.n];
        let mut sup = vec![0.0; self.n];
        let diag = self.diagonal();
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                if c + 1 == r {
                    sub[r] = v;
                } else if c == r + 1 {
                    sup[r] = v;
                } else if c != r && v != 0.0 {
                    return None;
                }
            }
        }
        Some((sub, diag, sup))
    }
}

/// Assembled discrete operator, split as `L_h = axial + cross`.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: Arc<Grid>,
    pub params: OperatorParams,
    pub stencil: CrossStencil,
    pub outer: OuterBoundary,
    pub axial: CsrMatrix,
    pub cross: CsrMatrix,
    pub full: CsrMatrix,
}

impl DiscreteOperator {
    pub fn new(grid: Arc<Grid>, params: &OperatorParams, stencil: CrossStencil, outer: OuterBoundary) -> Result<Self> {
        if grid.dim_x() != params.dim_x() || grid.c() != params.c() {
            return Err(Error::GridMismatch("grid was built for different parameters".into()));
        }
        let axial_rows = assemble_axial(&grid, outer);
        let cross_rows = assemble_cross(&grid, params.a(), stencil);
        let full_rows = axial_rows
            .iter()
            .zip(&cross_rows)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(Self {
            axial: CsrMatrix::from_rows(axial_rows),
            cross: CsrMatrix::from_rows(cross_rows),
            full: CsrMatrix::from_rows(full_rows),
            grid,
            params: params.clone(),
            stencil,
            outer,
        })
    }

    pub fn has_cross(&self) -> bool {
        !self.params.is_uncoupled()
    }

    /// All off-diagonal entries of the full operator are non-negative.
    /// With the monotone stencil this holds for moderate `|a|`; the bound
    /// tightens in the first `y` rows as `|c|` grows.
    pub fn is_monotone(&self) -> bool {
        self.full.min_off_diagonal() >= -1e-12 * self.full.max_abs_entry()
    }
}

fn x_neighbors(grid: &Grid, ix: &[usize; MAX_DIM_X], k: usize) -> (Option<usize>, Option<usize>) {
    let i = ix[k];
    let lo = (i > 0).then(|| i - 1);
    let hi = (i + 1 < grid.n_x()).then(|| i + 1);
    (lo, hi)
}

fn with_axis(ix: &[usize; MAX_DIM_X], k: usize, v: usize) -> [usize; MAX_DIM_X] {
    let mut out = *ix;
    out[k] = v;
    out
}

fn assemble_axial(grid: &Grid, outer: OuterBoundary) -> Vec<Vec<(usize, f64)>> {
    let n_y = grid.n_y();
    let hy2 = grid.h_y() * grid.h_y();
    let hx2 = grid.h_x() * grid.h_x();
    let w = grid.weights();
    let fw = grid.face_weights();
    let top_weight = grid.y_extent().powf(grid.c());
    let dirichlet = outer == OuterBoundary::ZeroDirichlet;
    (0..grid.len())
        .map(|idx| {
            let (ix, j) = grid.split(idx);
            let mut row = Vec::with_capacity(1 + 2 + 2 * grid.dim_x());
            let mut diag = 0.0;
            if j > 0 {
                let f = fw[j - 1] / (hy2 * w[j]);
                row.push((idx - 1, f));
                diag -= f;
            }
            if j + 1 < n_y {
                let f = fw[j] / (hy2 * w[j]);
                row.push((idx + 1, f));
                diag -= f;
            } else if dirichlet {
                diag -= 2.0 * top_weight / (hy2 * w[j]);
            }
            for k in 0..grid.dim_x() {
                let (lo, hi) = x_neighbors(grid, &ix, k);
                for nb in [lo, hi] {
                    match nb {
                        Some(i) => {
                            row.push((grid.join(&with_axis(&ix, k, i), j), 1.0 / hx2));
                            diag -= 1.0 / hx2;
                        }
                        None if dirichlet => diag -= 2.0 / hx2,
                        None => {}
                    }
                }
            }
            row.push((idx, diag));
            row
        })
        .collect()
}

fn assemble_cross(grid: &Grid, a: &[f64], stencil: CrossStencil) -> Vec<Vec<(usize, f64)>> {
    let n_y = grid.n_y();
    let n_x = grid.n_x();
    let hxy = grid.h_x() * grid.h_y();
    // clamped neighbour lookup: a missing ghost reuses the boundary cell
    let at = |ix: &[usize; MAX_DIM_X], k: usize, di: isize, j: usize, dj: isize| -> usize {
        let i = (ix[k] as isize + di).clamp(0, n_x as isize - 1) as usize;
        let jj = (j as isize + dj).clamp(0, n_y as isize - 1) as usize;
        grid.join(&with_axis(ix, k, i), jj)
    };
    (0..grid.len())
        .map(|idx| {
            let (ix, j) = grid.split(idx);
            let mut row = Vec::new();
            for (k, &ak) in a.iter().enumerate() {
                if ak == 0.0 {
                    continue;
                }
                match stencil {
                    CrossStencil::Centered => {
                        let s = 2.0 * ak / (4.0 * hxy);
                        row.push((at(&ix, k, 1, j, 1), s));
                        row.push((at(&ix, k, 1, j, -1), -s));
                        row.push((at(&ix, k, -1, j, 1), -s));
                        row.push((at(&ix, k, -1, j, -1), s));
                    }
                    CrossStencil::Monotone => {
                        let s = ak.abs() / hxy;
                        // a > 0: (D+D+ + D-D-)/2, a < 0: -(D+D- + D-D+)/2
                        let d: isize = if ak > 0.0 { 1 } else { -1 };
                        row.push((at(&ix, k, 1, j, d), s));
                        row.push((at(&ix, k, -1, j, -d), s));
                        row.push((at(&ix, k, 1, j, 0), -s));
                        row.push((at(&ix, k, -1, j, 0), -s));
                        row.push((at(&ix, k, 0, j, d), -s));
                        row.push((at(&ix, k, 0, j, -d), -s));
                        row.push((idx, 2.0 * s));
                    }
                }
            }
            row
        })
        .collect()
}

/// `L_h u` with the given mixed-term stencil and Neumann outer faces.
pub fn apply_operator(u: &SolutionField, params: &OperatorParams, stencil: CrossStencil) -> Result<SolutionField> {
    let op = DiscreteOperator::new(u.grid.clone(), params, stencil, OuterBoundary::Neumann)?;
    SolutionField::new(u.grid.clone(), u.t, op.full.apply(&u.values))
}
