//! Cell-centered tensor grid on `[-X, X]^N × [0, Y]` and discrete fields.
//!
//! Nodes sit at cell centers, so `y_j = (j + 1/2) h_y > 0` and the singular
//! coefficient is never evaluated at `y = 0`. Each cell carries the averaged
//! weight `w_j = (1/h_y) ∫_{cell} y^c dy`, so `w_j · h_x^N h_y` is the exact
//! `μ`-measure of the cell. Storage is row-major with `y` fastest.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{HalfSpacePoint, OperatorParams};

pub const MAX_DIM_X: usize = 2;
const MIN_RESOLUTION: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim_x: usize,
    x_extent: f64,
    n_x: usize,
    h_x: f64,
    y_extent: f64,
    n_y: usize,
    h_y: f64,
    c: f64,
    y_nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `y^c` at the interior faces `y = (j+1) h_y`, `j = 0..n_y-1`.
    face_weights: Vec<f64>,
}

/// Cell-centered grid for `params`. `x_extent`/`n_x` are ignored when `N = 0`.
pub fn build_grid(params: &OperatorParams, x_extent: f64, y_extent: f64, n_x: usize, n_y: usize) -> Result<Grid> {
    let dim_x = params.dim_x();
    if dim_x > MAX_DIM_X {
        return Err(Error::InvalidArgument(format!(
            "solver supports N <= {MAX_DIM_X}, got N = {dim_x}"
        )));
    }
    if !(y_extent > 0.0) || !y_extent.is_finite() {
        return Err(Error::InvalidArgument(format!("y extent must be positive, got {y_extent}")));
    }
    if n_y < MIN_RESOLUTION || (dim_x > 0 && n_x < MIN_RESOLUTION) {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least {MIN_RESOLUTION} cells per axis"
        )));
    }
    if dim_x > 0 && (!(x_extent > 0.0) || !x_extent.is_finite()) {
        return Err(Error::InvalidArgument(format!("x extent must be positive, got {x_extent}")));
    }
    let c = params.c();
    let h_y = y_extent / n_y as f64;
    let (n_x, h_x) = if dim_x == 0 { (1, 1.0) } else { (n_x, 2.0 * x_extent / n_x as f64) };
    let p = c + 1.0;
    let y_nodes: Vec<f64> = (0..n_y).map(|j| (j as f64 + 0.5) * h_y).collect();
    let weights: Vec<f64> = (0..n_y)
        .map(|j| {
            let lo = j as f64 * h_y;
            let hi = lo + h_y;
            let lo_p = if j == 0 { 0.0 } else { lo.powf(p) };
            (hi.powf(p) - lo_p) / (p * h_y)
        })
        .collect();
    let face_weights = (0..n_y.saturating_sub(1))
        .map(|j| ((j + 1) as f64 * h_y).powf(c))
        .collect();
    Ok(Grid {
        dim_x,
        x_extent: if dim_x == 0 { 0.0 } else { x_extent },
        n_x,
        h_x,
        y_extent,
        n_y,
        h_y,
        c,
        y_nodes,
        weights,
        face_weights,
    })
}

impl Grid {
    pub fn dim_x(&self) -> usize {
        self.dim_x
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn h_x(&self) -> f64 {
        self.h_x
    }
    pub fn h_y(&self) -> f64 {
        self.h_y
    }
    pub fn x_extent(&self) -> f64 {
        self.x_extent
    }
    pub fn y_extent(&self) -> f64 {
        self.y_extent
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn y_nodes(&self) -> &[f64] {
        &self.y_nodes
    }
    /// Cell-averaged `y^c`, one per `y` row.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// Number of `x` columns (`n_x^N`).
    pub fn n_columns(&self) -> usize {
        self.n_x.pow(self.dim_x as u32)
    }

    pub fn len(&self) -> usize {
        self.n_columns() * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lebesgue volume `h_x^N h_y` of a cell.
    pub fn cell_volume(&self) -> f64 {
        self.h_x.powi(self.dim_x as i32) * self.h_y
    }

    pub fn x_node(&self, i: usize) -> f64 {
        -self.x_extent + (i as f64 + 0.5) * self.h_x
    }

    pub fn index(&self, column: usize, j: usize) -> usize {
        column * self.n_y + j
    }

    /// Split a flat index into `(per-axis x indices, y index)`.
    pub fn split(&self, idx: usize) -> ([usize; MAX_DIM_X], usize) {
        let j = idx % self.n_y;
        let mut col = idx / self.n_y;
        let mut ix = [0; MAX_DIM_X];
        for k in (0..self.dim_x).rev() {
            ix[k] = col % self.n_x;
            col /= self.n_x;
        }
        (ix, j)
    }

    pub fn join(&self, ix: &[usize], j: usize) -> usize {
        let mut col = 0;
        for &i in ix.iter().take(self.dim_x) {
            col = col * self.n_x + i;
        }
        self.index(col, j)
    }

    pub fn point(&self, idx: usize) -> HalfSpacePoint {
        let (ix, j) = self.split(idx);
        HalfSpacePoint {
            x: (0..self.dim_x).map(|k| self.x_node(ix[k])).collect(),
            y: self.y_nodes[j],
        }
    }

    /// `μ`-measure of a cell.
    pub fn cell_measure(&self, idx: usize) -> f64 {
        self.weights[idx % self.n_y] * self.cell_volume()
    }

    /// Cell containing `z`, if any.
    pub fn locate(&self, z: &HalfSpacePoint) -> Option<usize> {
        if z.x.len() != self.dim_x || z.y < 0.0 || z.y > self.y_extent {
            return None;
        }
        let j = ((z.y / self.h_y) as usize).min(self.n_y - 1);
        let mut ix = [0; MAX_DIM_X];
        for k in 0..self.dim_x {
            let s = (z.x[k] + self.x_extent) / self.h_x;
            if s < 0.0 || z.x[k] > self.x_extent {
                return None;
            }
            ix[k] = (s as usize).min(self.n_x - 1);
        }
        Some(self.join(&ix, j))
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }

    /// Multilinear interpolation between cell centers; constant extension
    /// beyond the outermost centers (consistent with zero normal derivative).
    pub fn interpolate(&self, values: &[f64], z: &HalfSpacePoint) -> f64 {
        let (j0, fy) = bracket(z.y, self.h_y, 0.0, self.n_y);
        let mut corners = vec![(0usize, 1.0f64)];
        for k in 0..self.dim_x {
            let (i0, f) = bracket(z.x[k], self.h_x, -self.x_extent, self.n_x);
            let mut next = Vec::with_capacity(corners.len() * 2);
            for &(col, w) in &corners {
                next.push((col * self.n_x + i0, w * (1.0 - f)));
                next.push((col * self.n_x + (i0 + 1).min(self.n_x - 1), w * f));
            }
            corners = next;
        }
        let mut acc = 0.0;
        for &(col, w) in &corners {
            if w == 0.0 {
                continue;
            }
            let lo = values[self.index(col, j0)];
            let hi = values[self.index(col, (j0 + 1).min(self.n_y - 1))];
            acc += w * ((1.0 - fy) * lo + fy * hi);
        }
        acc
    }
}

/// Lower node index and fractional offset for cell-centered nodes starting at `origin + h/2`.
fn bracket(v: f64, h: f64, origin: f64, n: usize) -> (usize, f64) {
    let s = (v - origin) / h - 0.5;
    if s <= 0.0 {
        return (0, 0.0);
    }
    let i = s.floor() as usize;
    if i >= n - 1 {
        return (n - 1, 0.0);
    }
    (i, s - i as f64)
}

/// Discrete `u(t, ·)` on a grid.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub grid: Arc<Grid>,
    pub t: f64,
    pub values: Vec<f64>,
}

impl SolutionField {
    pub fn new(grid: Arc<Grid>, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, t, values })
    }

    pub fn from_fn<F: Fn(&HalfSpacePoint) -> f64>(grid: Arc<Grid>, t: f64, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, t, values }
    }

    pub fn constant(grid: Arc<Grid>, t: f64, v: f64) -> Self {
        let n = grid.len();
        Self { grid, t, values: vec![v; n] }
    }

    /// `μ`-normalized single-cell mass at the cell containing `z`.
    pub fn point_mass(grid: Arc<Grid>, z: &HalfSpacePoint) -> Result<Self> {
        let idx = grid
            .locate(z)
            .ok_or_else(|| Error::InvalidArgument(format!("source point {z:?} outside the grid")))?;
        let mut values = vec![0.0; grid.len()];
        values[idx] = 1.0 / grid.cell_measure(idx);
        Ok(Self { grid, t: 0.0, values })
    }

    /// Cell averages on `coarse`, a grid over the same window whose
    /// resolution divides this one. Preserves `∫ u dμ` cell by cell.
    pub fn coarsen(&self, coarse: Arc<Grid>) -> Result<SolutionField> {
        let fine = &self.grid;
        let aligned = coarse.dim_x == fine.dim_x
            && coarse.c == fine.c
            && coarse.x_extent == fine.x_extent
            && coarse.y_extent == fine.y_extent
            && fine.n_y % coarse.n_y == 0
            && fine.n_x % coarse.n_x == 0;
        if !aligned {
            return Err(Error::GridMismatch("coarse grid must cover the same window with a dividing resolution".into()));
        }
        let (rx, ry) = (fine.n_x / coarse.n_x, fine.n_y / coarse.n_y);
        let mut mass = vec![0.0; coarse.len()];
        for (i, u) in self.values.iter().enumerate() {
            let (ix, j) = fine.split(i);
            let cx: Vec<usize> = ix[..fine.dim_x].iter().map(|v| v / rx).collect();
            mass[coarse.join(&cx, j / ry)] += u * fine.cell_measure(i);
        }
        let values = mass.iter().enumerate().map(|(k, m)| m / coarse.cell_measure(k)).collect();
        SolutionField::new(coarse, self.t, values)
    }

    /// `∫ u dμ = Σ u_j w_j h_x^N h_y`.
    pub fn weighted_integral(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let n_y = self.grid.n_y();
        let w = self.grid.weights();
        self.values
            .iter()
            .enumerate()
            .map(|(i, u)| u * w[i % n_y])
            .sum::<f64>()
            * vol
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn eval(&self, z: &HalfSpacePoint) -> f64 {
        self.grid.interpolate(&self.values, z)
    }

    /// CSV with header `t,x1..xN,y,u,weight`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let g = &self.grid;
        let mut header = String::from("t");
        for k in 0..g.dim_x() {
            header.push_str(&format!(",x{}", k + 1));
        }
        header.push_str(",y,u,weight");
        writeln!(out, "{header}")?;
        for (i, u) in self.values.iter().enumerate() {
            let z = g.point(i);
            let mut line = crate::report::fmt_f64(self.t);
            for x in &z.x {
                line.push(',');
                line.push_str(&crate::report::fmt_f64(*x));
            }
            for v in [z.y, *u, g.weights()[i % g.n_y()]] {
                line.push(',');
                line.push_str(&crate::report::fmt_f64(v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Little-endian dump: magic `HLSF`, `u32` version = 1, `u32` N, `u32` n_x,
    /// `u32` n_y, `f64` t, X, Y, c, then `n_x^N · n_y` `f64` values in storage
    /// order (row-major, `y` fastest).
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        let g = &self.grid;
        out.write_all(b"HLSF")?;
        for v in [1u32, g.dim_x() as u32, g.n_x() as u32, g.n_y() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in [self.t, g.x_extent(), g.y_extent(), g.c()] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`SolutionField::write_binary`]; the grid is rebuilt from the header.
    pub fn read_binary<R: Read>(input: &mut R, params: &OperatorParams) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"HLSF" {
            return Err(Error::InvalidArgument("not a field dump".into()));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let mut f64s = [0f64; 4];
        for v in &mut f64s {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let [version, dim_x, n_x, n_y] = u32s;
        let [t, x_extent, y_extent, c] = f64s;
        if version != 1 || dim_x as usize != params.dim_x() || c != params.c() {
            return Err(Error::GridMismatch("dump header does not match parameters".into()));
        }
        let grid = Arc::new(build_grid(params, x_extent, y_extent, n_x as usize, n_y as usize)?);
        let mut values = vec![0.0; grid.len()];
        for v in &mut values {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        SolutionField::new(grid, t, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid0(c: f64) -> Grid {
        build_grid(&OperatorParams::uncoupled(0, c).unwrap(), 0.0, 1.0, 0, 4).unwrap()
    }

    #[test]
    fn coarsening_keeps_mass() {
        let p = OperatorParams::uncoupled(1, 0.5).unwrap();
        let fine = Arc::new(build_grid(&p, 1.0, 2.0, 12, 16).unwrap());
        let coarse = Arc::new(build_grid(&p, 1.0, 2.0, 4, 8).unwrap());
        let u = SolutionField::from_fn(fine, 0.3, |z| (z.x[0] + 2.0) * z.y);
        let v = u.coarsen(coarse.clone()).unwrap();
        assert!((v.weighted_integral() - u.weighted_integral()).abs() < 1e-13);
        let one = SolutionField::constant(u.grid.clone(), 0.0, 2.5).coarsen(coarse.clone()).unwrap();
        assert!(one.values.iter().all(|v| (v - 2.5).abs() < 1e-13));
        let wrong = Arc::new(build_grid(&p, 1.0, 2.0, 5, 8).unwrap());
        assert!(u.coarsen(wrong).is_err());
    }

    #[test]
    fn cell_centers() {
        let g = grid0(0.0);
        assert_eq!(g.y_nodes(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn linear_weight_is_node_value() {
        let g = grid0(1.0);
        for (w, y) in g.weights().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((w - y).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_weights_are_finite() {
        let g = grid0(-0.5);
        assert!(g.weights().iter().all(|w| w.is_finite() && *w > 0.0));
        // exact cell average of y^{-1/2} over [0, 1/4] is 4
        assert!((g.weights()[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_small_or_empty_grids() {
        let p = OperatorParams::uncoupled(1, 0.0).unwrap();
        assert!(build_grid(&p, 1.0, 1.0, 3, 10).is_err());
        assert!(build_grid(&p, 1.0, 0.0, 10, 10).is_err());
        let p3 = OperatorParams::uncoupled(3, 0.0).unwrap();
        assert!(build_grid(&p3, 1.0, 1.0, 10, 10).is_err());
    }

    #[test]
    fn index_roundtrip_and_locate() {
        let p = OperatorParams::uncoupled(2, 0.3).unwrap();
        let g = build_grid(&p, 2.0, 3.0, 5, 6).unwrap();
        for idx in 0..g.len() {
            let (ix, j) = g.split(idx);
            assert_eq!(g.join(&ix, j), idx);
            assert_eq!(g.locate(&g.point(idx)), Some(idx));
        }
        assert_eq!(g.locate(&HalfSpacePoint { x: vec![2.5, 0.0], y: 1.0 }), None);
    }

    #[test]
    fn measure_sums_to_exact_volume() {
        let p = OperatorParams::uncoupled(1, 0.7).unwrap();
        let g = Arc::new(build_grid(&p, 1.0, 2.0, 8, 16).unwrap());
        let one = SolutionField::constant(g, 0.0, 1.0);
        let exact = 2.0 * 2f64.powf(1.7) / 1.7;
        assert!((one.weighted_integral() - exact).abs() < 1e-13);
    }

    #[test]
    fn point_mass_has_unit_mass() {
        let p = OperatorParams::uncoupled(1, -0.4).unwrap();
        let g = Arc::new(build_grid(&p, 1.0, 2.0, 9, 16).unwrap());
        let d = SolutionField::point_mass(g, &HalfSpacePoint { x: vec![0.0], y: 0.05 }).unwrap();
        assert!((d.weighted_integral() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let p = OperatorParams::uncoupled(1, 0.0).unwrap();
        let g = Arc::new(build_grid(&p, 1.0, 1.0, 10, 10).unwrap());
        let f = SolutionField::from_fn(g, 0.0, |z| 1.0 + 2.0 * z.x[0] - z.y + 0.5 * z.x[0] * z.y);
        let z = HalfSpacePoint { x: vec![0.13], y: 0.41 };
        let want = 1.0 + 2.0 * 0.13 - 0.41 + 0.5 * 0.13 * 0.41;
        assert!((f.eval(&z) - want).abs() < 1e-14);
    }

    #[test]
    fn binary_dump_roundtrip() {
        let p = OperatorParams::uncoupled(1, 0.5).unwrap();
        let g = Arc::new(build_grid(&p, 1.5, 2.0, 6, 7).unwrap());
        let f = SolutionField::from_fn(g, 0.25, |z| z.x[0].sin() + z.y);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 16 + 32 + 8 * 42);
        let back = SolutionField::read_binary(&mut buf.as_slice(), &p).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.t, 0.25);
        assert!(back.grid.same_shape(&f.grid));
    }
}
