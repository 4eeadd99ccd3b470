//! Linear solvers for the implicit time steps.

use crate::error::{Error, Result};
use crate::operator::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual `|b - Ax| / |b|` at exit.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::NonFinite("zero pivot in tridiagonal solve".into()));
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta == 0.0 {
            return Err(Error::NonFinite("zero pivot in tridiagonal solve".into()));
        }
        c[i] = if i + 1 < n { sup[i] / beta } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Jacobi-preconditioned conjugate gradients for the symmetric positive
/// definite operator `apply`.
pub fn pcg<F: Fn(&[f64], &mut [f64])>(
    apply: F,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm(&r) / b_norm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / b_norm;
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, residual: res });
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

/// Right Jacobi-preconditioned BiCGSTAB for general sparse `a`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm(&r) / b_norm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.mul_vec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / b_norm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats { iterations: it + 1, residual: norm(&s) / b_norm });
        }
        for i in 0..n {
            zs[i] = s[i] * inv_diag[i];
        }
        a.mul_vec(&zs, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zs[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    // recompute the true residual before giving up
    a.mul_vec(x, &mut t);
    let res = norm(&b.iter().zip(&t).map(|(b, t)| b - t).collect::<Vec<_>>()) / b_norm;
    if res <= tol {
        return Ok(SolveStats { iterations: max_iter, residual: res });
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0 + shift)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let a = laplace_1d(50, 0.1);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.apply(&x_true);
        let (sub, diag, sup) = a.tridiagonal_bands().unwrap();
        let x = thomas(&sub, &diag, &sup, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_and_bicgstab_agree() {
        let a = laplace_1d(200, 0.05);
        let b: Vec<f64> = (0..200).map(|i| 1.0 + (i % 7) as f64).collect();
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut x1 = vec![0.0; 200];
        pcg(|v, out| a.mul_vec(v, out), &inv, &b, &mut x1, 1e-13, 2000).unwrap();
        let mut x2 = vec![0.0; 200];
        bicgstab(&a, &b, &mut x2, 1e-13, 2000).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn bicgstab_nonsymmetric() {
        let n = 100;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -2.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -0.5));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let b = a.apply(&x_true);
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, &b, &mut x, 1e-14, 1000).unwrap();
        assert!(stats.residual <= 1e-14);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let a = laplace_1d(400, 0.0);
        let b = vec![1.0; 400];
        let mut x = vec![0.0; 400];
        let err = bicgstab(&a, &b, &mut x, 1e-14, 3).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 3, .. }));
    }
}
