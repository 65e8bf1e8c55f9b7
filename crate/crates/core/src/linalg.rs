//! Small dense complex kernels shared by the solvers and their test oracles.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    // Σ conj(a) b
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// `y = A x` for a row-major `rows × cols` matrix.
pub fn matvec(a: &[Complex64], rows: usize, cols: usize, x: &[Complex64]) -> Vec<Complex64> {
    debug_assert_eq!(a.len(), rows * cols);
    (0..rows)
        .map(|r| {
            a[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(m, v)| m * v)
                .sum()
        })
        .collect()
}

/// `y = Aᴴ x` for a row-major `rows × cols` matrix.
pub fn matvec_adjoint(a: &[Complex64], rows: usize, cols: usize, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); cols];
    for r in 0..rows {
        let xr = x[r];
        for (o, m) in out.iter_mut().zip(&a[r * cols..(r + 1) * cols]) {
            *o += m.conj() * xr;
        }
    }
    out
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major `n × n` and is consumed.
pub fn lu_solve(mut a: Vec<Complex64>, n: usize, b: &[Complex64]) -> Result<Vec<Complex64>> {
    assert_eq!(a.len(), n * n);
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv, pmag) = (k..n)
            .map(|r| (r, a[r * n + k].norm()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmag < 1e-300 {
            return Err(Error::SingularSystem(format!("zero pivot in column {k}")));
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            x.swap(k, piv);
        }
        let inv = 1.0 / a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] * inv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in k..n {
                let v = a[k * n + c];
                a[r * n + c] -= f * v;
            }
            let xk = x[k];
            x[r] -= f * xk;
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for c in k + 1..n {
            acc -= a[k * n + c] * x[c];
        }
        x[k] = acc / a[k * n + k];
    }
    Ok(x)
}
