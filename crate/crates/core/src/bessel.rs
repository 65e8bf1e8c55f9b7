//! Cylinder functions of integer order for real positive arguments.
//!
//! Small and moderate arguments use Miller's backward recurrence for `J_n`,
//! normalised with `J_0 + 2 Σ J_2k = 1`. The Neumann expansions
//!
//! ```text
//! Y_0(x) = (2/π)(ln(x/2) + γ) J_0(x) − (4/π) Σ_{k≥1} (−1)^k J_2k(x) / k
//! Y_1(x) = (2/π)[(ln(x/2) + γ) J_1(x) − J_0(x)/x] + (2/π) Σ_{k≥1} (−1)^k (J_2k−1 − J_2k+1) / k
//! ```
//!
//! give `Y_0` and `Y_1` from the same sequence. Above [`ASYMPTOTIC_CUTOFF`] the
//! Hankel asymptotic expansion is summed until its terms stop shrinking.
//! Higher-order `Y_n` always come from forward recurrence, which is stable.

use num_complex::Complex64;
use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Argument above which the asymptotic expansion is used for orders 0 and 1.
pub const ASYMPTOTIC_CUTOFF: f64 = 25.0;

/// `(P, Q)` of the Hankel asymptotic expansion of order `nu` at `x`.
fn asymptotic_pq(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        let mag = term.abs();
        if mag > last || mag < 1e-18 {
            break;
        }
        last = mag;
        // signs follow +,-,- ,+ in pairs: Q gets k odd, P gets k even
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
    }
    (p, q)
}

fn asymptotic_jy(nu: f64, x: f64) -> (f64, f64) {
    let (p, q) = asymptotic_pq(nu, x);
    let phase = x - (0.5 * nu + 0.25) * PI;
    let (s, c) = phase.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// Normalised Miller sequence `J_0..=J_top` for `x > 0`.
fn miller_sequence(top: usize, x: f64) -> Vec<f64> {
    let span = top.max(x.ceil() as usize);
    let mut start = span + 30 + (60.0 * span as f64).sqrt() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut f = vec![0.0; start + 2];
    f[start] = 1e-300;
    for k in (1..=start).rev() {
        f[k - 1] = 2.0 * k as f64 / x * f[k] - f[k + 1];
        if f[k - 1].abs() > 1e250 {
            for v in f[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let mut norm = f[0];
    for k in (2..=start).step_by(2) {
        norm += 2.0 * f[k];
    }
    f.truncate(start + 1);
    f.iter_mut().for_each(|v| *v /= norm);
    f
}

/// `J_0(x)`, `J_1(x)`, `Y_0(x)`, `Y_1(x)` for `x > 0`.
pub fn j0_j1_y0_y1(x: f64) -> [f64; 4] {
    debug_assert!(x > 0.0, "cylinder functions need x > 0, got {x}");
    if x >= ASYMPTOTIC_CUTOFF {
        let (j0, y0) = asymptotic_jy(0.0, x);
        let (j1, y1) = asymptotic_jy(1.0, x);
        return [j0, j1, y0, y1];
    }
    let j = miller_sequence(2, x);
    let log_term = (0.5 * x).ln() + EULER_GAMMA;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut k = 1;
    while 2 * k + 1 < j.len() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s0 += sign * j[2 * k] / k as f64;
        s1 += sign * (j[2 * k - 1] - j[2 * k + 1]) / k as f64;
        k += 1;
    }
    let y0 = 2.0 / PI * log_term * j[0] - 4.0 / PI * s0;
    let y1 = 2.0 / PI * (log_term * j[1] - j[0] / x) + 2.0 / PI * s1;
    [j[0], j[1], y0, y1]
}

pub fn j0(x: f64) -> f64 {
    j0_j1_y0_y1(x)[0]
}

pub fn j1(x: f64) -> f64 {
    j0_j1_y0_y1(x)[1]
}

pub fn y0(x: f64) -> f64 {
    j0_j1_y0_y1(x)[2]
}

pub fn y1(x: f64) -> f64 {
    j0_j1_y0_y1(x)[3]
}

/// Hankel function of the first kind, order 0.
pub fn hankel0(x: f64) -> Complex64 {
    let [j0, _, y0, _] = j0_j1_y0_y1(x);
    Complex64::new(j0, y0)
}

/// Hankel function of the first kind, order 1.
pub fn hankel1(x: f64) -> Complex64 {
    let v = j0_j1_y0_y1(x);
    Complex64::new(v[1], v[3])
}

/// `J_0(x) ..= J_nmax(x)`.
pub fn bessel_j_seq(nmax: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; nmax + 1];
        out[0] = 1.0;
        return out;
    }
    if x >= ASYMPTOTIC_CUTOFF && (nmax as f64) < x {
        // forward recurrence is stable while n < x
        let [j0, j1, _, _] = j0_j1_y0_y1(x);
        let mut out = Vec::with_capacity(nmax + 1);
        out.push(j0);
        if nmax >= 1 {
            out.push(j1);
        }
        for n in 1..nmax {
            out.push(2.0 * n as f64 / x * out[n] - out[n - 1]);
        }
        return out;
    }
    let mut seq = miller_sequence(nmax, x);
    seq.truncate(nmax + 1);
    seq
}

/// `Y_0(x) ..= Y_nmax(x)` by forward recurrence.
pub fn bessel_y_seq(nmax: usize, x: f64) -> Vec<f64> {
    let [_, _, y0, y1] = j0_j1_y0_y1(x);
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(y0);
    if nmax >= 1 {
        out.push(y1);
    }
    for n in 1..nmax {
        out.push(2.0 * n as f64 / x * out[n] - out[n - 1]);
    }
    out
}

/// `H_n^(1)(x)` for `n = 0..=nmax`.
pub fn hankel_seq(nmax: usize, x: f64) -> Vec<Complex64> {
    bessel_j_seq(nmax, x)
        .into_iter()
        .zip(bessel_y_seq(nmax, x))
        .map(|(j, y)| Complex64::new(j, y))
        .collect()
}

/// Derivatives `f_n'(x) = f_{n-1}(x) − (n/x) f_n(x)` for a sequence with
/// `f_{-1} = −f_1` (true for `J`, `Y` and `H`).
pub fn derivative_seq<T>(seq: &[T], x: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    (0..seq.len())
        .map(|n| {
            if n == 0 {
                -seq[1]
            } else {
                seq[n - 1] - seq[n] * (n as f64 / x)
            }
        })
        .collect()
}
