//! Analytic TM scattering by a homogeneous circular cylinder centred at the
//! origin, illuminated by the same `(i/4) H0` line source the forward model
//! uses. Serves as the reference for forward-model validation.

use num_complex::Complex64;

use crate::bessel::{bessel_j_seq, derivative_seq, hankel_seq};
use crate::geometry::Point;

/// Scattering coefficients `s_n`, `n = 0..=nmax`, for a cylinder of radius
/// `radius` and real relative permittivity `eps_r` at wavenumber `k0`.
pub fn cylinder_coefficients(k0: f64, radius: f64, eps_r: f64, nmax: usize) -> Vec<Complex64> {
    let k1 = k0 * eps_r.sqrt();
    let (x0, x1) = (k0 * radius, k1 * radius);
    let j_out = bessel_j_seq(nmax + 1, x0);
    let j_in = bessel_j_seq(nmax + 1, x1);
    let h_out = hankel_seq(nmax + 1, x0);
    let dj_out = derivative_seq(&j_out, x0);
    let dj_in = derivative_seq(&j_in, x1);
    let dh_out = derivative_seq(&h_out, x0);
    (0..=nmax)
        .map(|n| {
            let num = k1 * dj_in[n] * j_out[n] - k0 * j_in[n] * dj_out[n];
            let den = h_out[n] * (-k1 * dj_in[n]) + dh_out[n] * (k0 * j_in[n]);
            Complex64::new(num, 0.0) / den
        })
        .collect()
}

/// Scattered field at each receiver for one line source at `tx`.
pub fn cylinder_scattered_field(
    k0: f64,
    radius: f64,
    eps_r: f64,
    tx: Point,
    rx: &[Point],
) -> Vec<Complex64> {
    let rho_s = tx[0].hypot(tx[1]);
    let phi_s = tx[1].atan2(tx[0]);
    let nmax = (k0 * eps_r.sqrt() * radius).ceil() as usize + 20;
    let s = cylinder_coefficients(k0, radius, eps_r, nmax);
    let h_src = hankel_seq(nmax, k0 * rho_s);
    let quarter_i = Complex64::new(0.0, 0.25);
    rx.iter()
        .map(|r| {
            let rho = r[0].hypot(r[1]);
            let dphi = r[1].atan2(r[0]) - phi_s;
            let h_obs = hankel_seq(nmax, k0 * rho);
            let mut acc = s[0] * h_src[0] * h_obs[0];
            for n in 1..=nmax {
                acc += 2.0 * s[n] * h_src[n] * h_obs[n] * (n as f64 * dphi).cos();
            }
            quarter_i * acc
        })
        .collect()
}
