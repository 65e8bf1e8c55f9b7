//! Truncated Fourier basis for the induced currents.
//!
//! The retained modes are the four `m_f × m_f` corner blocks of the 2-D DFT
//! plane. Their row frequencies are `{0..m_f} ∪ {M1−m_f..M1}` and their
//! column frequencies likewise, so the retained set is a tensor product and
//! both maps reduce to two small dense transforms instead of full FFTs.
//!
//! Coefficient order: top-left, top-right, bottom-left, bottom-right block,
//! row-major inside each block. The forward DFT is unnormalised, the inverse
//! carries `1/(M1·M2)`, hence `truncate(expand(α)) = α` and
//! `⟨expand(α), x⟩ = ⟨α, truncate(x)⟩ / (M1·M2)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Per-view truncated coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCoefficients {
    pub m_f: usize,
    pub views: Vec<Vec<Complex64>>,
}

impl SpectralCoefficients {
    pub fn zeros(m_f: usize, n_views: usize) -> Self {
        Self {
            m_f,
            views: vec![vec![ZERO; 4 * m_f * m_f]; n_views],
        }
    }

    pub fn m0(&self) -> usize {
        4 * self.m_f * self.m_f
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// Precomputed twiddle tables for one grid shape and block size.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    m1: usize,
    m2: usize,
    m_f: usize,
    /// `e^{-2πi k_a r / M1}`, shape `2m_f × M1`.
    w1: Vec<Complex64>,
    /// `e^{-2πi k_b c / M2}`, shape `2m_f × M2`.
    w2: Vec<Complex64>,
}

fn kept_frequencies(n: usize, m_f: usize) -> Vec<usize> {
    (0..m_f).chain(n - m_f..n).collect()
}

fn twiddles(n: usize, m_f: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(2 * m_f * n);
    for k in kept_frequencies(n, m_f) {
        for r in 0..n {
            // reduce the phase index first to keep the angle small
            let phase = -2.0 * PI * ((k * r) % n) as f64 / n as f64;
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
    out
}

impl SpectralBasis {
    pub fn new(m1: usize, m2: usize, m_f: usize) -> Result<Self> {
        if m_f == 0 || 2 * m_f > m1.min(m2) {
            return Err(Error::InvalidConfig(format!(
                "m_f = {m_f} does not give disjoint corner blocks on {m1}x{m2}"
            )));
        }
        Ok(Self {
            m1,
            m2,
            m_f,
            w1: twiddles(m1, m_f),
            w2: twiddles(m2, m_f),
        })
    }

    pub fn m0(&self) -> usize {
        4 * self.m_f * self.m_f
    }

    pub fn m_f(&self) -> usize {
        self.m_f
    }

    pub fn grid_len(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    /// DFT-plane `(row, col)` of each coefficient, in coefficient order.
    pub fn mode_indices(&self) -> Vec<(usize, usize)> {
        let rows = kept_frequencies(self.m1, self.m_f);
        let cols = kept_frequencies(self.m2, self.m_f);
        (0..self.m0())
            .map(|k| {
                let (a, b) = self.block_position(k);
                (rows[a], cols[b])
            })
            .collect()
    }

    /// Position of coefficient `k` in the `2m_f × 2m_f` kept-mode matrix.
    fn block_position(&self, k: usize) -> (usize, usize) {
        let mf = self.m_f;
        let block = k / (mf * mf);
        let within = k % (mf * mf);
        let a = within / mf + if block >= 2 { mf } else { 0 };
        let b = within % mf + if block % 2 == 1 { mf } else { 0 };
        (a, b)
    }

    fn coefficient_index(&self, a: usize, b: usize) -> usize {
        let mf = self.m_f;
        let block = 2 * (a / mf) + b / mf;
        block * mf * mf + (a % mf) * mf + b % mf
    }

    /// Corner-block DFT coefficients of one view.
    pub fn truncate(&self, j: &[Complex64]) -> Result<Vec<Complex64>> {
        if j.len() != self.grid_len() {
            return Err(Error::ShapeMismatch(format!(
                "truncate: view has {} entries, grid has {}",
                j.len(),
                self.grid_len()
            )));
        }
        let (m1, m2, k) = (self.m1, self.m2, 2 * self.m_f);
        // t[r][b] = Σ_c j[r,c] w2[b,c]
        let mut t = vec![ZERO; m1 * k];
        for r in 0..m1 {
            let row = &j[r * m2..(r + 1) * m2];
            for b in 0..k {
                let w = &self.w2[b * m2..(b + 1) * m2];
                t[r * k + b] = row.iter().zip(w).map(|(x, w)| x * w).sum();
            }
        }
        let mut alpha = vec![ZERO; self.m0()];
        for a in 0..k {
            let w = &self.w1[a * m1..(a + 1) * m1];
            for b in 0..k {
                let mut acc = ZERO;
                for r in 0..m1 {
                    acc += w[r] * t[r * k + b];
                }
                alpha[self.coefficient_index(a, b)] = acc;
            }
        }
        Ok(alpha)
    }

    /// Inverse DFT of the spectrum that is `alpha` on the corner blocks and
    /// zero elsewhere.
    pub fn expand(&self, alpha: &[Complex64]) -> Result<Vec<Complex64>> {
        if alpha.len() != self.m0() {
            return Err(Error::ShapeMismatch(format!(
                "expand: {} coefficients, expected {}",
                alpha.len(),
                self.m0()
            )));
        }
        let (m1, m2, k) = (self.m1, self.m2, 2 * self.m_f);
        let scale = 1.0 / (m1 * m2) as f64;
        let mut a_mat = vec![ZERO; k * k];
        for (idx, v) in alpha.iter().enumerate() {
            let (a, b) = self.block_position(idx);
            a_mat[a * k + b] = v * scale;
        }
        // u[r][b] = Σ_a conj(w1[a,r]) A[a,b]
        let mut u = vec![ZERO; m1 * k];
        for a in 0..k {
            let w = &self.w1[a * m1..(a + 1) * m1];
            for r in 0..m1 {
                let wc = w[r].conj();
                for b in 0..k {
                    u[r * k + b] += wc * a_mat[a * k + b];
                }
            }
        }
        let mut out = vec![ZERO; m1 * m2];
        for r in 0..m1 {
            let row = &mut out[r * m2..(r + 1) * m2];
            for b in 0..k {
                let ub = u[r * k + b];
                let w = &self.w2[b * m2..(b + 1) * m2];
                for (o, w) in row.iter_mut().zip(w) {
                    *o += ub * w.conj();
                }
            }
        }
        Ok(out)
    }

    pub fn truncate_grid(&self, j: &ComplexGrid) -> Result<Vec<Complex64>> {
        if (j.m1(), j.m2()) != (self.m1, self.m2) {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} vs basis {}x{}",
                j.m1(),
                j.m2(),
                self.m1,
                self.m2
            )));
        }
        self.truncate(j.values())
    }

    pub fn expand_grid(&self, alpha: &[Complex64], cell_size: f64) -> Result<ComplexGrid> {
        ComplexGrid::new(self.m1, self.m2, cell_size, self.expand(alpha)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot_conj;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn naive_dft(x: &[Complex64], m1: usize, m2: usize, k1: usize, k2: usize) -> Complex64 {
        let mut acc = ZERO;
        for r in 0..m1 {
            for c in 0..m2 {
                let ph = -2.0 * PI * (k1 as f64 * r as f64 / m1 as f64 + k2 as f64 * c as f64 / m2 as f64);
                acc += x[r * m2 + c] * Complex64::from_polar(1.0, ph);
            }
        }
        acc
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let basis = SpectralBasis::new(8, 8, 2).unwrap();
        let c = Complex64::new(0.7, -0.2);
        let alpha = basis.truncate(&vec![c; 64]).unwrap();
        assert!((alpha[0] - c * 64.0).norm() < 1e-12);
        assert!(alpha[1..].iter().all(|v| v.norm() < 1e-12));
        assert!(basis.truncate(&[ZERO; 64]).unwrap().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn matches_brute_force_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = SpectralBasis::new(8, 8, 2).unwrap();
        let x = random_vec(64, &mut rng);
        let alpha = basis.truncate(&x).unwrap();
        let modes = basis.mode_indices();
        assert_eq!(modes[..4], [(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(modes[4..8], [(0, 6), (0, 7), (1, 6), (1, 7)]);
        assert_eq!(modes[8], (6, 0));
        assert_eq!(modes[15], (7, 7));
        for (a, (k1, k2)) in alpha.iter().zip(modes) {
            assert!((a - naive_dft(&x, 8, 8, k1, k2)).norm() < 1e-12);
        }
    }

    #[test]
    fn rectangular_grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = SpectralBasis::new(6, 10, 3).unwrap();
        let x = random_vec(60, &mut rng);
        let alpha = basis.truncate(&x).unwrap();
        for (a, (k1, k2)) in alpha.iter().zip(basis.mode_indices()) {
            assert!((a - naive_dft(&x, 6, 10, k1, k2)).norm() < 1e-11);
        }
    }

    #[test]
    fn dc_only_expands_to_constant() {
        let basis = SpectralBasis::new(8, 8, 2).unwrap();
        let mut alpha = vec![ZERO; 16];
        alpha[0] = Complex64::new(64.0, 32.0);
        let j = basis.expand(&alpha).unwrap();
        assert!(j.iter().all(|v| (v - Complex64::new(1.0, 0.5)).norm() < 1e-14));
    }

    #[test]
    fn residual_of_projection_has_no_kept_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = SpectralBasis::new(16, 16, 3).unwrap();
        let x = random_vec(256, &mut rng);
        let low = basis.expand(&basis.truncate(&x).unwrap()).unwrap();
        let resid: Vec<Complex64> = x.iter().zip(&low).map(|(a, b)| a - b).collect();
        let scale = x.iter().map(|v| v.norm()).sum::<f64>();
        for (k1, k2) in basis.mode_indices() {
            assert!(naive_dft(&resid, 16, 16, k1, k2).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis = SpectralBasis::new(12, 12, 3).unwrap();
        let alpha = random_vec(36, &mut rng);
        let x = random_vec(144, &mut rng);
        let lhs = dot_conj(&basis.expand(&alpha).unwrap(), &x);
        let rhs = dot_conj(&alpha, &basis.truncate(&x).unwrap()) / 144.0;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn length_errors() {
        let basis = SpectralBasis::new(8, 8, 2).unwrap();
        assert!(matches!(basis.truncate(&[ZERO; 10]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(basis.expand(&[ZERO; 10]), Err(Error::ShapeMismatch(_))));
        assert!(SpectralBasis::new(8, 8, 5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cvec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
                .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
        }

        proptest! {
            #[test]
            fn round_trip_is_identity(alpha in cvec(36)) {
                let basis = SpectralBasis::new(16, 16, 3).unwrap();
                let back = basis.truncate(&basis.expand(&alpha).unwrap()).unwrap();
                for (a, b) in alpha.iter().zip(&back) {
                    prop_assert!((a - b).norm() < 1e-12);
                }
            }

            #[test]
            fn maps_are_linear(x in cvec(64), y in cvec(64), s in -2.0f64..2.0) {
                let basis = SpectralBasis::new(8, 8, 2).unwrap();
                let combo: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a * s + b).collect();
                let tc = basis.truncate(&combo).unwrap();
                let (tx, ty) = (basis.truncate(&x).unwrap(), basis.truncate(&y).unwrap());
                for ((c, a), b) in tc.iter().zip(&tx).zip(&ty) {
                    prop_assert!((c - (a * s + b)).norm() < 1e-12);
                }
                let ec = basis.expand(&tc).unwrap();
                let (ex, ey) = (basis.expand(&tx).unwrap(), basis.expand(&ty).unwrap());
                for ((c, a), b) in ec.iter().zip(&ex).zip(&ey) {
                    prop_assert!((c - (a * s + b)).norm() < 1e-12);
                }
            }

            #[test]
            fn projection_is_idempotent(x in cvec(64)) {
                let basis = SpectralBasis::new(8, 8, 2).unwrap();
                let p = |v: &[Complex64]| basis.expand(&basis.truncate(v).unwrap()).unwrap();
                let once = p(&x);
                let twice = p(&once);
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }
}
