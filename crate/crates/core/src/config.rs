//! Experiment configuration.
//!
//! Every physical, discretisation and solver constant for one experiment lives
//! in [`ImagingConfig`]. It round-trips through JSON; missing keys take the
//! defaults below, so a config file only needs to name what it changes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Contrast-compensation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcoParams {
    pub tau: f64,
    pub eta_max: f64,
    pub delta: f64,
    /// Guided-filter window radius in pixels.
    pub gf_radius: usize,
    pub gf_eps: f64,
}

impl Default for CcoParams {
    fn default() -> Self {
        Self {
            tau: 3.0,
            eta_max: 0.1,
            delta: 0.5,
            gf_radius: 2,
            gf_eps: 1e-3,
        }
    }
}

/// Switches that do not change the physics but select solver variants and
/// ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Keep the modified contrast fixed at the BP estimate during optimisation.
    pub freeze_r: bool,
    /// Feed all views through one network instead of sharing weights per view.
    pub joint_views: bool,
    /// Apply the contrast-compensated operator after the loop.
    pub apply_cco: bool,
    /// Smoothing constant inside the TV square root.
    pub eps_tv: f64,
    /// Relative residual target of the forward Krylov solve.
    pub forward_tol: f64,
    pub forward_max_iter: usize,
    /// Simulate on a grid refined by this factor and average down (1 = off).
    pub forward_refine: usize,
    /// Sub-samples per cell edge when building the simulated object
    /// (1 = cell-centre membership).
    pub forward_coverage: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            freeze_r: false,
            joint_views: false,
            apply_cco: true,
            eps_tv: 1e-12,
            forward_tol: 1e-8,
            forward_max_iter: 2000,
            forward_refine: 1,
            forward_coverage: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagingConfig {
    /// Hz.
    pub frequency: f64,
    /// Side length of the square imaging domain, m.
    pub doi_side: f64,
    pub m1: usize,
    pub m2: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Radius of the antenna circle, m.
    pub ring_radius: f64,
    pub beta: f64,
    /// Edge length of each retained corner block of the DFT plane.
    pub m_f: usize,
    pub k_iters: usize,
    pub learn_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub cco: CcoParams,
    pub tau_b: f64,
    pub rng_seed: u64,
    pub options: SolverOptions,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        let frequency = 400e6;
        Self {
            frequency,
            doi_side: 1.5,
            m1: 64,
            m2: 64,
            n_tx: 36,
            n_rx: 36,
            ring_radius: 20.0 * C0 / frequency,
            beta: 6.0,
            m_f: 7,
            k_iters: 100,
            learn_rate: 1e-2,
            lambda1: 1e-3,
            lambda2: 1e-5,
            lambda3: 1e-5,
            cco: CcoParams::default(),
            tau_b: 0.5,
            rng_seed: 0,
            options: SolverOptions::default(),
        }
    }
}

impl ImagingConfig {
    pub fn wavelength(&self) -> f64 {
        C0 / self.frequency
    }

    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    pub fn cell_size(&self) -> f64 {
        self.doi_side / self.m1 as f64
    }

    /// Number of retained Fourier modes per view, `4 m_f²`.
    pub fn m0(&self) -> usize {
        4 * self.m_f * self.m_f
    }

    /// Sets the frequency and moves the antenna ring to twenty wavelengths.
    pub fn with_frequency(mut self, frequency: f64) -> Self {
        self.frequency = frequency;
        self.ring_radius = 20.0 * C0 / frequency;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return bad(format!("frequency must be > 0, got {}", self.frequency));
        }
        if !(self.doi_side > 0.0 && self.doi_side.is_finite()) {
            return bad(format!("doi_side must be > 0, got {}", self.doi_side));
        }
        if self.m1 == 0 || self.m2 == 0 {
            return bad("grid counts must be positive".into());
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return bad("antenna counts must be positive".into());
        }
        if self.m_f == 0 || 2 * self.m_f > self.m1.min(self.m2) {
            return bad(format!(
                "m_f = {} makes the corner blocks overlap on a {}x{} grid",
                self.m_f, self.m1, self.m2
            ));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        let half_diag = self.doi_side * std::f64::consts::SQRT_2 / 2.0;
        if !(self.ring_radius > half_diag) {
            return bad(format!(
                "ring_radius {} must exceed the DOI half-diagonal {half_diag}",
                self.ring_radius
            ));
        }
        if !(self.learn_rate > 0.0) || !(self.tau_b > 0.0) {
            return bad("learn_rate and tau_b must be > 0".into());
        }
        if self.cco.gf_radius == 0 || !(self.cco.delta > 0.0) {
            return bad("cco.gf_radius must be >= 1 and cco.delta > 0".into());
        }
        if self.options.forward_refine == 0 {
            return bad("forward_refine must be >= 1".into());
        }
        Ok(())
    }

    /// Stable hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex_digest(json.as_bytes())
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
