//! Composite physics + regularisation loss over the spectral coefficients,
//! with its exact gradient.
//!
//! Gradients of a real loss `L` with respect to a complex variable `z` are
//! stored as `∂L/∂Re z + i ∂L/∂Im z`, so that `dL = Re(conj(g) dz)`.
//!
//! Forward chain per evaluation:
//!
//! ```text
//! J_i = expand(α_i)          E_i = E_inc,i + G_D J_i
//! χ̂  = Σ J_i conj(E_i) / (Σ |E_i|² + eps_reg)
//! R̂  = βχ̂ / (βχ̂ + 1)        (or a frozen R̂)
//! s_i = R̂ (E_i + β J_i) − β J_i        state residual
//! d_i = G_S J_i − E_sca,i              data residual
//! ```

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cie::{normal_equations, ModifiedContrast};
use crate::config::ImagingConfig;
use crate::error::{Error, Result};
use crate::forward::{FieldSet, GreensOperators, ScatteredData};
use crate::grid::ComplexGrid;
use crate::spectral::{SpectralBasis, SpectralCoefficients};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Names of the individual loss terms, in reporting order.
pub const TERM_NAMES: [&str; 5] = ["state", "data", "bound", "tv", "bridge"];

/// Multipliers of each term in the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub state: f64,
    pub data: f64,
    pub bound: f64,
    pub tv: f64,
    pub bridge: f64,
}

impl LossWeights {
    pub fn from_config(config: &ImagingConfig) -> Self {
        Self {
            state: 1.0,
            data: 1.0,
            bound: config.lambda1,
            tv: config.lambda2,
            bridge: config.lambda3,
        }
    }

    /// These weights with every term except `term` set to zero.
    pub fn isolate(&self, term: &str) -> Self {
        let keep = |name: &str, w: f64| if name == term { w } else { 0.0 };
        Self {
            state: keep("state", self.state),
            data: keep("data", self.data),
            bound: keep("bound", self.bound),
            tv: keep("tv", self.tv),
            bridge: keep("bridge", self.bridge),
        }
    }

    /// State + data only.
    pub fn physics_only() -> Self {
        Self {
            state: 1.0,
            data: 1.0,
            bound: 0.0,
            tv: 0.0,
            bridge: 0.0,
        }
    }
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub state: f64,
    pub data: f64,
    pub bound: f64,
    pub tv: f64,
    pub bridge: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    fn new(state: f64, data: f64, bound: f64, tv: f64, bridge: f64, w: LossWeights) -> Self {
        let total = w.state * state + w.data * data + w.bound * bound + w.tv * tv + w.bridge * bridge;
        Self {
            total,
            state,
            data,
            bound,
            tv,
            bridge,
            weights: w,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("total", self.total),
            ("state", self.state),
            ("data", self.data),
            ("bound", self.bound),
            ("tv", self.tv),
            ("bridge", self.bridge),
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn nonfinite_term(&self) -> Option<&'static str> {
        self.terms()
            .into_iter()
            .skip(1)
            .chain(std::iter::once(("total", self.total)))
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Everything the loss needs besides the coefficients.
#[derive(Debug, Clone)]
pub struct LossContext<'a> {
    pub ops: &'a GreensOperators,
    pub basis: &'a SpectralBasis,
    pub e_inc: &'a FieldSet,
    pub data: &'a ScatteredData,
    pub beta: Complex64,
    pub weights: LossWeights,
    pub tau_b: f64,
    pub eps_tv: f64,
    pub eps_reg: f64,
    /// Use this modified contrast instead of deriving it from the coefficients.
    pub frozen_r: Option<&'a ModifiedContrast>,
    inc_norm: f64,
    sca_norm: f64,
}

impl<'a> LossContext<'a> {
    pub fn new(
        config: &ImagingConfig,
        ops: &'a GreensOperators,
        basis: &'a SpectralBasis,
        e_inc: &'a FieldSet,
        data: &'a ScatteredData,
        eps_reg: f64,
    ) -> Result<Self> {
        if data.n_tx != e_inc.n_views() || data.n_rx != ops.n_rx() {
            return Err(Error::ShapeMismatch(format!(
                "data is {}x{}, operators expect {}x{}",
                data.n_tx,
                data.n_rx,
                e_inc.n_views(),
                ops.n_rx()
            )));
        }
        if basis.grid_len() != ops.len() {
            return Err(Error::ShapeMismatch("basis and operator grids differ".into()));
        }
        let inc_norm = e_inc.norm_sqr();
        if inc_norm == 0.0 {
            return Err(Error::ZeroIncident);
        }
        let sca_norm = data.norm_sqr();
        if sca_norm == 0.0 {
            return Err(Error::ZeroData);
        }
        Ok(Self {
            ops,
            basis,
            e_inc,
            data,
            beta: Complex64::new(config.beta, 0.0),
            weights: LossWeights::from_config(config),
            tau_b: config.tau_b,
            eps_tv: config.options.eps_tv,
            eps_reg,
            frozen_r: None,
            inc_norm,
            sca_norm,
        })
    }

    pub fn with_weights(mut self, weights: LossWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_frozen_r(mut self, r: Option<&'a ModifiedContrast>) -> Self {
        self.frozen_r = r;
        self
    }

    /// `‖E_inc‖²` over all views.
    pub fn incident_norm(&self) -> f64 {
        self.inc_norm
    }

    /// `‖E_sca‖²` over measured entries.
    pub fn data_norm(&self) -> f64 {
        self.sca_norm
    }

    fn measured(&self, view: usize, rx: usize) -> bool {
        self.data.is_measured(view, rx)
    }
}

/// One loss evaluation with the intermediate images.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub chi_hat: ComplexGrid,
    pub r_hat: ModifiedContrast,
    /// Pixels with a near-empty normal equation.
    pub degenerate: Vec<usize>,
    /// Gradient with respect to each view's coefficients, when requested.
    pub gradient: Option<SpectralCoefficients>,
}

struct ViewState {
    j: Vec<Complex64>,
    e: Vec<Complex64>,
    d: Vec<Complex64>,
}

/// Evaluates the weighted loss at `alpha`, optionally with its gradient.
pub fn evaluate(alpha: &SpectralCoefficients, ctx: &LossContext, with_gradient: bool) -> Result<Evaluation> {
    let ops = ctx.ops;
    let m = ops.len();
    if alpha.n_views() != ctx.e_inc.n_views() || alpha.m0() != ctx.basis.m0() {
        return Err(Error::ShapeMismatch(format!(
            "{} views of {} coefficients, expected {} of {}",
            alpha.n_views(),
            alpha.m0(),
            ctx.e_inc.n_views(),
            ctx.basis.m0()
        )));
    }
    let views: Vec<ViewState> = alpha
        .views
        .par_iter()
        .zip(&ctx.e_inc.views)
        .enumerate()
        .map(|(i, (a, inc))| {
            let j = ctx.basis.expand(a)?;
            let gj = ops.apply_gd(&j);
            let e: Vec<Complex64> = inc.iter().zip(&gj).map(|(x, y)| x + y).collect();
            let mut d = ops.apply_gs(&j);
            for (r, (v, meas)) in d.iter_mut().zip(ctx.data.row(i)).enumerate() {
                *v = if ctx.measured(i, r) { *v - meas } else { ZERO };
            }
            Ok(ViewState { j, e, d })
        })
        .collect::<Result<_>>()?;

    let (num, den) = normal_equations(views.iter().map(|v| (&v.j[..], &v.e[..])), m);
    let dt: Vec<f64> = den.iter().map(|d| d + ctx.eps_reg).collect();
    let chi: Vec<Complex64> = num.iter().zip(&dt).map(|(n, d)| n / d).collect();
    let degenerate: Vec<usize> = (0..m).filter(|&k| den[k] <= 10.0 * ctx.eps_reg).collect();

    let beta = ctx.beta;
    let r: Vec<Complex64> = match ctx.frozen_r {
        Some(fr) => {
            if fr.values.len() != m {
                return Err(Error::ShapeMismatch("frozen R size".into()));
            }
            fr.values.values().to_vec()
        }
        None => chi
            .iter()
            .enumerate()
            .map(|(pixel, c)| {
                let den = beta * c + 1.0;
                if den.norm() < 1e-14 {
                    Err(Error::Pole { pixel })
                } else {
                    Ok(beta * c / den)
                }
            })
            .collect::<Result<_>>()?,
    };

    let state_res: Vec<Vec<Complex64>> = views
        .par_iter()
        .map(|v| (0..m).map(|k| r[k] * (v.e[k] + beta * v.j[k]) - beta * v.j[k]).collect())
        .collect();
    let state = state_res.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / ctx.inc_norm;
    let data = views.iter().flat_map(|v| &v.d).map(|v| v.norm_sqr()).sum::<f64>() / ctx.sca_norm;

    let (m1, m2) = (ops.m1, ops.m2);
    let w = ctx.weights;
    let bound = loss_bound(&chi);
    let tv = loss_tv(&chi, m1, m2, ctx.eps_tv);
    let bridge = loss_bridge(&chi, m1, m2, ctx.tau_b);
    let breakdown = LossBreakdown::new(state, data, bound, tv, bridge, w);
    if let Some(term) = breakdown.nonfinite_term() {
        return Err(Error::NonFinite {
            term: term.into(),
            iteration: 0,
        });
    }

    let chi_grid = ComplexGrid::new(m1, m2, ops.cell_size, chi.clone())?;
    let r_hat = ModifiedContrast {
        values: ComplexGrid::new(m1, m2, ops.cell_size, r.clone())?,
        beta,
    };
    if !with_gradient {
        return Ok(Evaluation {
            breakdown,
            chi_hat: chi_grid,
            r_hat,
            degenerate,
            gradient: None,
        });
    }

    // reverse sweep
    let cs = 2.0 * w.state / ctx.inc_norm;
    let cd = 2.0 * w.data / ctx.sca_norm;
    let mut g_chi = vec![ZERO; m];
    if w.bound != 0.0 {
        accumulate(&mut g_chi, &grad_bound(&chi), w.bound);
    }
    if w.tv != 0.0 {
        accumulate(&mut g_chi, &grad_tv(&chi, m1, m2, ctx.eps_tv), w.tv);
    }
    if w.bridge != 0.0 {
        accumulate(&mut g_chi, &grad_bridge(&chi, m1, m2, ctx.tau_b), w.bridge);
    }
    if ctx.frozen_r.is_none() && cs != 0.0 {
        // g_R = Σ_i conj(E_i + βJ_i) g_s,i, then through R(χ)
        let mut g_r = vec![ZERO; m];
        for (v, s) in views.iter().zip(&state_res) {
            for k in 0..m {
                g_r[k] += (v.e[k] + beta * v.j[k]).conj() * (s[k] * cs);
            }
        }
        for k in 0..m {
            let den = beta * chi[k] + 1.0;
            g_chi[k] += (beta / (den * den)).conj() * g_r[k];
        }
    }
    let g_num: Vec<Complex64> = g_chi.iter().zip(&dt).map(|(g, d)| g / d).collect();
    let g_den: Vec<f64> = (0..m).map(|k| -(g_chi[k].conj() * num[k]).re / (dt[k] * dt[k])).collect();

    let inv_m = 1.0 / m as f64;
    let grads: Vec<Vec<Complex64>> = views
        .par_iter()
        .zip(&state_res)
        .map(|(v, s)| {
            let mut g_e = vec![ZERO; m];
            let mut g_j = vec![ZERO; m];
            for k in 0..m {
                let gs = s[k] * cs;
                g_e[k] = r[k].conj() * gs + v.j[k] * g_num[k].conj() + 2.0 * g_den[k] * v.e[k];
                g_j[k] = (beta * (r[k] - 1.0)).conj() * gs + v.e[k] * g_num[k];
            }
            let back_e = ops.apply_gd_adjoint(&g_e);
            let gd: Vec<Complex64> = v.d.iter().map(|x| x * cd).collect();
            let back_d = ops.apply_gs_adjoint(&gd);
            for k in 0..m {
                g_j[k] += back_e[k] + back_d[k];
            }
            let mut g_a = ctx.basis.truncate(&g_j)?;
            g_a.iter_mut().for_each(|x| *x *= inv_m);
            Ok(g_a)
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        breakdown,
        chi_hat: chi_grid,
        r_hat,
        degenerate,
        gradient: Some(SpectralCoefficients {
            m_f: alpha.m_f,
            views: grads,
        }),
    })
}

fn accumulate(acc: &mut [Complex64], g: &[Complex64], w: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b * w;
    }
}

/// `Σ_i ‖G_S J_i − E_sca,i‖² / ‖E_sca‖²`.
pub fn loss_data(
    alpha: &SpectralCoefficients,
    data: &ScatteredData,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<f64> {
    let norm = data.norm_sqr();
    if norm == 0.0 {
        return Err(Error::ZeroData);
    }
    let mut acc = 0.0;
    for (i, a) in alpha.views.iter().enumerate() {
        let y = ops.apply_gs(&basis.expand(a)?);
        for (r, (v, meas)) in y.iter().zip(data.row(i)).enumerate() {
            if data.is_measured(i, r) {
                acc += (v - meas).norm_sqr();
            }
        }
    }
    Ok(acc / norm)
}

/// Gradient of [`loss_data`] by its adjoint formula
/// `(1/M) truncate(G_Sᴴ 2 d / ‖E_sca‖²)`.
pub fn loss_data_gradient(
    alpha: &SpectralCoefficients,
    data: &ScatteredData,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<SpectralCoefficients> {
    let norm = data.norm_sqr();
    if norm == 0.0 {
        return Err(Error::ZeroData);
    }
    let inv_m = 1.0 / ops.len() as f64;
    let views = alpha
        .views
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let y = ops.apply_gs(&basis.expand(a)?);
            let d: Vec<Complex64> = y
                .iter()
                .zip(data.row(i))
                .enumerate()
                .map(|(r, (v, meas))| if data.is_measured(i, r) { (v - meas) * (2.0 / norm) } else { ZERO })
                .collect();
            let mut g = basis.truncate(&ops.apply_gs_adjoint(&d))?;
            g.iter_mut().for_each(|x| *x *= inv_m);
            Ok(g)
        })
        .collect::<Result<_>>()?;
    Ok(SpectralCoefficients { m_f: alpha.m_f, views })
}

/// Squared CIE state residual over `‖E_inc‖²` for a given `R̂`.
pub fn loss_state(
    alpha: &SpectralCoefficients,
    r_hat: &ModifiedContrast,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<f64> {
    let norm = e_inc.norm_sqr();
    if norm == 0.0 {
        return Err(Error::ZeroIncident);
    }
    let res = crate::cie::cie_state_residual(alpha, r_hat, e_inc, ops, basis)?;
    Ok(res.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / norm)
}

/// `‖max(0, −Re χ)‖²`.
pub fn loss_bound(chi: &[Complex64]) -> f64 {
    chi.iter().map(|c| (-c.re).max(0.0).powi(2)).sum()
}

pub fn grad_bound(chi: &[Complex64]) -> Vec<Complex64> {
    chi.iter().map(|c| Complex64::new(-2.0 * (-c.re).max(0.0), 0.0)).collect()
}

/// Forward differences with zero difference across the last row/column.
fn differences<T: Copy + std::ops::Sub<Output = T> + Default>(v: &[T], m1: usize, m2: usize, r: usize, c: usize) -> (T, T) {
    let k = r * m2 + c;
    let dx = if c + 1 < m2 { v[k + 1] - v[k] } else { T::default() };
    let dy = if r + 1 < m1 { v[k + m2] - v[k] } else { T::default() };
    (dx, dy)
}

/// Smoothed isotropic TV, `Σ sqrt(|Δx|² + |Δy|² + ε)`.
pub fn loss_tv(chi: &[Complex64], m1: usize, m2: usize, eps_tv: f64) -> f64 {
    let mut acc = 0.0;
    for r in 0..m1 {
        for c in 0..m2 {
            let (dx, dy) = differences(chi, m1, m2, r, c);
            acc += (dx.norm_sqr() + dy.norm_sqr() + eps_tv).sqrt();
        }
    }
    acc
}

pub fn grad_tv(chi: &[Complex64], m1: usize, m2: usize, eps_tv: f64) -> Vec<Complex64> {
    let mut g = vec![ZERO; chi.len()];
    for r in 0..m1 {
        for c in 0..m2 {
            let k = r * m2 + c;
            let (dx, dy) = differences(chi, m1, m2, r, c);
            let t = (dx.norm_sqr() + dy.norm_sqr() + eps_tv).sqrt();
            if c + 1 < m2 {
                let gx = dx / t;
                g[k + 1] += gx;
                g[k] -= gx;
            }
            if r + 1 < m1 {
                let gy = dy / t;
                g[k + m2] += gy;
                g[k] -= gy;
            }
        }
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ σ((|χ| − τ)/τ) exp(−‖∇|χ|‖²)` with the same forward-difference stencil
/// as [`loss_tv`] applied to `|χ|`.
pub fn loss_bridge(chi: &[Complex64], m1: usize, m2: usize, tau_b: f64) -> f64 {
    let a: Vec<f64> = chi.iter().map(|c| c.norm()).collect();
    let mut acc = 0.0;
    for r in 0..m1 {
        for c in 0..m2 {
            let k = r * m2 + c;
            let (dx, dy) = differences(&a, m1, m2, r, c);
            acc += sigmoid((a[k] - tau_b) / tau_b) * (-(dx * dx + dy * dy)).exp();
        }
    }
    acc
}

pub fn grad_bridge(chi: &[Complex64], m1: usize, m2: usize, tau_b: f64) -> Vec<Complex64> {
    let a: Vec<f64> = chi.iter().map(|c| c.norm()).collect();
    let mut ga = vec![0.0; a.len()];
    for r in 0..m1 {
        for c in 0..m2 {
            let k = r * m2 + c;
            let (dx, dy) = differences(&a, m1, m2, r, c);
            let s = sigmoid((a[k] - tau_b) / tau_b);
            let e = (-(dx * dx + dy * dy)).exp();
            ga[k] += s * (1.0 - s) / tau_b * e;
            let gq = -s * e;
            if c + 1 < m2 {
                ga[k + 1] += gq * 2.0 * dx;
                ga[k] -= gq * 2.0 * dx;
            }
            if r + 1 < m1 {
                ga[k + m2] += gq * 2.0 * dy;
                ga[k] -= gq * 2.0 * dy;
            }
        }
    }
    chi.iter()
        .zip(&ga)
        .map(|(c, g)| {
            let n = c.norm();
            if n > 0.0 {
                c * (g / n)
            } else {
                ZERO
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cie::chi_to_r;
    use crate::testutil::{consistent_instance, random_alpha, small_problem, SmallProblem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(p: &SmallProblem) -> LossContext<'_> {
        LossContext::new(&p.config, &p.ops, &p.basis, &p.e_inc, &p.data, 1e-10 * p.e_inc.norm_sqr() / 256.0).unwrap()
    }

    fn total(alpha: &SpectralCoefficients, c: &LossContext) -> f64 {
        evaluate(alpha, c, false).unwrap().breakdown.total
    }

    /// Central differences on `count` random real/imaginary coordinates.
    fn check_gradient(c: &LossContext, alpha: &SpectralCoefficients, seed: u64, count: usize) {
        let grad = evaluate(alpha, c, true).unwrap().gradient.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..count {
            let v = rng.random_range(0..alpha.n_views());
            let k = rng.random_range(0..alpha.m0());
            let imag = rng.random_bool(0.5);
            let step = if imag { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
            let mut plus = alpha.clone();
            plus.views[v][k] += step;
            let mut minus = alpha.clone();
            minus.views[v][k] -= step;
            let fd = (total(&plus, c) - total(&minus, c)) / (2.0 * h);
            let an = if imag { grad.views[v][k].im } else { grad.views[v][k].re };
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel <= 1e-5, "view {v} mode {k} imag {imag}: fd {fd:e} analytic {an:e} rel {rel:e}");
        }
    }

    fn only(state: f64, data: f64, bound: f64, tv: f64, bridge: f64) -> LossWeights {
        LossWeights {
            state,
            data,
            bound,
            tv,
            bridge,
        }
    }

    #[test]
    fn gradient_of_each_term_matches_differences() {
        let p = small_problem();
        let alpha = random_alpha(&p, 1);
        for (i, w) in [
            only(1.0, 0.0, 0.0, 0.0, 0.0),
            only(0.0, 1.0, 0.0, 0.0, 0.0),
            only(0.0, 0.0, 1.0, 0.0, 0.0),
            only(0.0, 0.0, 0.0, 1.0, 0.0),
            only(0.0, 0.0, 0.0, 0.0, 1.0),
        ]
        .into_iter()
        .enumerate()
        {
            check_gradient(&ctx(&p).with_weights(w), &alpha, 10 + i as u64, 12);
        }
    }

    #[test]
    fn gradient_of_composite_matches_differences() {
        let p = small_problem();
        let alpha = random_alpha(&p, 2);
        let c = ctx(&p);
        assert!(evaluate(&alpha, &c, false).unwrap().breakdown.bound > 0.0);
        check_gradient(&c, &alpha, 20, 20);
        let heavy = c.clone().with_weights(only(1.0, 1.0, 1e-1, 1e-2, 1e-2));
        check_gradient(&heavy, &alpha, 21, 20);
    }

    #[test]
    fn gradient_with_frozen_r_matches_differences() {
        let p = small_problem();
        let alpha = random_alpha(&p, 3);
        let r = chi_to_r(&p.chi_true, Complex64::new(6.0, 0.0)).unwrap();
        let c = ctx(&p).with_frozen_r(Some(&r));
        check_gradient(&c, &alpha, 30, 20);
    }

    #[test]
    fn data_gradient_adjoint_formula_agrees() {
        let p = small_problem();
        let alpha = random_alpha(&p, 4);
        let c = ctx(&p).with_weights(only(0.0, 1.0, 0.0, 0.0, 0.0));
        let from_eval = evaluate(&alpha, &c, true).unwrap().gradient.unwrap();
        let direct = loss_data_gradient(&alpha, &p.data, &p.ops, &p.basis).unwrap();
        for (a, b) in from_eval.views.iter().flatten().zip(direct.views.iter().flatten()) {
            assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn data_term_values() {
        let p = small_problem();
        let zero = SpectralCoefficients::zeros(3, 8);
        assert_eq!(loss_data(&zero, &p.data, &p.ops, &p.basis).unwrap(), 1.0);
        // naive double loop with explicit inverse DFT and G_S sums
        let alpha = random_alpha(&p, 5);
        let modes = p.basis.mode_indices();
        let mut acc = 0.0;
        for i in 0..8 {
            let mut j = vec![ZERO; 256];
            for (k, x) in j.iter_mut().enumerate() {
                let (r, c) = (k / 16, k % 16);
                for (a, (k1, k2)) in alpha.views[i].iter().zip(&modes) {
                    let ph = 2.0 * std::f64::consts::PI * ((k1 * r) as f64 + (k2 * c) as f64) / 16.0;
                    *x += a * Complex64::from_polar(1.0 / 256.0, ph);
                }
            }
            for rx in 0..8 {
                let mut y = ZERO;
                for (k, jk) in j.iter().enumerate() {
                    y += p.ops.gs[rx * 256 + k] * jk;
                }
                acc += (y - p.data.row(i)[rx]).norm_sqr();
            }
        }
        let naive = acc / p.data.norm_sqr();
        let fast = loss_data(&alpha, &p.data, &p.ops, &p.basis).unwrap();
        assert!((naive - fast).abs() <= 1e-12 * naive);
        let mut empty = p.data.clone();
        empty.matrix.iter_mut().for_each(|v| *v = ZERO);
        assert!(matches!(loss_data(&alpha, &empty, &p.ops, &p.basis), Err(Error::ZeroData)));
    }

    #[test]
    fn state_term_values() {
        let inst = consistent_instance(40);
        let r = chi_to_r(&inst.chi, Complex64::new(6.0, 0.0)).unwrap();
        let v = loss_state(&inst.alpha, &r, &inst.e_inc, &inst.ops, &inst.basis).unwrap();
        assert!(v < 1e-12);
        // R̂ = 0 and α = 0
        let zero_r = crate::cie::ModifiedContrast {
            values: ComplexGrid::zeros(16, 16, inst.ops.cell_size),
            beta: Complex64::new(6.0, 0.0),
        };
        let zero = SpectralCoefficients::zeros(3, 4);
        assert_eq!(loss_state(&zero, &zero_r, &inst.e_inc, &inst.ops, &inst.basis).unwrap(), 0.0);
        // homogeneous in (E_inc, α) with R̂ fixed
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut alpha = inst.alpha.clone();
        alpha.views.iter_mut().flatten().for_each(|x| *x += Complex64::new(rng.random_range(-0.5..0.5), 0.1));
        let base = loss_state(&alpha, &r, &inst.e_inc, &inst.ops, &inst.basis).unwrap();
        let mut a2 = alpha.clone();
        a2.views.iter_mut().flatten().for_each(|x| *x *= 2.0);
        let inc2 = FieldSet::new(
            inst.e_inc.role,
            inst.e_inc.views.iter().map(|v| v.iter().map(|x| x * 2.0).collect()).collect(),
        );
        let doubled = loss_state(&a2, &r, &inc2, &inst.ops, &inst.basis).unwrap();
        assert!((base - doubled).abs() <= 1e-12 * base);
        let zero_inc = FieldSet::new(inst.e_inc.role, vec![vec![ZERO; 256]; 4]);
        assert!(matches!(loss_state(&alpha, &r, &zero_inc, &inst.ops, &inst.basis), Err(Error::ZeroIncident)));
    }

    #[test]
    fn bound_term() {
        let c = |re: f64| Complex64::new(re, 0.3);
        assert_eq!(loss_bound(&[c(0.0), c(1.0), c(3.0)]), 0.0);
        assert_eq!(loss_bound(&[c(1.0), c(-0.5)]), 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v: Vec<Complex64> = (0..100).map(|_| c(rng.random_range(-2.0..2.0))).collect();
        let mut naive = 0.0;
        for x in &v {
            if x.re < 0.0 {
                naive += x.re * x.re;
            }
        }
        assert!((loss_bound(&v) - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn tv_term() {
        let eps = 1e-12;
        let flat = vec![Complex64::new(2.0, -1.0); 12];
        assert!((loss_tv(&flat, 3, 4, eps) - 12.0 * eps.sqrt()).abs() < 1e-18);
        // [[0, 1], [0, 0]]
        let step = vec![ZERO, Complex64::new(1.0, 0.0), ZERO, ZERO];
        let expect = 2.0 * (1.0 + eps).sqrt() + 2.0 * eps.sqrt();
        assert!((loss_tv(&step, 2, 2, eps) - expect).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let v: Vec<Complex64> = (0..30).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let shifted: Vec<Complex64> = v.iter().map(|x| x + Complex64::new(3.0, -7.0)).collect();
        assert!((loss_tv(&v, 5, 6, eps) - loss_tv(&shifted, 5, 6, eps)).abs() < 1e-12);
    }

    #[test]
    fn bridge_term() {
        let m = 16.0;
        let zero = vec![ZERO; 16];
        assert!((loss_bridge(&zero, 4, 4, 0.5) - m * 0.268_941_421_369_995_1).abs() < 1e-12);
        let ones = vec![Complex64::new(0.6, 0.8); 16];
        assert!((loss_bridge(&ones, 4, 4, 0.5) - m * 0.731_058_578_630_004_9).abs() < 1e-12);
        let checker: Vec<Complex64> = (0..16)
            .map(|k| Complex64::new(if (k / 4 + k % 4) % 2 == 0 { 0.0 } else { 3.0 }, 0.0))
            .collect();
        let flat_hi = vec![Complex64::new(3.0, 0.0); 16];
        assert!(loss_bridge(&checker, 4, 4, 0.5) < loss_bridge(&flat_hi, 4, 4, 0.5));
    }

    #[test]
    fn breakdown_identity_and_zero_weights() {
        let p = small_problem();
        let alpha = random_alpha(&p, 6);
        let b = evaluate(&alpha, &ctx(&p), false).unwrap().breakdown;
        let w = b.weights;
        let sum = b.state + b.data + w.bound * b.bound + w.tv * b.tv + w.bridge * b.bridge;
        assert!((b.total - sum).abs() <= 1e-12 * b.total);
        assert!(b.terms().iter().all(|(_, v)| *v >= 0.0));
        let plain = evaluate(&alpha, &ctx(&p).with_weights(LossWeights::physics_only()), false).unwrap().breakdown;
        assert_eq!(plain.total, plain.state + plain.data);
    }

    #[test]
    fn evaluation_is_repeatable() {
        let p = small_problem();
        let alpha = random_alpha(&p, 7);
        let c = ctx(&p);
        let a = evaluate(&alpha, &c, true).unwrap();
        let b = evaluate(&alpha, &c, true).unwrap();
        assert_eq!(a.breakdown, b.breakdown);
        assert_eq!(a.gradient, b.gradient);
    }
}
