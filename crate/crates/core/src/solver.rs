//! End-to-end reconstruction: back-propagation start, one exact CSI step in
//! coefficient space, network-corrected optimisation, contrast recovery and
//! contrast compensation.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::cie::{chi_to_r, contrast_from_fields, default_eps_reg, ModifiedContrast};
use crate::config::{CcoParams, ImagingConfig};
use crate::error::{Error, Result};
use crate::forward::{build_greens, incident_fields, FieldRole, FieldSet, GreensOperators, ScatteredData};
use crate::geometry::{build_grid, AntennaArray};
use crate::grid::ComplexGrid;
use crate::linalg::{dot_conj, norm_sqr};
use crate::loss::{evaluate, LossBreakdown, LossContext, LossWeights};
use crate::net::{adam_step, corrected_alpha, grad_loss, init_network, AdamConfig, AdamState, NetInput, ViewLayout};
use crate::spectral::{SpectralBasis, SpectralCoefficients};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Measured row `i` with absent entries zeroed.
fn masked_row(data: &ScatteredData, i: usize) -> Vec<Complex64> {
    data.row(i)
        .iter()
        .enumerate()
        .map(|(r, v)| if data.is_measured(i, r) { *v } else { ZERO })
        .collect()
}

fn mask_row(data: &ScatteredData, i: usize, y: &mut [Complex64]) {
    for (r, v) in y.iter_mut().enumerate() {
        if !data.is_measured(i, r) {
            *v = ZERO;
        }
    }
}

/// Back-propagation start.
#[derive(Debug, Clone)]
pub struct BpStart {
    pub chi0: ComplexGrid,
    /// BP currents, one per view.
    pub currents: Vec<Vec<Complex64>>,
    pub r0: ModifiedContrast,
    /// Per-view scalar `γ_i`.
    pub gamma: Vec<Complex64>,
    /// Total fields implied by the BP currents.
    pub e_tot: FieldSet,
}

/// `J_i = γ_i G_Sᴴ E_sca,i` with `γ_i` minimising `‖γ G_S G_Sᴴ E_sca,i − E_sca,i‖`,
/// then the per-pixel least-squares contrast over all views.
pub fn bp_initialize(
    data: &ScatteredData,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    beta: Complex64,
) -> Result<BpStart> {
    if data.n_tx != e_inc.n_views() || data.n_rx != ops.n_rx() {
        return Err(Error::ShapeMismatch("data does not match operators".into()));
    }
    let per_view: Vec<(Complex64, Vec<Complex64>, Vec<Complex64>)> = (0..data.n_tx)
        .into_par_iter()
        .map(|i| {
            let y = masked_row(data, i);
            let back = ops.apply_gs_adjoint(&y);
            let mut a = ops.apply_gs(&back);
            mask_row(data, i, &mut a);
            let aa = norm_sqr(&a);
            let gamma = if aa > 0.0 { dot_conj(&a, &y) / aa } else { ZERO };
            let j: Vec<Complex64> = back.iter().map(|v| v * gamma).collect();
            let gj = ops.apply_gd(&j);
            let e = e_inc.views[i].iter().zip(&gj).map(|(x, g)| x + g).collect();
            (gamma, j, e)
        })
        .collect();
    let mut gamma = Vec::with_capacity(per_view.len());
    let mut currents = Vec::with_capacity(per_view.len());
    let mut fields = Vec::with_capacity(per_view.len());
    for (g, j, e) in per_view {
        gamma.push(g);
        currents.push(j);
        fields.push(e);
    }
    let e_tot = FieldSet::new(FieldRole::Total, fields);
    let eps = default_eps_reg(&e_tot);
    let chi0 = contrast_from_fields(&currents, &e_tot.views, ops, eps)?.chi;
    let r0 = chi_to_r(&chi0, beta)?;
    Ok(BpStart {
        chi0,
        currents,
        r0,
        gamma,
        e_tot,
    })
}

/// `Σ_i (‖G_S J_p,i‖²/‖E_sca‖² + ‖R(G_D J_p,i + βJ_p,i) − βJ_p,i‖²/‖E_inc‖²)`
/// with `J_p = expand(p)`: the curvature of the frozen-R CSI objective along
/// `p`, i.e. `L(α + t p) = L(α) + t Re⟨g, p⟩ + t² · this`.
pub fn csi_curvature(p: &SpectralCoefficients, ctx: &LossContext, r: &[Complex64]) -> Result<f64> {
    let beta = ctx.beta;
    let w = ctx.weights;
    let parts: Vec<(f64, f64)> = p
        .views
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let j = ctx.basis.expand(a)?;
            let mut y = ctx.ops.apply_gs(&j);
            mask_row(ctx.data, i, &mut y);
            let gj = ctx.ops.apply_gd(&j);
            let s: f64 = (0..j.len())
                .map(|k| (r[k] * (gj[k] + beta * j[k]) - beta * j[k]).norm_sqr())
                .sum();
            Ok((norm_sqr(&y), s))
        })
        .collect::<Result<_>>()?;
    let (d, s) = parts.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(w.data * d / ctx.data_norm() + w.state * s / ctx.incident_norm())
}

/// Exact line-search step along `−g` for the frozen-R quadratic.
fn exact_step(g: &SpectralCoefficients, ctx: &LossContext, r: &[Complex64]) -> Result<f64> {
    let gg: f64 = g.views.iter().flatten().map(|v| v.norm_sqr()).sum();
    if gg == 0.0 {
        return Ok(0.0);
    }
    let q = csi_curvature(g, ctx, r)?;
    Ok(if q > 0.0 { gg / (2.0 * q) } else { 0.0 })
}

fn axpy(alpha: &mut SpectralCoefficients, t: f64, g: &SpectralCoefficients) {
    for (a, d) in alpha.views.iter_mut().flatten().zip(g.views.iter().flatten()) {
        *a -= d * t;
    }
}

/// One exact steepest-descent step from zero on the CSI objective with `R̂`
/// frozen at `r0`.
pub fn init_alpha(r0: &ModifiedContrast, ctx: &LossContext) -> Result<SpectralCoefficients> {
    let csi = ctx.clone().with_weights(LossWeights::physics_only()).with_frozen_r(Some(r0));
    let zero = SpectralCoefficients::zeros(ctx.basis.m_f(), ctx.e_inc.n_views());
    let g = evaluate(&zero, &csi, true)?.gradient.expect("gradient requested");
    let t = exact_step(&g, &csi, r0.values.values())?;
    if t == 0.0 {
        log::warn!("CSI gradient at zero vanished; starting from zero coefficients");
        return Ok(zero);
    }
    let mut alpha = zero;
    axpy(&mut alpha, t, &g);
    Ok(alpha)
}

/// Output of one reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Contrast recovered from the final coefficients, before compensation.
    pub chi_hat: ComplexGrid,
    pub chi_cco: ComplexGrid,
    /// `chi_cco + 1`.
    pub eps_r_map: ComplexGrid,
    pub chi0: ComplexGrid,
    pub alpha0: SpectralCoefficients,
    pub alpha_final: SpectralCoefficients,
    /// One entry per optimisation iteration, evaluated before its update.
    pub trace: Vec<LossBreakdown>,
    /// Loss at the final coefficients.
    pub final_loss: LossBreakdown,
    pub degenerate_pixels: Vec<usize>,
    pub eps_reg: f64,
    pub wall_time: f64,
    pub relative_error: Option<f64>,
}

impl ReconstructionResult {
    pub fn with_truth(mut self, chi_true: &ComplexGrid) -> Self {
        self.relative_error = Some(relative_error(&self.eps_r_map, &chi_true.to_permittivity()));
        self
    }
}

/// Operators and incident fields for one configuration and antenna layout,
/// reusable across datasets.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub config: ImagingConfig,
    pub ops: GreensOperators,
    pub basis: SpectralBasis,
    pub e_inc: FieldSet,
}

impl Reconstructor {
    pub fn new(config: &ImagingConfig, array: &AntennaArray) -> Result<Self> {
        config.validate()?;
        let grid = build_grid(config)?;
        Ok(Self {
            config: config.clone(),
            ops: build_greens(config, array, &grid)?,
            basis: SpectralBasis::new(config.m1, config.m2, config.m_f)?,
            e_inc: incident_fields(config, array, &grid),
        })
    }

    pub fn from_parts(config: &ImagingConfig, ops: GreensOperators, e_inc: FieldSet) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            basis: SpectralBasis::new(config.m1, config.m2, config.m_f)?,
            ops,
            e_inc,
        })
    }

    fn beta(&self) -> Complex64 {
        Complex64::new(self.config.beta, 0.0)
    }

    fn layout(&self) -> ViewLayout {
        if self.config.options.joint_views {
            ViewLayout::Joint
        } else {
            ViewLayout::Shared
        }
    }

    /// Loss context for `data` with the regularisation floor taken from the
    /// BP total fields.
    pub fn context<'a>(&'a self, data: &'a ScatteredData, bp: &BpStart) -> Result<LossContext<'a>> {
        LossContext::new(&self.config, &self.ops, &self.basis, &self.e_inc, data, default_eps_reg(&bp.e_tot))
    }

    pub fn run(&self, data: &ScatteredData) -> Result<ReconstructionResult> {
        let start = Instant::now();
        let cfg = &self.config;
        if !data.is_finite() {
            return Err(Error::NonFinite {
                term: "measured data".into(),
                iteration: 0,
            });
        }
        let bp = bp_initialize(data, &self.e_inc, &self.ops, self.beta())?;
        let base = self.context(data, &bp)?;
        let ctx = if cfg.options.freeze_r {
            base.with_frozen_r(Some(&bp.r0))
        } else {
            base
        };
        let alpha0 = init_alpha(&bp.r0, &ctx)?;
        let layout = self.layout();
        let input = NetInput::new(alpha0.clone(), layout);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut params = init_network(self.basis.m0(), layout, data.n_tx, &mut rng)?;
        let mut adam = AdamState::new(
            params.len(),
            AdamConfig {
                lr: cfg.learn_rate,
                ..Default::default()
            },
        );
        let mut trace = Vec::with_capacity(cfg.k_iters);
        for iteration in 0..cfg.k_iters {
            let tag = |e: Error| match e {
                Error::NonFinite { term, .. } => Error::NonFinite { term, iteration },
                other => other,
            };
            let (grad, eval) = grad_loss(&params, &input, &ctx).map_err(tag)?;
            trace.push(eval.breakdown);
            adam_step(&mut adam, &mut params, &grad).map_err(tag)?;
        }
        let alpha_final = corrected_alpha(&params, &input)?;
        let last = evaluate(&alpha_final, &ctx, false).map_err(|e| match e {
            Error::NonFinite { term, .. } => Error::NonFinite {
                term,
                iteration: cfg.k_iters,
            },
            other => other,
        })?;
        let chi_hat = last.chi_hat;
        let chi_cco = if cfg.options.apply_cco {
            apply_cco(&chi_hat, &cfg.cco)?
        } else {
            chi_hat.clone()
        };
        let eps_r_map = chi_cco.to_permittivity();
        Ok(ReconstructionResult {
            chi_hat,
            chi_cco,
            eps_r_map,
            chi0: bp.chi0,
            alpha0,
            alpha_final,
            trace,
            final_loss: last.breakdown,
            degenerate_pixels: last.degenerate,
            eps_reg: ctx.eps_reg,
            wall_time: start.elapsed().as_secs_f64(),
            relative_error: None,
        })
    }
}

/// Full pipeline for one dataset.
pub fn reconstruct(config: &ImagingConfig, data: &ScatteredData, array: &AntennaArray) -> Result<ReconstructionResult> {
    if data.n_tx != array.tx.len() || data.n_rx != array.rx.len() {
        return Err(Error::ShapeMismatch(format!(
            "data is {}x{} but the array has {} transmitters and {} receivers",
            data.n_tx,
            data.n_rx,
            array.tx.len(),
            array.rx.len()
        )));
    }
    Reconstructor::new(config, array)?.run(data)
}

/// Progress of the coefficient-space CSI baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsiRun {
    pub iterations: usize,
    pub wall_time: f64,
    pub data_residual: f64,
    pub reached: bool,
    pub alpha: SpectralCoefficients,
}

/// Steepest descent on the physics loss directly over the coefficients (no
/// network), starting from zero. The trial step of each iteration is the
/// exact minimiser of the quadratic obtained by freezing `R̂` at its current
/// value; it is halved until the true loss decreases. Stops once the data
/// term drops to `target_data`, after `time_budget` seconds, or after
/// `max_iterations` steps.
pub fn csi_baseline(
    rec: &Reconstructor,
    data: &ScatteredData,
    target_data: f64,
    time_budget: f64,
    max_iterations: usize,
) -> Result<CsiRun> {
    let start = Instant::now();
    let bp = bp_initialize(data, &rec.e_inc, &rec.ops, rec.beta())?;
    let ctx = rec.context(data, &bp)?.with_weights(LossWeights::physics_only());
    let mut alpha = SpectralCoefficients::zeros(rec.basis.m_f(), data.n_tx);
    let mut iterations = 0;
    let mut eval = evaluate(&alpha, &ctx, true)?;
    let finish = |iterations, alpha, data_residual: f64, reached| CsiRun {
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        data_residual,
        reached,
        alpha,
    };
    loop {
        let residual = eval.breakdown.data;
        if iterations > 0 && residual <= target_data {
            return Ok(finish(iterations, alpha, residual, true));
        }
        if start.elapsed().as_secs_f64() >= time_budget || iterations >= max_iterations {
            return Ok(finish(iterations, alpha, residual, false));
        }
        // at zero coefficients R̂ is undefined; the BP estimate stands in
        let r = if iterations == 0 { &bp.r0 } else { &eval.r_hat };
        let g = if iterations == 0 {
            let first = ctx.clone().with_frozen_r(Some(r));
            evaluate(&alpha, &first, true)?.gradient.expect("gradient requested")
        } else {
            eval.gradient.clone().expect("gradient requested")
        };
        let mut t = exact_step(&g, &ctx, r.values.values())?;
        let mut accepted = None;
        while t > 0.0 && accepted.is_none() {
            let mut trial = alpha.clone();
            axpy(&mut trial, t, &g);
            let next = evaluate(&trial, &ctx, true)?;
            if next.breakdown.total < eval.breakdown.total || iterations == 0 {
                accepted = Some((trial, next));
            } else if t < 1e-12 * (1.0 + exact_step(&g, &ctx, r.values.values())?) {
                t = 0.0;
            } else {
                t *= 0.5;
            }
        }
        match accepted {
            Some((a, e)) => {
                alpha = a;
                eval = e;
                iterations += 1;
            }
            None => return Ok(finish(iterations, alpha, residual, false)),
        }
    }
}

/// Box mean over a `(2r+1)²` window with edge replication.
fn box_mean(x: &[f64], m1: usize, m2: usize, r: usize) -> Vec<f64> {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let w = (2 * r + 1) as f64;
    let mut rows = vec![0.0; x.len()];
    for i in 0..m1 {
        for j in 0..m2 {
            let mut acc = 0.0;
            for d in -(r as isize)..=(r as isize) {
                acc += x[i * m2 + clamp(j as isize + d, m2)];
            }
            rows[i * m2 + j] = acc / w;
        }
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..m1 {
        for j in 0..m2 {
            let mut acc = 0.0;
            for d in -(r as isize)..=(r as isize) {
                acc += rows[clamp(i as isize + d, m1) * m2 + j];
            }
            out[i * m2 + j] = acc / w;
        }
    }
    out
}

/// Guided filter of `input` steered by `guide`, both `m1 × m2` row-major.
pub fn guided_filter(input: &[f64], guide: &[f64], m1: usize, m2: usize, radius: usize, eps_gf: f64) -> Result<Vec<f64>> {
    if input.len() != m1 * m2 || guide.len() != m1 * m2 {
        return Err(Error::ShapeMismatch(format!(
            "guided filter: {} and {} values for {m1}x{m2}",
            input.len(),
            guide.len()
        )));
    }
    if radius == 0 {
        return Err(Error::InvalidConfig("guided filter radius must be >= 1".into()));
    }
    let mean = |v: &[f64]| box_mean(v, m1, m2, radius);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mean_i = mean(guide);
    let mean_p = mean(input);
    let corr_ip = mean(&prod(guide, input));
    let corr_ii = mean(&prod(guide, guide));
    let n = m1 * m2;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let var = corr_ii[k] - mean_i[k] * mean_i[k];
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        a[k] = cov / (var + eps_gf);
        b[k] = mean_p[k] - a[k] * mean_i[k];
    }
    let mean_a = mean(&a);
    let mean_b = mean(&b);
    Ok((0..n).map(|k| mean_a[k] * guide[k] + mean_b[k]).collect())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(1 + η) G(χ̂ | χ̂) + η χ̂` with `η = η_max σ((|χ̂| − τ)/δ)` per pixel and the
/// self-guided filter applied to real and imaginary parts separately.
pub fn apply_cco(chi_hat: &ComplexGrid, p: &CcoParams) -> Result<ComplexGrid> {
    let (m1, m2) = (chi_hat.m1(), chi_hat.m2());
    let re = chi_hat.real_part();
    let im = chi_hat.imag_part();
    let g_re = guided_filter(&re, &re, m1, m2, p.gf_radius, p.gf_eps)?;
    let g_im = guided_filter(&im, &im, m1, m2, p.gf_radius, p.gf_eps)?;
    let values = chi_hat
        .values()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let eta = p.eta_max * sigmoid((c.norm() - p.tau) / p.delta);
            Complex64::new(g_re[k], g_im[k]) * (1.0 + eta) + c * eta
        })
        .collect();
    ComplexGrid::new(m1, m2, chi_hat.cell_size(), values)
}

/// `‖Re ε̂ − Re ε‖_F / ‖Re ε‖_F`.
pub fn relative_error(eps_hat: &ComplexGrid, eps_true: &ComplexGrid) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in eps_hat.values().iter().zip(eps_true.values()) {
        num += (a.re - b.re).powi(2);
        den += b.re * b.re;
    }
    (num / den).sqrt()
}

/// 4-connected components of the pixels with `Re ε > threshold`.
pub fn count_components(eps: &ComplexGrid, threshold: f64) -> usize {
    let above: Vec<bool> = eps.values().iter().map(|v| v.re > threshold).collect();
    label_components(&above, eps.m1(), eps.m2()).1
}

/// 4-connected labelling of a row-major `m1 × m2` mask. Labels start at 1
/// in raster order of each component's first pixel; 0 marks background.
pub fn label_components(mask: &[bool], m1: usize, m2: usize) -> (Vec<usize>, usize) {
    let mut labels = vec![0; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (r, c) = (k / m2, k % m2);
            let mut visit = |n: usize| {
                if mask[n] && labels[n] == 0 {
                    labels[n] = count;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(k - m2);
            }
            if r + 1 < m1 {
                visit(k + m2);
            }
            if c > 0 {
                visit(k - 1);
            }
            if c + 1 < m2 {
                visit(k + 1);
            }
        }
    }
    (labels, count)
}
