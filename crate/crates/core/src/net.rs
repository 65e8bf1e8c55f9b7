//! Untrained fully connected network producing the corrective update
//! `Δα`, its reverse-mode gradient, and Adam.
//!
//! Each view's coefficients enter as one row `[Re α, Im α]`, divided mode by
//! mode by the RMS of that mode over views; the output row is mapped back as
//! `Δα_k = c_k (out_re + i out_im)` with `c_k` the same RMS times
//! [`OUTPUT_GAIN`]. Hidden
//! layers use `tanh`; the output layer is linear and starts at zero, so a
//! fresh network returns `Δα = 0`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::loss::{evaluate, Evaluation, LossContext};
use crate::spectral::SpectralCoefficients;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

/// How views are presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewLayout {
    /// One row per view, shared weights.
    Shared,
    /// All views concatenated into a single row.
    Joint,
}

impl NetworkParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::ShapeMismatch(format!("layer {} output does not feed layer {}", i, i + 1)));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weight.nrows()) {
            return Err(Error::ShapeMismatch("bias length differs from layer width".into()));
        }
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.first().map(|l| vec![l.weight.ncols()]).unwrap_or_default();
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    /// Total parameter count.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters in flattened order: per layer, row-major weight then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} parameters", flat.len(), self.len())));
        }
        let mut it = flat.iter();
        for v in self.params_mut() {
            *v = *it.next().expect("length checked");
        }
        Ok(())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Runs the raw network on a batch of rows, keeping the activations.
    fn forward_rows(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weight.t());
            z += &l.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Output of the raw network for a batch of input rows.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} vs network {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(self.forward_rows(x).pop().expect("at least one layer"))
    }

    /// Gradient of `Σ g_out ⊙ out` with respect to every parameter, in
    /// flattened order.
    fn backward(&self, acts: &[Array2<f64>], g_out: Array2<f64>) -> Vec<f64> {
        let n = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n);
        let mut g = g_out;
        for i in (0..n).rev() {
            if i < n - 1 {
                // through tanh: acts[i + 1] holds tanh(z)
                g.zip_mut_with(&acts[i + 1], |gv, h| *gv *= 1.0 - h * h);
            }
            let gw = g.t().dot(&acts[i]);
            let gb = g.sum_axis(Axis(0));
            let g_prev = if i > 0 { Some(g.dot(&self.layers[i].weight)) } else { None };
            grads.push((gw, gb));
            if let Some(p) = g_prev {
                g = p;
            }
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.len());
        for (gw, gb) in grads {
            out.extend(gw.iter());
            out.extend(gb.iter());
        }
        out
    }
}

/// Widths `[2m0·v, 4m0, 4m0, 2m0·v]` with `v` the number of views per row.
pub fn network_widths(m0: usize, views_per_row: usize) -> [usize; 4] {
    [2 * m0 * views_per_row, 4 * m0, 4 * m0, 2 * m0 * views_per_row]
}

/// Gaussian hidden layers with std `sqrt(1/fan_in)`, zero biases, zero
/// output layer.
pub fn init_network<R: Rng + ?Sized>(m0: usize, layout: ViewLayout, n_views: usize, rng: &mut R) -> Result<NetworkParams> {
    if m0 == 0 {
        return Err(Error::InvalidConfig("m0 must be >= 1".into()));
    }
    let per_row = match layout {
        ViewLayout::Shared => 1,
        ViewLayout::Joint => n_views.max(1),
    };
    init_with_widths(&network_widths(m0, per_row), rng)
}

pub fn init_with_widths<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<NetworkParams> {
    let n = widths.len() - 1;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        let weight = if i + 1 == n {
            Array2::zeros((fan_out, fan_in))
        } else {
            let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng))
        };
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    NetworkParams::from_layers(layers)
}

/// RMS magnitude of all coefficients (1 when they are all zero).
pub fn rms_scale(alpha: &SpectralCoefficients) -> f64 {
    let n = alpha.views.iter().map(|v| v.len()).sum::<usize>().max(1);
    let rms = (alpha.views.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// RMS over views of each mode, floored at `1e-3` of the overall RMS so that
/// empty modes keep a usable scale.
pub fn mode_scales(alpha: &SpectralCoefficients) -> Vec<f64> {
    let global = rms_scale(alpha);
    let nv = alpha.n_views().max(1) as f64;
    (0..alpha.m0())
        .map(|k| {
            let rms = (alpha.views.iter().map(|v| v[k].norm_sqr()).sum::<f64>() / nv).sqrt();
            rms.max(1e-3 * global)
        })
        .collect()
}

/// Output multiplier relative to the per-mode input scale. Adam moves every
/// output weight by about the learning rate per step, so one step shifts an
/// output by roughly `lr` times the summed hidden activity; this keeps the
/// first steps to a fraction of the initial coefficient size.
pub const OUTPUT_GAIN: f64 = 0.1;

/// The fixed network input and the per-mode scalings around it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub alpha0: SpectralCoefficients,
    pub layout: ViewLayout,
    /// Divides mode `k` of every view on the way in.
    pub input_scale: Vec<f64>,
    /// Multiplies mode `k` of every view on the way out.
    pub output_scale: Vec<f64>,
}

impl NetInput {
    /// Input scale: the per-mode RMS of `alpha0`; output scale: the same
    /// times [`OUTPUT_GAIN`].
    pub fn new(alpha0: SpectralCoefficients, layout: ViewLayout) -> Self {
        let s = mode_scales(&alpha0);
        Self {
            alpha0,
            layout,
            output_scale: s.iter().map(|v| v * OUTPUT_GAIN).collect(),
            input_scale: s,
        }
    }

    pub fn with_output_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        let m0 = self.alpha0.m0();
        if scale.len() != m0 && scale.len() != m0 * self.alpha0.n_views() {
            return Err(Error::ShapeMismatch(format!("{} output scales for {} modes", scale.len(), m0)));
        }
        if scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("output scales must be positive and finite".into()));
        }
        self.output_scale = scale;
        Ok(self)
    }
}

/// `scale` holds either one entry per mode or one per (view, mode).
fn layout_rows(alpha0: &SpectralCoefficients, layout: ViewLayout, scale: &[f64]) -> Array2<f64> {
    let m0 = alpha0.m0();
    let nv = alpha0.n_views();
    let (rows, per_row) = match layout {
        ViewLayout::Shared => (nv, 1),
        ViewLayout::Joint => (1, nv),
    };
    let mut x = Array2::zeros((rows, 2 * m0 * per_row));
    for (v, view) in alpha0.views.iter().enumerate() {
        let (row, off) = match layout {
            ViewLayout::Shared => (v, 0),
            ViewLayout::Joint => (0, 2 * m0 * v),
        };
        let base = if scale.len() == m0 { 0 } else { v * m0 };
        for (k, a) in view.iter().enumerate() {
            x[[row, off + k]] = a.re / scale[base + k];
            x[[row, off + m0 + k]] = a.im / scale[base + k];
        }
    }
    x
}

fn read_rows(out: &Array2<f64>, layout: ViewLayout, m_f: usize, nv: usize, scale: &[f64]) -> SpectralCoefficients {
    let m0 = 4 * m_f * m_f;
    let views = (0..nv)
        .map(|v| {
            let (row, off) = match layout {
                ViewLayout::Shared => (v, 0),
                ViewLayout::Joint => (0, 2 * m0 * v),
            };
            let base = if scale.len() == m0 { 0 } else { v * m0 };
            (0..m0)
                .map(|k| Complex64::new(out[[row, off + k]], out[[row, off + m0 + k]]) * scale[base + k])
                .collect()
        })
        .collect();
    SpectralCoefficients { m_f, views }
}

fn check_input(params: &NetworkParams, input: &NetInput) -> Result<()> {
    let alpha0 = &input.alpha0;
    let per_row = match input.layout {
        ViewLayout::Shared => 1,
        ViewLayout::Joint => alpha0.n_views(),
    };
    let want = 2 * alpha0.m0() * per_row;
    if params.input_width() != want || params.output_width() != want {
        return Err(Error::ShapeMismatch(format!(
            "network widths {:?} do not fit {} coefficients per row",
            params.widths(),
            want
        )));
    }
    Ok(())
}

/// `Δα` for every view.
pub fn forward_net(params: &NetworkParams, input: &NetInput) -> Result<SpectralCoefficients> {
    check_input(params, input)?;
    let x = layout_rows(&input.alpha0, input.layout, &input.input_scale);
    let out = params.apply(x.view())?;
    let a = &input.alpha0;
    Ok(read_rows(&out, input.layout, a.m_f, a.n_views(), &input.output_scale))
}

/// `α̂ = α0 + Δα`.
pub fn corrected_alpha(params: &NetworkParams, input: &NetInput) -> Result<SpectralCoefficients> {
    let mut delta = forward_net(params, input)?;
    for (d, a) in delta.views.iter_mut().zip(&input.alpha0.views) {
        for (x, y) in d.iter_mut().zip(a) {
            *x += y;
        }
    }
    Ok(delta)
}

/// Pulls a coefficient gradient (`∂L/∂Re + i ∂L/∂Im` per entry of `α̂`) back
/// to the flattened network parameters.
pub fn backprop(params: &NetworkParams, input: &NetInput, grad_alpha: &SpectralCoefficients) -> Result<Vec<f64>> {
    check_input(params, input)?;
    let alpha0 = &input.alpha0;
    if grad_alpha.n_views() != alpha0.n_views() || grad_alpha.m0() != alpha0.m0() {
        return Err(Error::ShapeMismatch("gradient and coefficient shapes differ".into()));
    }
    let x = layout_rows(alpha0, input.layout, &input.input_scale);
    let acts = params.forward_rows(x.view());
    // Δα_k = c_k·out_k, so ∂L/∂out_k = c_k·(Re g_k, Im g_k)
    let inv: Vec<f64> = input.output_scale.iter().map(|c| 1.0 / c).collect();
    let g_out = layout_rows(grad_alpha, input.layout, &inv);
    Ok(params.backward(&acts, g_out))
}

/// Loss at `α0 + Δα(θ)` and its gradient with respect to every network
/// parameter, in flattened order.
pub fn grad_loss(params: &NetworkParams, input: &NetInput, ctx: &LossContext) -> Result<(Vec<f64>, Evaluation)> {
    let alpha = corrected_alpha(params, input)?;
    let eval = evaluate(&alpha, ctx, true)?;
    let g_alpha = eval.gradient.as_ref().expect("gradient requested");
    let grad = backprop(params, input, g_alpha)?;
    if grad.iter().any(|g| !g.is_finite()) {
        // name the first term whose own gradient is not finite
        let term = crate::loss::TERM_NAMES
            .into_iter()
            .find(|name| {
                let single = ctx.clone().with_weights(ctx.weights.isolate(name));
                evaluate(&alpha, &single, true).map_or(true, |e| {
                    e.gradient
                        .is_some_and(|g| g.views.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()))
                })
            })
            .unwrap_or("total");
        return Err(Error::NonFinite {
            term: format!("{term} gradient"),
            iteration: 0,
        });
    }
    Ok((grad, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams, grad: &[f64]) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} gradients, {} moments, {} parameters",
            grad.len(),
            state.m.len(),
            params.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            term: format!("gradient entry {i}"),
            iteration: state.step as usize,
        });
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (k, p) in params.params_mut().enumerate() {
        let g = grad[k];
        state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * g;
        state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * g * g;
        let mhat = state.m[k] / bc1;
        let vhat = state.v[k] / bc2;
        *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite {
            term: "network parameters".into(),
            iteration: state.step as usize,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    widths: Vec<usize>,
    count: usize,
    byte_order: String,
}

/// Debug dump: one JSON header line, then the flattened parameters as
/// little-endian f64.
pub fn write_checkpoint<W: Write>(params: &NetworkParams, mut w: W) -> Result<()> {
    let header = CheckpointHeader {
        widths: params.widths(),
        count: params.len(),
        byte_order: "little".into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::CorruptHeader("no header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * header.count {
        return Err(Error::CorruptHeader(format!("{} payload bytes for {} values", body.len(), header.count)));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut layers = Vec::new();
    for pair in header.widths.windows(2) {
        layers.push(Layer {
            weight: Array2::zeros((pair[1], pair[0])),
            bias: Array1::zeros(pair[1]),
        });
    }
    let mut params = NetworkParams::from_layers(layers)?;
    params.set_flat(&flat)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_alpha(m_f: usize, nv: usize, seed: u64) -> SpectralCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = SpectralCoefficients::zeros(m_f, nv);
        for v in a.views.iter_mut().flatten() {
            *v = Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        a
    }

    #[test]
    fn default_widths() {
        let p = init_network(196, ViewLayout::Shared, 36, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.widths(), vec![392, 784, 784, 392]);
        assert_eq!(p.input_width(), 392);
    }

    #[test]
    fn fresh_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let alpha = random_alpha(2, 3, 2);
        for layout in [ViewLayout::Shared, ViewLayout::Joint] {
            let p = init_network(16, layout, 3, &mut rng).unwrap();
            let input = NetInput::new(alpha.clone(), layout);
            let d = forward_net(&p, &input).unwrap();
            assert!(d.views.iter().flatten().all(|v| *v == Complex64::new(0.0, 0.0)));
            assert_eq!(corrected_alpha(&p, &input).unwrap(), alpha);
        }
    }

    #[test]
    fn mode_scales_are_per_mode_rms() {
        let c = Complex64::new;
        let a = SpectralCoefficients {
            m_f: 1,
            views: vec![
                vec![c(3.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)],
                vec![c(0.0, 4.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            ],
        };
        let s = mode_scales(&a);
        // overall RMS is sqrt(27/8)
        let floor = 1e-3 * (27.0f64 / 8.0).sqrt();
        let expect = [(12.5f64).sqrt(), 1.0, floor, floor];
        for (x, y) in s.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
        let zero = SpectralCoefficients::zeros(1, 2);
        assert_eq!(mode_scales(&zero), vec![1e-3; 4]);
        let input = NetInput::new(a.clone(), ViewLayout::Shared);
        assert_eq!(input.output_scale[0], s[0] * OUTPUT_GAIN);
        assert!(input.clone().with_output_scale(vec![1.0; 3]).is_err());
        assert!(input.clone().with_output_scale(vec![1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(input.with_output_scale(vec![1.0; 8]).is_ok());
    }

    #[test]
    fn init_is_seeded() {
        let a = init_network(9, ViewLayout::Shared, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_network(9, ViewLayout::Shared, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = init_network(9, ViewLayout::Shared, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn perturbed(m0: usize, seed: u64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_network(m0, ViewLayout::Shared, 1, &mut rng).unwrap();
        let mut flat = p.flatten();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        p.set_flat(&flat).unwrap();
        p
    }

    #[test]
    fn views_permute_with_outputs() {
        let p = perturbed(4, 7);
        let alpha = random_alpha(1, 4, 8);
        let out = forward_net(&p, &NetInput::new(alpha.clone(), ViewLayout::Shared)).unwrap();
        let mut swapped = alpha.clone();
        swapped.views.reverse();
        let mut out2 = forward_net(&p, &NetInput::new(swapped, ViewLayout::Shared)).unwrap();
        out2.views.reverse();
        assert_eq!(out, out2);
    }

    #[test]
    fn hand_computed_toy() {
        // identity hidden layer, affine output: out = A tanh(x) + c
        let layers = vec![
            Layer {
                weight: Array2::eye(4),
                bias: Array1::zeros(4),
            },
            Layer {
                weight: array![[1.0, 2.0, 0.0, 0.0], [0.0, 1.0, 0.0, -1.0], [0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 3.0, 1.0]],
                bias: array![0.1, 0.2, 0.3, 0.4],
            },
        ];
        let p = NetworkParams::from_layers(layers).unwrap();
        let x = array![[0.5, -1.0, 2.0, 0.0]];
        let out = p.apply(x.view()).unwrap();
        let t = [0.5f64.tanh(), (-1.0f64).tanh(), 2.0f64.tanh(), 0.0];
        let expect = [
            t[0] + 2.0 * t[1] + 0.1,
            t[1] - t[3] + 0.2,
            0.5 * t[0] + 0.3,
            3.0 * t[2] + t[3] + 0.4,
        ];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    /// Loss `Σ Re(conj(c) α̂)` has coefficient gradient `c`.
    fn linear_objective(params: &NetworkParams, input: &NetInput, c: &SpectralCoefficients) -> f64 {
        let a = corrected_alpha(params, input).unwrap();
        a.views
            .iter()
            .flatten()
            .zip(c.views.iter().flatten())
            .map(|(x, w)| (w.conj() * x).re)
            .sum()
    }

    #[test]
    fn backprop_matches_differences() {
        for layout in [ViewLayout::Shared, ViewLayout::Joint] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let per_view: Vec<f64> = (0..12).map(|k| 0.25 + 0.1 * k as f64).collect();
            let input = NetInput::new(random_alpha(1, 3, 10), layout)
                .with_output_scale(per_view)
                .unwrap();
            let mut p = init_network(4, layout, 3, &mut rng).unwrap();
            let mut flat = p.flatten();
            for v in flat.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
            p.set_flat(&flat).unwrap();
            let c = random_alpha(1, 3, 11);
            let g = backprop(&p, &input, &c).unwrap();
            let h = 1e-6;
            for k in (0..flat.len()).step_by(7) {
                let mut q = p.clone();
                let mut f = flat.clone();
                f[k] += h;
                q.set_flat(&f).unwrap();
                let up = linear_objective(&q, &input, &c);
                f[k] -= 2.0 * h;
                q.set_flat(&f).unwrap();
                let down = linear_objective(&q, &input, &c);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-7 * (1.0 + g[k].abs()), "param {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn duplicated_view_doubles_its_gradient() {
        let p = perturbed(4, 12);
        let one = random_alpha(1, 1, 13);
        let two = SpectralCoefficients {
            m_f: 1,
            views: vec![one.views[0].clone(), one.views[0].clone()],
        };
        let c1 = random_alpha(1, 1, 14);
        let c2 = SpectralCoefficients {
            m_f: 1,
            views: vec![c1.views[0].clone(), c1.views[0].clone()],
        };
        let g1 = backprop(&p, &NetInput::new(one, ViewLayout::Shared), &c1).unwrap();
        let g2 = backprop(&p, &NetInput::new(two, ViewLayout::Shared), &c2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = perturbed(2, 15);
        let before = p.clone();
        let mut st = AdamState::new(p.len(), AdamConfig::default());
        adam_step(&mut st, &mut p, &vec![0.0; before.len()]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = perturbed(2, 16);
        let before = p.flatten();
        let mut st = AdamState::new(p.len(), AdamConfig::default());
        let g: Vec<f64> = (0..before.len()).map(|k| if k % 2 == 0 { 0.3 } else { -2.0 }).collect();
        adam_step(&mut st, &mut p, &g).unwrap();
        for ((a, b), g) in p.flatten().iter().zip(&before).zip(&g) {
            let expect = -1e-2 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((a - b - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_nonfinite() {
        let mut p = perturbed(1, 17);
        let mut st = AdamState::new(p.len(), AdamConfig::default());
        let mut g = vec![0.0; p.len()];
        g[3] = f64::NAN;
        assert!(matches!(adam_step(&mut st, &mut p, &g), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = perturbed(2, 18);
            let mut st = AdamState::new(p.len(), AdamConfig::default());
            for i in 0..5 {
                let g: Vec<f64> = p.flatten().iter().map(|v| v * (i as f64 + 1.0)).collect();
                adam_step(&mut st, &mut p, &g).unwrap();
            }
            p.flatten()
        };
        assert_eq!(run(), run());
    }

    fn small_context(p: &crate::testutil::SmallProblem) -> LossContext<'_> {
        let eps = 1e-10 * p.e_inc.norm_sqr() / 256.0;
        LossContext::new(&p.config, &p.ops, &p.basis, &p.e_inc, &p.data, eps).unwrap()
    }

    #[test]
    fn full_loss_gradient_matches_differences() {
        let prob = crate::testutil::small_problem();
        let ctx = small_context(&prob);
        let input = NetInput::new(crate::testutil::random_alpha(&prob, 20), ViewLayout::Shared);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = init_network(36, ViewLayout::Shared, 8, &mut rng).unwrap();
        let mut flat = params.flatten();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        params.set_flat(&flat).unwrap();
        let (grad, _) = grad_loss(&params, &input, &ctx).unwrap();
        let loss_at = |f: &[f64]| {
            let mut q = params.clone();
            q.set_flat(f).unwrap();
            let a = corrected_alpha(&q, &input).unwrap();
            evaluate(&a, &ctx, false).unwrap().breakdown.total
        };
        let h = 1e-5;
        for _ in 0..20 {
            let k = rng.random_range(0..flat.len());
            let mut f = flat.clone();
            f[k] += h;
            let up = loss_at(&f);
            f[k] -= 2.0 * h;
            let down = loss_at(&f);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs());
            assert!(rel <= 1e-5, "param {k}: fd {fd:e} analytic {:e}", grad[k]);
        }
    }

    #[test]
    fn data_only_gradient_matches_adjoint_formula() {
        let prob = crate::testutil::small_problem();
        let ctx = small_context(&prob).with_weights(crate::loss::LossWeights::physics_only().isolate("data"));
        let input = NetInput::new(crate::testutil::random_alpha(&prob, 22), ViewLayout::Shared);
        let params = perturbed(36, 23);
        let (grad, _) = grad_loss(&params, &input, &ctx).unwrap();
        let a = corrected_alpha(&params, &input).unwrap();
        let g_alpha = crate::loss::loss_data_gradient(&a, &prob.data, &prob.ops, &prob.basis).unwrap();
        let direct = backprop(&params, &input, &g_alpha).unwrap();
        for (x, y) in grad.iter().zip(&direct) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = perturbed(2, 19);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, p);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
