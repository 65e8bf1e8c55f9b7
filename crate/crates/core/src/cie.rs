//! Contraction mapping between the contrast χ and the modified contrast
//! `R = βχ / (βχ + 1)`, the contraction form of the state equation, and
//! recovery of χ from spectral current coefficients.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{FieldSet, GreensOperators};
use crate::grid::ComplexGrid;
use crate::spectral::{SpectralBasis, SpectralCoefficients};

const POLE_GUARD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedContrast {
    pub values: ComplexGrid,
    pub beta: Complex64,
}

pub fn chi_to_r(chi: &ComplexGrid, beta: Complex64) -> Result<ModifiedContrast> {
    let mut out = Vec::with_capacity(chi.len());
    for (pixel, &c) in chi.values().iter().enumerate() {
        let den = beta * c + 1.0;
        if den.norm() < POLE_GUARD {
            return Err(Error::Pole { pixel });
        }
        out.push(beta * c / den);
    }
    Ok(ModifiedContrast {
        values: ComplexGrid::new(chi.m1(), chi.m2(), chi.cell_size(), out)?,
        beta,
    })
}

pub fn r_to_chi(r: &ModifiedContrast) -> Result<ComplexGrid> {
    let mut out = Vec::with_capacity(r.values.len());
    for (pixel, &v) in r.values.values().iter().enumerate() {
        let den = r.beta * (1.0 - v);
        if (1.0 - v).norm() < POLE_GUARD || den.norm() < POLE_GUARD {
            return Err(Error::Pole { pixel });
        }
        out.push(v / den);
    }
    ComplexGrid::new(r.values.m1(), r.values.m2(), r.values.cell_size(), out)
}

/// Default Tikhonov floor for the per-pixel least squares,
/// `1e-10 · max_i ‖E_i‖² / M`.
pub fn default_eps_reg(fields: &FieldSet) -> f64 {
    let m = fields.views.first().map_or(1, |v| v.len().max(1));
    let peak = fields
        .views
        .iter()
        .map(|v| v.iter().map(|x| x.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max);
    1e-10 * peak / m as f64
}

/// Contrast estimate with the pixels whose normal equation was too weak to
/// trust.
#[derive(Debug, Clone)]
pub struct RecoveredContrast {
    pub chi: ComplexGrid,
    /// Pixels where `Σ|E|² ≤ 10·eps_reg`.
    pub degenerate: Vec<usize>,
}

/// Currents `J_i = expand(α_i)` and total fields `E_i = E_inc,i + G_D J_i`.
pub fn currents_and_fields(
    alpha: &SpectralCoefficients,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
    check_views(alpha, e_inc, ops, basis)?;
    let pairs: Result<Vec<_>> = alpha
        .views
        .par_iter()
        .zip(&e_inc.views)
        .map(|(a, inc)| {
            let j = basis.expand(a)?;
            let gj = ops.apply_gd(&j);
            let e: Vec<Complex64> = inc.iter().zip(&gj).map(|(x, y)| x + y).collect();
            Ok((j, e))
        })
        .collect();
    Ok(pairs?.into_iter().unzip())
}

fn check_views(
    alpha: &SpectralCoefficients,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<()> {
    if alpha.n_views() != e_inc.n_views() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient views vs {} incident views",
            alpha.n_views(),
            e_inc.n_views()
        )));
    }
    if basis.grid_len() != ops.len() || e_inc.views.iter().any(|v| v.len() != ops.len()) {
        return Err(Error::ShapeMismatch("basis, fields and operators disagree on grid size".into()));
    }
    Ok(())
}

/// Per-pixel numerator `Σ_i J_i conj(E_i)` and denominator `Σ_i |E_i|²`
/// (without `eps_reg`), accumulated in view order.
pub fn normal_equations<'a>(
    views: impl IntoIterator<Item = (&'a [Complex64], &'a [Complex64])>,
    m: usize,
) -> (Vec<Complex64>, Vec<f64>) {
    let mut num = vec![Complex64::new(0.0, 0.0); m];
    let mut den = vec![0.0; m];
    for (j, e) in views {
        for k in 0..m {
            num[k] += j[k] * e[k].conj();
            den[k] += e[k].norm_sqr();
        }
    }
    (num, den)
}

pub fn recover_contrast(
    alpha: &SpectralCoefficients,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    basis: &SpectralBasis,
    eps_reg: f64,
) -> Result<RecoveredContrast> {
    let (j, e) = currents_and_fields(alpha, e_inc, ops, basis)?;
    contrast_from_fields(&j, &e, ops, eps_reg)
}

/// Least-squares contrast from explicit currents and total fields.
pub fn contrast_from_fields(
    currents: &[Vec<Complex64>],
    fields: &[Vec<Complex64>],
    ops: &GreensOperators,
    eps_reg: f64,
) -> Result<RecoveredContrast> {
    let pairs = currents.iter().zip(fields).map(|(j, e)| (&j[..], &e[..]));
    let (num, den) = normal_equations(pairs, ops.len());
    let degenerate = den
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= 10.0 * eps_reg)
        .map(|(k, _)| k)
        .collect();
    let values = num.iter().zip(&den).map(|(n, d)| n / (d + eps_reg)).collect();
    Ok(RecoveredContrast {
        chi: ComplexGrid::new(ops.m1, ops.m2, ops.cell_size, values)?,
        degenerate,
    })
}

/// `R E_inc + (R G_D − β(I − R)) J` for one explicit current.
pub fn cie_residual_from_current(
    j: &[Complex64],
    e_inc: &[Complex64],
    r: &[Complex64],
    beta: Complex64,
    ops: &GreensOperators,
) -> Vec<Complex64> {
    let gj = ops.apply_gd(j);
    (0..j.len())
        .map(|k| r[k] * (e_inc[k] + gj[k]) - beta * (1.0 - r[k]) * j[k])
        .collect()
}

pub fn cie_state_residual(
    alpha: &SpectralCoefficients,
    r_hat: &ModifiedContrast,
    e_inc: &FieldSet,
    ops: &GreensOperators,
    basis: &SpectralBasis,
) -> Result<Vec<Vec<Complex64>>> {
    check_views(alpha, e_inc, ops, basis)?;
    if r_hat.values.len() != ops.len() {
        return Err(Error::ShapeMismatch("modified contrast size".into()));
    }
    alpha
        .views
        .par_iter()
        .zip(&e_inc.views)
        .map(|(a, inc)| {
            let j = basis.expand(a)?;
            Ok(cie_residual_from_current(&j, inc, r_hat.values.values(), r_hat.beta, ops))
        })
        .collect()
}
