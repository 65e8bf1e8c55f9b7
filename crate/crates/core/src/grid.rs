use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `m1 × m2` complex image on the imaging domain, stored row-major.
///
/// Row index runs along `y`, column index along `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexGrid {
    m1: usize,
    m2: usize,
    cell_size: f64,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(m1: usize, m2: usize, cell_size: f64, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != m1 * m2 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {m1}x{m2} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite {
                term: format!("grid value at index {i}"),
                iteration: 0,
            });
        }
        Ok(Self {
            m1,
            m2,
            cell_size,
            values,
        })
    }

    pub fn zeros(m1: usize, m2: usize, cell_size: f64) -> Self {
        Self {
            m1,
            m2,
            cell_size,
            values: vec![Complex64::new(0.0, 0.0); m1 * m2],
        }
    }

    pub fn from_real(m1: usize, m2: usize, cell_size: f64, values: &[f64]) -> Result<Self> {
        Self::new(
            m1,
            m2,
            cell_size,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.m2 + col]
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    /// Relative permittivity `χ + 1`.
    pub fn to_permittivity(&self) -> ComplexGrid {
        self.map(|v| v + 1.0)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexGrid {
        ComplexGrid {
            m1: self.m1,
            m2: self.m2,
            cell_size: self.cell_size,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &ComplexGrid) -> bool {
        self.m1 == other.m1 && self.m2 == other.m2
    }
}
