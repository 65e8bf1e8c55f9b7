//! Two-dimensional DFT on row-major buffers.
//!
//! Forward transforms are unnormalised; [`Fft2::inverse`] does not scale
//! either, callers apply `1/(n1·n2)` where their convention needs it.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct Fft2 {
    n1: usize,
    n2: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.n1, self.n2)
    }
}

impl Fft2 {
    pub fn new(n1: usize, n2: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n1,
            n2,
            row_fwd: planner.plan_fft_forward(n2),
            row_inv: planner.plan_fft_inverse(n2),
            col_fwd: planner.plan_fft_forward(n1),
            col_inv: planner.plan_fft_inverse(n1),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, true, self.n1);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, false, self.n1);
    }

    /// Forward transform of a buffer whose rows `live_rows..` are zero.
    pub fn forward_sparse_rows(&self, buf: &mut [Complex64], live_rows: usize) {
        self.run(buf, true, live_rows.min(self.n1));
    }

    fn run(&self, buf: &mut [Complex64], forward: bool, live_rows: usize) {
        assert_eq!(buf.len(), self.len(), "fft buffer size");
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(&mut buf[..live_rows * self.n2]);
        let mut column = vec![Complex64::new(0.0, 0.0); self.n1];
        for c in 0..self.n2 {
            for r in 0..self.n1 {
                column[r] = buf[r * self.n2 + c];
            }
            col.process(&mut column);
            for r in 0..self.n1 {
                buf[r * self.n2 + c] = column[r];
            }
        }
    }
}
