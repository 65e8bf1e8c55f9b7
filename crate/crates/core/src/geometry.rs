//! Imaging-domain discretisation and antenna layouts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::config::ImagingConfig;
use crate::error::Result;

pub type Point = [f64; 2];

/// Cell centres of the uniform grid covering the imaging domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub m1: usize,
    pub m2: usize,
    pub cell_size: f64,
    /// Row-major centres; row index along `y`, column index along `x`.
    pub centers: Vec<Point>,
}

impl GridGeometry {
    pub fn new(m1: usize, m2: usize, cell_size: f64) -> Self {
        // half-integer offsets keep mirrored centres exact negatives
        let x0 = 0.5 - 0.5 * m2 as f64;
        let y0 = 0.5 - 0.5 * m1 as f64;
        let mut centers = Vec::with_capacity(m1 * m2);
        for r in 0..m1 {
            for c in 0..m2 {
                centers.push([
                    (c as f64 + x0) * cell_size,
                    (r as f64 + y0) * cell_size,
                ]);
            }
        }
        Self {
            m1,
            m2,
            cell_size,
            centers,
        }
    }

    pub fn len(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Radius of the disk with the same area as one cell.
    pub fn equivalent_radius(&self) -> f64 {
        self.cell_size / PI.sqrt()
    }
}

pub fn build_grid(config: &ImagingConfig) -> Result<GridGeometry> {
    config.validate()?;
    Ok(GridGeometry::new(config.m1, config.m2, config.cell_size()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
}

/// `n` points equally spaced on a circle, the first on the positive x axis.
pub fn ring(n: usize, radius: f64) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / n as f64;
            [radius * phi.cos(), radius * phi.sin()]
        })
        .collect()
}

pub fn build_array(config: &ImagingConfig) -> Result<AntennaArray> {
    config.validate()?;
    Ok(AntennaArray {
        tx: ring(config.n_tx, config.ring_radius),
        rx: ring(config.n_rx, config.ring_radius),
    })
}

/// Displaces every coordinate of every antenna by an independent
/// `N(0, sigma²)` draw. Transmitters are perturbed first, then receivers.
pub fn perturb_array<R: Rng + ?Sized>(array: &AntennaArray, sigma: f64, rng: &mut R) -> AntennaArray {
    if sigma == 0.0 {
        return array.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and >= 0");
    let mut jitter = |pts: &[Point]| -> Vec<Point> {
        pts.iter()
            .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng)])
            .collect()
    };
    let tx = jitter(&array.tx);
    let rx = jitter(&array.rx);
    AntennaArray { tx, rx }
}
