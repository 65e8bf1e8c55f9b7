//! Shared fixtures for unit tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ImagingConfig;
use crate::forward::{build_greens, build_greens_with_k0, incident_fields, simulate, FieldRole, FieldSet, GreensOperators, ScatteredData};
use crate::geometry::{build_array, ring, GridGeometry};
use crate::grid::ComplexGrid;
use crate::scene::{Geometry, Scene, Shape};
use crate::spectral::{SpectralBasis, SpectralCoefficients};

pub struct Instance {
    pub ops: GreensOperators,
    pub basis: SpectralBasis,
    pub chi: ComplexGrid,
    pub alpha: SpectralCoefficients,
    pub e_inc: FieldSet,
}

/// Four views whose currents lie in the retained subspace, with incident
/// fields chosen so that `J = χ E_tot` holds exactly for a smooth χ.
pub fn consistent_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ImagingConfig::default();
    let g = GridGeometry::new(16, 16, 1.5 / 16.0);
    let ops = build_greens_with_k0(config.k0(), &ring(8, 5.0), &g).unwrap();
    let basis = SpectralBasis::new(16, 16, 3).unwrap();
    let chi_vals: Vec<Complex64> = g
        .centers
        .iter()
        .map(|p| Complex64::new(1.0 + 0.5 * (2.0 * p[0]).cos() * p[1].sin(), 0.2 + 0.1 * p[0]))
        .collect();
    let chi = ComplexGrid::new(16, 16, g.cell_size, chi_vals).unwrap();
    let mut alpha = SpectralCoefficients::zeros(3, 4);
    let mut e_inc = Vec::new();
    for view in alpha.views.iter_mut() {
        for v in view.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let j = basis.expand(view).unwrap();
        let gj = ops.apply_gd(&j);
        e_inc.push((0..j.len()).map(|k| j[k] / chi.values()[k] - gj[k]).collect());
    }
    Instance {
        ops,
        basis,
        chi,
        alpha,
        e_inc: FieldSet::new(FieldRole::Incident, e_inc),
    }
}

/// A 16×16, 8×8-antenna problem with simulated data of a disk.
pub struct SmallProblem {
    pub config: ImagingConfig,
    pub ops: GreensOperators,
    pub basis: SpectralBasis,
    pub e_inc: FieldSet,
    pub data: ScatteredData,
    pub chi_true: ComplexGrid,
}

pub fn small_config() -> ImagingConfig {
    ImagingConfig {
        m1: 16,
        m2: 16,
        n_tx: 8,
        n_rx: 8,
        m_f: 3,
        ..Default::default()
    }
}

pub fn small_problem() -> SmallProblem {
    let config = small_config();
    let grid = crate::geometry::build_grid(&config).unwrap();
    let array = build_array(&config).unwrap();
    let scene = Scene {
        name: "disk".into(),
        shapes: vec![Shape {
            geometry: Geometry::Disk {
                center: [0.1, -0.1],
                radius: 0.35,
            },
            eps_r: Complex64::new(2.0, 0.3),
        }],
    };
    let sim = simulate(&config, &scene, &array).unwrap();
    SmallProblem {
        ops: build_greens(&config, &array, &grid).unwrap(),
        basis: SpectralBasis::new(16, 16, 3).unwrap(),
        e_inc: incident_fields(&config, &array, &grid),
        data: sim.data,
        chi_true: sim.chi,
        config,
    }
}

/// Random coefficients at roughly the scale of the problem's currents.
pub fn random_alpha(p: &SmallProblem, seed: u64) -> SpectralCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = p.e_inc.views[0].iter().map(|v| v.norm()).sum::<f64>() / 4.0;
    let mut alpha = SpectralCoefficients::zeros(3, p.config.n_tx);
    for v in alpha.views.iter_mut().flatten() {
        *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale;
    }
    alpha
}
