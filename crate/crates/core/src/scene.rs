//! Parametric scenes and their rasterisation onto the imaging grid.
//!
//! A pixel belongs to a shape when its centre lies inside the shape. Shapes
//! are painted in order, so later shapes overwrite earlier ones.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridGeometry, Point};
use crate::grid::ComplexGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Disk { center: Point, radius: f64 },
    Annulus { center: Point, inner: f64, outer: f64 },
    Polygon { vertices: Vec<Point> },
}

impl Geometry {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Geometry::Disk { center, radius } => dist2(p, *center) <= radius * radius,
            Geometry::Annulus { center, inner, outer } => {
                let d2 = dist2(p, *center);
                d2 >= inner * inner && d2 <= outer * outer
            }
            Geometry::Polygon { vertices } => point_in_polygon(p, vertices),
        }
    }

    /// Exact area of the continuous shape.
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Geometry::Disk { radius, .. } => PI * radius * radius,
            Geometry::Annulus { inner, outer, .. } => PI * (outer * outer - inner * inner),
            Geometry::Polygon { vertices } => {
                let n = vertices.len();
                let twice: f64 = (0..n)
                    .map(|i| {
                        let a = vertices[i];
                        let b = vertices[(i + 1) % n];
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum();
                0.5 * twice.abs()
            }
        }
    }

    pub fn mirrored_x(&self) -> Geometry {
        let m = |p: &Point| [-p[0], p[1]];
        match self {
            Geometry::Disk { center, radius } => Geometry::Disk {
                center: m(center),
                radius: *radius,
            },
            Geometry::Annulus { center, inner, outer } => Geometry::Annulus {
                center: m(center),
                inner: *inner,
                outer: *outer,
            },
            Geometry::Polygon { vertices } => Geometry::Polygon {
                vertices: vertices.iter().map(m).collect(),
            },
        }
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Even-odd crossing test.
fn point_in_polygon(p: Point, vertices: &[Point]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    #[serde(flatten)]
    pub geometry: Geometry,
    /// Complex relative permittivity.
    pub eps_r: Complex64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub name: String,
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (index, s) in self.shapes.iter().enumerate() {
            if !(s.eps_r.re >= 1.0) {
                return Err(Error::NonphysicalScene { index, re: s.eps_r.re });
            }
        }
        Ok(())
    }

    pub fn mirrored_x(&self) -> Scene {
        Scene {
            name: format!("{} (mirrored)", self.name),
            shapes: self
                .shapes
                .iter()
                .map(|s| Shape {
                    geometry: s.geometry.mirrored_x(),
                    eps_r: s.eps_r,
                })
                .collect(),
        }
    }

    /// Same scene with every shape's permittivity replaced.
    pub fn with_eps_r(&self, eps_r: Complex64) -> Scene {
        Scene {
            name: self.name.clone(),
            shapes: self
                .shapes
                .iter()
                .map(|s| Shape {
                    geometry: s.geometry.clone(),
                    eps_r,
                })
                .collect(),
        }
    }
}

/// Contrast `χ = ε_r − 1` of the scene on the grid.
pub fn rasterize(scene: &Scene, grid: &GridGeometry) -> Result<ComplexGrid> {
    scene.validate()?;
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    for shape in &scene.shapes {
        let chi = shape.eps_r - 1.0;
        for (v, &p) in values.iter_mut().zip(&grid.centers) {
            if shape.geometry.contains(p) {
                *v = chi;
            }
        }
    }
    ComplexGrid::new(grid.m1, grid.m2, grid.cell_size, values)
}

/// Contrast averaged over `samples × samples` sub-points per cell, each
/// sub-point taking the topmost shape that contains it. Used to build the
/// object the forward simulator sees; `samples = 1` equals [`rasterize`].
pub fn rasterize_coverage(scene: &Scene, grid: &GridGeometry, samples: usize) -> Result<ComplexGrid> {
    if samples <= 1 {
        return rasterize(scene, grid);
    }
    scene.validate()?;
    let d = grid.cell_size;
    let offsets: Vec<f64> = (0..samples)
        .map(|k| ((k as f64 + 0.5) / samples as f64 - 0.5) * d)
        .collect();
    let weight = 1.0 / (samples * samples) as f64;
    let values = grid
        .centers
        .iter()
        .map(|c| {
            let mut acc = Complex64::new(0.0, 0.0);
            for oy in &offsets {
                for ox in &offsets {
                    let p = [c[0] + ox, c[1] + oy];
                    if let Some(shape) = scene.shapes.iter().rev().find(|s| s.geometry.contains(p)) {
                        acc += shape.eps_r - 1.0;
                    }
                }
            }
            acc * weight
        })
        .collect();
    ComplexGrid::new(grid.m1, grid.m2, grid.cell_size, values)
}

/// Two equal disks above an annulus. All lengths scale linearly with `scale`
/// (metres at `scale = 1`).
pub fn austria_preset(eps_r: Complex64, scale: f64) -> Scene {
    let s = scale;
    let disk = |x: f64| Shape {
        geometry: Geometry::Disk {
            center: [x * s, 0.6 * s],
            radius: 0.2 * s,
        },
        eps_r,
    };
    Scene {
        name: "austria".into(),
        shapes: vec![
            disk(-0.3),
            disk(0.3),
            Shape {
                geometry: Geometry::Annulus {
                    center: [0.0, -0.2 * s],
                    inner: 0.3 * s,
                    outer: 0.6 * s,
                },
                eps_r,
            },
        ],
    }
}

/// Largest Austria scale whose extent (±0.8 s) leaves one cell of margin.
pub fn austria_fit_scale(doi_side: f64, cell_size: f64) -> f64 {
    (0.5 * doi_side - cell_size) / 0.8
}

/// Names accepted by [`complex_preset`].
pub const COMPLEX_PRESETS: [&str; 4] = ["case1", "case2", "case3", "case4"];

/// Four harder targets: a sharp-edged polygon pair, overlapping
/// high-contrast cylinders, a concave target, and a mixed scene. Geometries
/// are sized for a 1.5 m domain and are illustrative, not reference layouts.
pub fn complex_preset(name: &str) -> Option<Scene> {
    let c = Complex64::new;
    let shapes = match name {
        "case1" => vec![
            Shape {
                geometry: Geometry::Polygon {
                    vertices: vec![[-0.55, -0.45], [-0.05, -0.45], [-0.05, 0.05], [-0.55, 0.05]],
                },
                eps_r: c(3.0, 0.0),
            },
            Shape {
                geometry: Geometry::Polygon {
                    vertices: vec![[0.1, 0.1], [0.55, 0.1], [0.325, 0.5]],
                },
                eps_r: c(3.0, 0.0),
            },
        ],
        "case2" => vec![
            Shape {
                geometry: Geometry::Disk {
                    center: [-0.12, 0.0],
                    radius: 0.25,
                },
                eps_r: c(4.0, 0.0),
            },
            Shape {
                geometry: Geometry::Disk {
                    center: [0.18, 0.05],
                    radius: 0.2,
                },
                eps_r: c(6.0, 0.0),
            },
        ],
        "case3" => vec![Shape {
            geometry: Geometry::Polygon {
                vertices: vec![
                    [-0.5, -0.5],
                    [0.5, -0.5],
                    [0.5, 0.5],
                    [0.2, 0.5],
                    [0.2, -0.2],
                    [-0.2, -0.2],
                    [-0.2, 0.5],
                    [-0.5, 0.5],
                ],
            },
            eps_r: c(2.5, 0.0),
        }],
        "case4" => vec![
            Shape {
                geometry: Geometry::Annulus {
                    center: [-0.3, 0.25],
                    inner: 0.1,
                    outer: 0.25,
                },
                eps_r: c(3.0, 0.0),
            },
            Shape {
                geometry: Geometry::Polygon {
                    vertices: vec![[0.1, -0.55], [0.55, -0.55], [0.55, -0.1], [0.1, -0.1]],
                },
                eps_r: c(2.0, 0.0),
            },
            Shape {
                geometry: Geometry::Disk {
                    center: [0.35, 0.35],
                    radius: 0.15,
                },
                eps_r: c(5.0, 0.0),
            },
        ],
        _ => return None,
    };
    Some(Scene {
        name: name.into(),
        shapes,
    })
}
