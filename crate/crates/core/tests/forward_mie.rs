use num_complex::Complex64;
use pdf_isp::config::ImagingConfig;
use pdf_isp::forward::simulate;
use pdf_isp::geometry::build_array;
use pdf_isp::mie::cylinder_scattered_field;
use pdf_isp::scene::{Geometry, Scene, Shape};
use std::time::Instant;

#[test]
fn disk_matches_cylinder_series() {
    let t0 = Instant::now();
    let config = ImagingConfig::default();
    let array = build_array(&config).unwrap();
    let scene = Scene {
        name: "disk".into(),
        shapes: vec![Shape {
            geometry: Geometry::Disk { center: [0.0, 0.0], radius: 0.3 },
            eps_r: Complex64::new(2.0, 0.0),
        }],
    };
    let data = simulate(&config, &scene, &array).unwrap().data;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, tx) in array.tx.iter().enumerate() {
        let exact = cylinder_scattered_field(config.k0(), 0.3, 2.0, *tx, &array.rx);
        for (a, b) in data.row(i).iter().zip(&exact) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
    }
    let rel = (num / den).sqrt();
    let secs = t0.elapsed().as_secs_f64();
    println!("mie rel err {rel:.4e} in {secs:.2}s");
    assert!(rel < 0.01);
    assert!(secs < 5.0);
}
