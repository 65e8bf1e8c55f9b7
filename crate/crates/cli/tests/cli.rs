use num_complex::Complex64;
use pdf_isp::config::ImagingConfig;
use pdf_isp::forward::{
    build_greens_with_k0, incident_fields_with_k0, line_source, solve_total_field, synthesize_scattered,
    KrylovSettings,
};
use pdf_isp::geometry::GridGeometry;
use pdf_isp::io::{foam_diel_target, write_fresnel, FresnelOptions, FresnelRecord};
use pdf_isp::scene::rasterize_coverage;
use std::path::Path;
use std::process::{Command, Output};

fn pdf_isp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdf-isp")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"m1": 24, "m2": 24, "n_tx": 12, "n_rx": 12, "k_iters": 15, "m_f": 4}"#;

fn small_config(dir: &Path) -> String {
    let p = dir.join("c.json");
    std::fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_then_reconstruct_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(dir.path());
    let sim = dir.path().join("sim");
    let o = pdf_isp(&["simulate", "--config", &c, "--scene", "case2", "--out", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec = dir.path().join("rec");
    let o = pdf_isp(&[
        "reconstruct",
        "--config",
        &c,
        "--data",
        sim.join("data.emsca").to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["chi.grid", "eps_r.pgm", "trace.csv", "metrics.json", "manifest.json"] {
        assert!(rec.join(f).exists(), "missing {f}");
    }
    let trace = std::fs::read_to_string(rec.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 15 + 1);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(rec.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["invocation"]["command"], "reconstruct");
    assert!(manifest["outputs"]["chi.grid"].is_string());
    assert_eq!(manifest["excluded"][0], "timing.json");

    let img = dir.path().join("img.pgm");
    let o = pdf_isp(&["render", "--grid", rec.join("chi.grid").to_str().unwrap(), "--out", img.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = std::fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P5\n24 24\n255\n"));
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let o = pdf_isp(&["reconstruct", "--data", "x.emsca", "--out", "r", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--frobnicate"));
    let o = pdf_isp(&["reconstruct", "--out", "r"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data"));
    let o = pdf_isp(&["simulate", "--seed", "minus-one", "--out", "r"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));
    let o = pdf_isp(&["teleport"]);
    assert_eq!(o.status.code(), Some(1));
    for sub in ["simulate", "reconstruct", "study", "fresnel", "render", "replay"] {
        let o = pdf_isp(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub} --help");
    }
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.emsca");
    let o = pdf_isp(&["reconstruct", "--data", missing.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"m1": 0}"#).unwrap();
    let o = pdf_isp(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_changes_noise_and_nothing_else_does() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = pdf_isp(&["simulate", "--config", &c, "--snr", "5", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("data.emsca")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c2 = run("c", "2");
    assert_eq!(a, b);
    assert_ne!(a, c2);
}

/// Writes a measurement file for the nominal foam target, simulated with the
/// forward model on the Fresnel rail geometry, with every transmitter
/// scaled by an unknown complex gain.
fn synthetic_fresnel(path: &Path) {
    let freq_ghz = 2.0;
    let k0 = 2.0 * std::f64::consts::PI * freq_ghz * 1e9 / pdf_isp::config::C0;
    let radius = 1.67;
    let at = |deg: f64| [radius * deg.to_radians().cos(), radius * deg.to_radians().sin()];
    let tx: Vec<[f64; 2]> = (0..8).map(|t| at(45.0 * t as f64)).collect();
    let rx: Vec<[f64; 2]> = (0..72).map(|r| at(5.0 * r as f64)).collect();
    let grid = GridGeometry::new(48, 48, 0.2 / 48.0);
    let chi = rasterize_coverage(&foam_diel_target("FoamDielExt").unwrap(), &grid, 4).unwrap();
    let ops = build_greens_with_k0(k0, &rx, &grid).unwrap();
    let e_inc = incident_fields_with_k0(k0, &tx, &grid);
    let e_tot = solve_total_field(&chi, &e_inc, &ops, KrylovSettings::default()).unwrap();
    let sca = synthesize_scattered(&chi, &e_tot, &ops).unwrap();
    let mut recs = Vec::new();
    for (t, tp) in tx.iter().enumerate() {
        let gain = Complex64::from_polar(40.0 + 5.0 * t as f64, 0.3 * t as f64 - 1.0);
        for (r, rp) in rx.iter().enumerate() {
            // receivers within 60 degrees of the transmitter are not measured
            let sep = ((r as f64 * 5.0 - t as f64 * 45.0).rem_euclid(360.0)).min((t as f64 * 45.0 - r as f64 * 5.0).rem_euclid(360.0));
            if sep < 60.0 {
                continue;
            }
            let inc = line_source(k0, *tp, *rp) / gain;
            recs.push(FresnelRecord {
                tx: t + 1,
                rx: r + 1,
                freq_ghz,
                total: inc + sca.row(t)[r] / gain,
                incident: inc,
            });
        }
    }
    write_fresnel(path, &recs, &FresnelOptions::default()).unwrap();
}

#[test]
fn fresnel_subcommand_end_to_end_on_synthetic_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("FoamDielExt_synthetic.exp");
    synthetic_fresnel(&file);
    let cfg = ImagingConfig {
        doi_side: 0.2,
        m1: 32,
        m2: 32,
        k_iters: 40,
        ..ImagingConfig::default()
    };
    let c = dir.path().join("fresnel_config.json");
    std::fs::write(&c, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = pdf_isp(&["fresnel", "--file", file.to_str().unwrap(), "--config", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let info: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fresnel.json")).unwrap()).unwrap();
    assert_eq!(info["n_tx"], 8);
    assert_eq!(info["n_rx"], 72);
    assert_eq!(info["frequency_ghz"], 2.0);
    assert_eq!(info["target"], "foamdielext");
    let foam = info["foam_peak_eps"].as_f64().unwrap();
    let plastic = info["plastic_peak_eps"].as_f64().unwrap();
    println!("synthetic Fresnel: foam peak {foam:.3}, plastic peak {plastic:.3}");
    assert!(foam > 1.0 && plastic > 1.0);
    let o = pdf_isp(&["fresnel", "--file", file.to_str().unwrap(), "--freq", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("7"));
}
