use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use pdf_isp::bench::{
    noise_rng, run_ablation, run_monte_carlo, run_noise_study, run_sweep, CellRecord, SceneSpec, StudyKind,
    StudySpec, COMPONENT_THRESHOLD,
};
use pdf_isp::config::ImagingConfig;
use pdf_isp::forward::{add_awgn, simulate};
use pdf_isp::geometry::build_array;
use pdf_isp::grid::ComplexGrid;
use pdf_isp::io::{
    foam_diel_target, load_dataset, load_fresnel, load_grid, load_grid_expecting, region_peaks, render_pgm,
    save_dataset, save_grid, Dataset, FresnelOptions,
};
use pdf_isp::loss::LossBreakdown;
use pdf_isp::scene::{Scene, COMPLEX_PRESETS};
use pdf_isp::solver::{count_components, ReconstructionResult, Reconstructor};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::manifest::{self, Manifest};
use crate::{Command, FresnelArgs, ReconstructArgs, RenderArgs, ReplayArgs, SimulateArgs, StudyArgs};

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Study(a) => study_cmd(a),
        Command::Fresnel(a) => fresnel_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn load_config(path: Option<&Path>) -> Result<ImagingConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => ImagingConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn max_re(g: &ComplexGrid) -> f64 {
    g.values().iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
}

fn min_re(g: &ComplexGrid) -> f64 {
    g.values().iter().map(|v| v.re).fold(f64::INFINITY, f64::min)
}

fn render_eps(path: &Path, eps: &ComplexGrid) -> Result<()> {
    let vmax = max_re(eps);
    render_pgm(path, eps, 1.0, if vmax > 1.0 { vmax } else { 2.0 })?;
    Ok(())
}

fn scene_spec(name: &str, eps_r: Option<f64>) -> Result<(SceneSpec, Option<PathBuf>)> {
    if name == "austria" {
        return Ok((
            SceneSpec::Austria {
                eps_r: eps_r.unwrap_or(2.0),
            },
            None,
        ));
    }
    if COMPLEX_PRESETS.contains(&name) {
        return Ok((SceneSpec::Preset { name: name.into() }, None));
    }
    let path = absolute(Path::new(name))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading scene {name}"))?;
    let scene: Scene = serde_json::from_str(&text).with_context(|| format!("parsing scene {name}"))?;
    Ok((SceneSpec::Custom { scene }, Some(path)))
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let mut rec = a.clone();
    rec.config = a.config.as_deref().map(absolute).transpose()?;
    rec.out = absolute(&a.out)?;
    let mut cfg = load_config(rec.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    let (spec, scene_file) = scene_spec(&a.scene, a.eps_r)?;
    if let Some(p) = &scene_file {
        rec.scene = p.to_string_lossy().into_owned();
    }
    let override_eps = match spec {
        SceneSpec::Austria { .. } => None,
        _ => a.eps_r,
    };
    let scene = spec.build(&cfg, override_eps)?;
    let array = build_array(&cfg)?;
    let sim = simulate(&cfg, &scene, &array)?;
    let data = match a.snr {
        Some(snr) => add_awgn(&sim.data, snr, &mut noise_rng(cfg.rng_seed, 1)),
        None => sim.data,
    };
    let out = &rec.out;
    create_dir(out)?;
    let hash = cfg.hash();
    save_dataset(
        &out.join("data.emsca"),
        &Dataset {
            frequency: cfg.frequency,
            array,
            data,
            config_hash: hash.clone(),
        },
    )?;
    save_grid(&out.join("truth.grid"), &sim.chi, &hash)?;
    render_eps(&out.join("truth.pgm"), &sim.chi.to_permittivity())?;
    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("scene.json"), &scene)?;
    write_json(
        &out.join("simulation.json"),
        &serde_json::json!({ "max_forward_residual": sim.max_residual, "snr_db": a.snr }),
    )?;
    let inputs: Vec<&Path> = rec.config.iter().chain(scene_file.iter()).map(|p| p.as_path()).collect();
    Manifest::new(&Command::Simulate(rec.clone()), Some(cfg.rng_seed), Some(hash), &inputs)?.finish(out)?;
    println!("simulated {} ({}x{} data) into {}", scene.name, cfg.n_tx, cfg.n_rx, out.display());
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    config_hash: String,
    seed: u64,
    iterations: usize,
    eps_reg: f64,
    final_loss: LossBreakdown,
    relative_error: Option<f64>,
    components: usize,
    peak_eps: f64,
    min_eps: f64,
    below_one: usize,
    degenerate_pixels: usize,
}

fn write_result(out: &Path, cfg: &ImagingConfig, result: &ReconstructionResult, trace: bool) -> Result<Metrics> {
    create_dir(out)?;
    let hash = cfg.hash();
    save_grid(&out.join("chi.grid"), &result.chi_cco, &hash)?;
    save_grid(&out.join("chi_hat.grid"), &result.chi_hat, &hash)?;
    render_eps(&out.join("eps_r.pgm"), &result.eps_r_map)?;
    let mut w = csv::Writer::from_path(out.join("trace.csv"))?;
    w.write_record(["iteration", "total", "state", "data", "bound", "tv", "bridge"])?;
    let rows = result.trace.iter().enumerate().map(|(k, l)| (k.to_string(), l));
    for (k, l) in rows.chain(std::iter::once(("final".to_string(), &result.final_loss))) {
        if trace {
            eprintln!(
                "iter {k:>5}  total {:.6e}  state {:.4e}  data {:.4e}  bound {:.3e}  tv {:.3e}  bridge {:.3e}",
                l.total, l.state, l.data, l.bound, l.tv, l.bridge
            );
        }
        w.write_record([
            k,
            format!("{:?}", l.total),
            format!("{:?}", l.state),
            format!("{:?}", l.data),
            format!("{:?}", l.bound),
            format!("{:?}", l.tv),
            format!("{:?}", l.bridge),
        ])?;
    }
    w.flush()?;
    let eps = &result.eps_r_map;
    let metrics = Metrics {
        config_hash: hash,
        seed: cfg.rng_seed,
        iterations: result.trace.len(),
        eps_reg: result.eps_reg,
        final_loss: result.final_loss,
        relative_error: result.relative_error,
        components: count_components(eps, COMPONENT_THRESHOLD),
        peak_eps: max_re(eps),
        min_eps: min_re(eps),
        below_one: eps.values().iter().filter(|v| v.re < 1.0).count(),
        degenerate_pixels: result.degenerate_pixels.len(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(&out.join("timing.json"), &serde_json::json!({ "wall_time_s": result.wall_time }))?;
    Ok(metrics)
}

fn reconstruct_cmd(a: &ReconstructArgs) -> Result<()> {
    let mut rec = a.clone();
    rec.config = a.config.as_deref().map(absolute).transpose()?;
    rec.data = absolute(&a.data)?;
    rec.truth = a.truth.as_deref().map(absolute).transpose()?;
    rec.out = absolute(&a.out)?;
    let ds = load_dataset(&rec.data).with_context(|| format!("loading {}", a.data.display()))?;
    let mut cfg = load_config(rec.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if cfg.frequency != ds.frequency {
        log::warn!("using the dataset frequency {} Hz instead of the config's {} Hz", ds.frequency, cfg.frequency);
        cfg.frequency = ds.frequency;
    }
    cfg.n_tx = ds.array.tx.len();
    cfg.n_rx = ds.array.rx.len();
    cfg.validate()?;
    let truth = match &rec.truth {
        Some(p) => Some(load_grid_expecting(p, cfg.m1, cfg.m2)?.0),
        None => None,
    };
    let mut result = Reconstructor::new(&cfg, &ds.array)?.run(&ds.data)?;
    if let Some(t) = &truth {
        result = result.with_truth(t);
    }
    let m = write_result(&rec.out, &cfg, &result, a.trace)?;
    let inputs: Vec<&Path> = rec
        .config
        .iter()
        .chain(std::iter::once(&rec.data))
        .chain(rec.truth.iter())
        .map(|p| p.as_path())
        .collect();
    Manifest::new(&Command::Reconstruct(rec.clone()), Some(cfg.rng_seed), Some(m.config_hash.clone()), &inputs)?
        .finish(&rec.out)?;
    print!("reconstructed in {:.2} s: loss {:.4e}", result.wall_time, m.final_loss.total);
    if let Some(e) = m.relative_error {
        print!(", relative error {e:.4}");
    }
    println!(", {} components, peak eps_r {:.3}", m.components, m.peak_eps);
    Ok(())
}

fn summarize(records: &[CellRecord]) {
    for r in records {
        let labels: Vec<String> = r.labels.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match (&r.metrics, &r.error) {
            (Some(m), _) => println!(
                "{:<40} rel {:.4}  comps {}  peak {:.3}  ({:.1} s)",
                labels.join(" "),
                m.rel_error,
                m.components,
                m.peak_eps,
                r.wall_time
            ),
            (None, e) => println!("{:<40} failed: {}", labels.join(" "), e.as_deref().unwrap_or("?")),
        }
    }
}

fn study_cmd(a: &StudyArgs) -> Result<()> {
    let mut rec = a.clone();
    rec.spec = absolute(&a.spec)?;
    rec.out = absolute(&a.out)?;
    let text = fs::read_to_string(&rec.spec).with_context(|| format!("reading spec {}", a.spec.display()))?;
    let mut spec: StudySpec = serde_json::from_str(&text).with_context(|| format!("parsing spec {}", a.spec.display()))?;
    if let Some(s) = a.seed {
        spec.seeds = vec![s];
    }
    if a.full {
        spec.n_realizations = 100;
    }
    spec.validate()?;
    let out = &rec.out;
    create_dir(out)?;
    write_json(&out.join("spec.json"), &spec)?;
    match spec.kind {
        StudyKind::Sweep => summarize(&run_sweep(&spec, Some(out))?),
        StudyKind::Noise => summarize(&run_noise_study(&spec, Some(out))?),
        StudyKind::Ablation => {
            let pairs = run_ablation(&spec, Some(out))?;
            let mut w = csv::Writer::from_path(out.join("ablation_pairs.csv"))?;
            w.write_record([
                "toggle",
                "cell",
                "rel_full",
                "rel_ablated",
                "peak_full",
                "peak_ablated",
                "below_one_full",
                "below_one_ablated",
                "gap_full",
                "gap_ablated",
            ])?;
            for p in &pairs {
                let cell: Vec<String> = p.full.labels[1..].iter().map(|(k, v)| format!("{k}={v}")).collect();
                let mut row = vec![format!("{:?}", p.ablation).to_lowercase(), cell.join(" ")];
                match (&p.full.metrics, &p.ablated.metrics) {
                    (Some(f), Some(x)) => row.extend([
                        format!("{:?}", f.rel_error),
                        format!("{:?}", x.rel_error),
                        format!("{:?}", f.peak_eps),
                        format!("{:?}", x.peak_eps),
                        f.below_one.to_string(),
                        x.below_one.to_string(),
                        f.gap_spurious.to_string(),
                        x.gap_spurious.to_string(),
                    ]),
                    _ => row.extend(std::iter::repeat_n("failed".to_string(), 8)),
                }
                w.write_record(&row)?;
            }
            w.flush()?;
            let mut all: Vec<CellRecord> = Vec::new();
            for p in &pairs {
                if !all.contains(&p.full) {
                    all.push(p.full.clone());
                }
                all.push(p.ablated.clone());
            }
            summarize(&all);
        }
        StudyKind::MonteCarlo => {
            for s in run_monte_carlo(&spec, Some(out))? {
                match s.stats {
                    Some(b) => println!(
                        "sigma {:.1} mm: median {:.4}  spread {:.4}  ({} ok, {} failed)",
                        s.sigma * 1e3,
                        b.median,
                        b.spread(),
                        s.errors.len(),
                        s.failures.len()
                    ),
                    None => println!("sigma {:.1} mm: every realization failed", s.sigma * 1e3),
                }
            }
        }
    }
    let seed = spec.seeds.first().copied().unwrap_or(spec.base.rng_seed);
    Manifest::new(&Command::Study(rec.clone()), Some(seed), Some(spec.base.hash()), &[rec.spec.as_path()])?
        .finish(out)?;
    Ok(())
}

fn infer_target(file: &Path) -> Option<String> {
    let stem = file.file_stem()?.to_string_lossy().to_ascii_lowercase();
    ["foamdielext", "foamdielint"].into_iter().find(|t| stem.contains(t)).map(String::from)
}

fn fresnel_cmd(a: &FresnelArgs) -> Result<()> {
    let mut rec = a.clone();
    rec.file = absolute(&a.file)?;
    rec.config = a.config.as_deref().map(absolute).transpose()?;
    rec.out = absolute(&a.out)?;
    let opts = FresnelOptions {
        frequency_ghz: a.freq,
        tx_radius: a.tx_radius,
        rx_radius: a.rx_radius,
        tx_step_deg: a.tx_step,
        rx_step_deg: a.rx_step,
        conjugate: a.conjugate,
    };
    let ds = load_fresnel(&rec.file, &opts).with_context(|| format!("loading {}", a.file.display()))?;
    let base = match &rec.config {
        Some(_) => load_config(rec.config.as_deref())?,
        None => ImagingConfig {
            doi_side: 0.2,
            ..ImagingConfig::default()
        },
    };
    let mut cfg = base.with_frequency(ds.frequency_hz());
    cfg.ring_radius = ds.tx_radius;
    cfg.n_tx = ds.array.tx.len();
    cfg.n_rx = ds.array.rx.len();
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    let result = Reconstructor::new(&cfg, &ds.array)?.run(&ds.data)?;
    let m = write_result(&rec.out, &cfg, &result, a.trace)?;
    let target = a.target.clone().or_else(|| infer_target(&a.file));
    let peaks = match target.as_deref().map(|t| (t, foam_diel_target(t))) {
        Some((_, Some(scene))) => Some(region_peaks(&result.eps_r_map, &scene)),
        Some((t, None)) => bail!("unknown target `{t}` (expected FoamDielExt or FoamDielInt)"),
        None => None,
    };
    let measured = ds.data.mask.as_ref().map_or(ds.data.matrix.len(), |m| m.iter().filter(|x| **x).count());
    let calibration: Vec<[f64; 2]> = ds.calibration.iter().map(|c: &Complex64| [c.re, c.im]).collect();
    write_json(
        &rec.out.join("fresnel.json"),
        &serde_json::json!({
            "frequency_ghz": ds.frequency_ghz,
            "frequencies_ghz": ds.frequencies,
            "n_tx": ds.tx_indices.len(),
            "n_rx": ds.rx_indices.len(),
            "measured_pairs": measured,
            "calibration": calibration,
            "target": target,
            "foam_peak_eps": peaks.as_ref().and_then(|p| p[0]),
            "plastic_peak_eps": peaks.as_ref().and_then(|p| p[1]),
        }),
    )?;
    let inputs: Vec<&Path> = std::iter::once(&rec.file).chain(rec.config.iter()).map(|p| p.as_path()).collect();
    Manifest::new(&Command::Fresnel(rec.clone()), Some(cfg.rng_seed), Some(m.config_hash.clone()), &inputs)?
        .finish(&rec.out)?;
    println!(
        "inverted {} Tx x {} Rx at {} GHz in {:.2} s: peak eps_r {:.3}",
        ds.tx_indices.len(),
        ds.rx_indices.len(),
        ds.frequency_ghz,
        result.wall_time,
        m.peak_eps
    );
    if let Some(p) = peaks {
        println!("region peaks: foam {:?}, plastic {:?}", p[0], p[1]);
    }
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let mut rec = a.clone();
    rec.grid = absolute(&a.grid)?;
    rec.out = absolute(&a.out)?;
    let (grid, header) = load_grid(&rec.grid).with_context(|| format!("loading {}", a.grid.display()))?;
    let map = if a.contrast { grid } else { grid.to_permittivity() };
    let vmin = a.vmin.unwrap_or(if a.contrast { 0.0 } else { 1.0 });
    let vmax = a.vmax.unwrap_or_else(|| {
        let m = max_re(&map);
        if m > vmin {
            m
        } else {
            vmin + 1.0
        }
    });
    if let Some(dir) = rec.out.parent() {
        create_dir(dir)?;
    }
    render_pgm(&rec.out, &map, vmin, vmax)?;
    Manifest::new(&Command::Render(rec.clone()), None, Some(header.config_hash), &[rec.grid.as_path()])?
        .finish_file(&rec.out)?;
    Ok(())
}

fn replay_cmd(a: &ReplayArgs) -> Result<()> {
    let original = Manifest::load(&a.manifest)?;
    original.check_inputs()?;
    let out = absolute(&a.out)?;
    let mut cmd = original.invocation.clone();
    match &mut cmd {
        Command::Simulate(x) => x.out = out.clone(),
        Command::Reconstruct(x) => x.out = out.clone(),
        Command::Study(x) => x.out = out.clone(),
        Command::Fresnel(x) => x.out = out.clone(),
        Command::Render(x) => x.out = out.clone(),
        Command::Replay(_) => bail!("a replay manifest cannot be replayed"),
    }
    run(&cmd)?;
    let replayed = match cmd {
        Command::Render(_) => Manifest::load(&manifest::sidecar(&out))?,
        _ => Manifest::load(&out.join(manifest::FILE_NAME))?,
    };
    let diff = manifest::differences(&original, &replayed);
    if !diff.is_empty() {
        bail!("replay differs from the manifest in: {}", diff.join(", "));
    }
    println!("replay reproduced {} output files bit-exactly", original.outputs.len());
    Ok(())
}
