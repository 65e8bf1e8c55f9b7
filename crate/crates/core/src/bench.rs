//! Scripted studies: parameter sweeps, the noise grid, paired ablations and
//! the antenna-position Monte Carlo.
//!
//! A study expands into cells. Each cell simulates its own data, runs one
//! reconstruction and reports metrics against its ground truth. Cells are
//! keyed by a hash of everything that determines them, so an interrupted
//! study resumes from the per-cell cache without recomputing finished cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::config::{hex_digest, ImagingConfig};
use crate::error::{Error, Result};
use crate::forward::{add_awgn, simulate};
use crate::geometry::{build_array, perturb_array};
use crate::grid::ComplexGrid;
use crate::loss::LossBreakdown;
use crate::scene::{austria_fit_scale, austria_preset, complex_preset, Scene};
use crate::solver::{count_components, label_components, Reconstructor, ReconstructionResult};

/// Threshold on `Re ε_r` for component counts and spurious-pixel counts.
pub const COMPONENT_THRESHOLD: f64 = 1.5;
/// Dilation radius (cells, Chebyshev) used to build the inter-object gap mask.
pub const GAP_RADIUS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSpec {
    Austria {
        #[serde(default = "default_eps")]
        eps_r: f64,
    },
    Preset {
        name: String,
    },
    Custom {
        scene: Scene,
    },
}

fn default_eps() -> f64 {
    2.0
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Austria { eps_r: 2.0 }
    }
}

impl SceneSpec {
    /// The scene for `config`, with every permittivity replaced by
    /// `eps_override` when given.
    pub fn build(&self, config: &ImagingConfig, eps_override: Option<f64>) -> Result<Scene> {
        let scene = match self {
            SceneSpec::Austria { eps_r } => austria_preset(
                num_complex::Complex64::new(eps_override.unwrap_or(*eps_r), 0.0),
                austria_fit_scale(config.doi_side, config.cell_size()),
            ),
            SceneSpec::Preset { name } => {
                complex_preset(name).ok_or_else(|| Error::InvalidConfig(format!("unknown scene preset `{name}`")))?
            }
            SceneSpec::Custom { scene } => scene.clone(),
        };
        let scene = match (self, eps_override) {
            (SceneSpec::Austria { .. }, _) | (_, None) => scene,
            (_, Some(e)) => scene.with_eps_r(num_complex::Complex64::new(e, 0.0)),
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    #[default]
    Sweep,
    Noise,
    Ablation,
    MonteCarlo,
}

/// One switch of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoCco,
    NoBridge,
    NoBound,
    NoTv,
}

impl Ablation {
    pub const STANDARD: [Ablation; 4] = [Ablation::NoCco, Ablation::NoBridge, Ablation::NoBound, Ablation::NoTv];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoCco => "no_cco",
            Ablation::NoBridge => "no_bridge",
            Ablation::NoBound => "no_bound",
            Ablation::NoTv => "no_tv",
        }
    }

    pub fn apply(self, config: &ImagingConfig) -> ImagingConfig {
        let mut c = config.clone();
        match self {
            Ablation::None => {}
            Ablation::NoCco => c.options.apply_cco = false,
            Ablation::NoBridge => c.lambda3 = 0.0,
            Ablation::NoBound => c.lambda1 = 0.0,
            Ablation::NoTv => c.lambda2 = 0.0,
        }
        c
    }
}

/// Axis values in JSON may be numbers or the string `"inf"` (noise-free).
mod axis_values {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let out: Vec<Value> = values
            .iter()
            .map(|v| if v.is_infinite() { Value::Text("inf".into()) } else { Value::Num(*v) })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Num(x) => Ok(x),
                Value::Text(t) if t.eq_ignore_ascii_case("inf") => Ok(f64::INFINITY),
                Value::Text(t) => Err(serde::de::Error::custom(format!("axis value `{t}` is not a number"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    /// One of `k_iters`, `beta`, `m_f`, `learn_rate`, `lambda1`, `lambda2`,
    /// `lambda3`, `tau_b`, `eps_r`, `snr_db`, `seed`.
    pub name: String,
    #[serde(with = "axis_values")]
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            values: values.to_vec(),
        }
    }
}

const AXIS_NAMES: [&str; 11] = [
    "k_iters",
    "beta",
    "m_f",
    "learn_rate",
    "lambda1",
    "lambda2",
    "lambda3",
    "tau_b",
    "eps_r",
    "snr_db",
    "seed",
];

fn default_realizations() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub kind: StudyKind,
    #[serde(default)]
    pub base: ImagingConfig,
    #[serde(default)]
    pub scene: SceneSpec,
    /// Cartesian product in listed order, last axis varying fastest.
    #[serde(default)]
    pub axes: Vec<Axis>,
    /// Monte Carlo realizations per standard deviation.
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    /// Seeds for network initialisation and noise; one cell per seed. Empty
    /// means the base config's seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Switches compared against the full solver. Empty means all four.
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    /// Antenna position standard deviations in metres.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// Noise level applied to every cell unless an `snr_db` axis overrides it.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            name: String::new(),
            kind: StudyKind::Sweep,
            base: ImagingConfig::default(),
            scene: SceneSpec::default(),
            axes: Vec::new(),
            n_realizations: default_realizations(),
            seeds: Vec::new(),
            ablations: Vec::new(),
            sigmas: Vec::new(),
            snr_db: None,
        }
    }
}

/// A fully resolved study cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlan {
    pub index: usize,
    pub key: String,
    /// `(name, value)` pairs that identify the cell in tables.
    pub labels: Vec<(String, String)>,
    pub config: ImagingConfig,
    pub scene: Scene,
    pub snr_db: Option<f64>,
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn integral(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidConfig(format!("axis `{name}` needs non-negative integers, got {v}")))
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::InvalidConfig("n_realizations must be >= 1".into()));
        }
        for axis in &self.axes {
            if !AXIS_NAMES.contains(&axis.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown axis `{}` (expected one of {})",
                    axis.name,
                    AXIS_NAMES.join(", ")
                )));
            }
            if axis.values.is_empty() {
                return Err(Error::InvalidConfig(format!("axis `{}` has no values", axis.name)));
            }
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("sigmas must be finite and >= 0".into()));
        }
        self.plan().map(|_| ())
    }

    fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.base.rng_seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Expands the axes (plus one implicit seed axis when several seeds are
    /// listed) into cells.
    pub fn plan(&self) -> Result<Vec<CellPlan>> {
        let mut axes = self.axes.clone();
        if self.seeds.len() > 1 && !axes.iter().any(|a| a.name == "seed") {
            let seeds: Vec<f64> = self.seeds.iter().map(|s| *s as f64).collect();
            axes.push(Axis::new("seed", &seeds));
        }
        let total: usize = axes.iter().map(|a| a.values.len()).product();
        let mut plans = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut picks = vec![0.0; axes.len()];
            for (slot, axis) in axes.iter().enumerate().rev() {
                picks[slot] = axis.values[rem % axis.values.len()];
                rem /= axis.values.len();
            }
            let mut config = self.base.clone();
            config.rng_seed = self.seeds()[0];
            let mut eps = None;
            let mut snr = self.snr_db;
            let mut labels = Vec::with_capacity(axes.len());
            for (axis, &v) in axes.iter().zip(&picks) {
                match axis.name.as_str() {
                    "k_iters" => config.k_iters = integral(&axis.name, v)?,
                    "beta" => config.beta = v,
                    "m_f" => config.m_f = integral(&axis.name, v)?,
                    "learn_rate" => config.learn_rate = v,
                    "lambda1" => config.lambda1 = v,
                    "lambda2" => config.lambda2 = v,
                    "lambda3" => config.lambda3 = v,
                    "tau_b" => config.tau_b = v,
                    "eps_r" => eps = Some(v),
                    "snr_db" => snr = if v.is_infinite() { None } else { Some(v) },
                    "seed" => config.rng_seed = integral(&axis.name, v)? as u64,
                    other => return Err(Error::InvalidConfig(format!("unknown axis `{other}`"))),
                }
                labels.push((axis.name.clone(), format_value(v)));
            }
            config.validate()?;
            let scene = self.scene.build(&config, eps)?;
            plans.push(CellPlan {
                index,
                key: cell_key(&config, &scene, snr, ""),
                labels,
                config,
                scene,
                snr_db: snr,
            });
        }
        Ok(plans)
    }
}

fn cell_key(config: &ImagingConfig, scene: &Scene, snr: Option<f64>, tag: &str) -> String {
    let text = serde_json::json!({
        "config": config,
        "scene": scene,
        "snr_db": snr.map(format_value),
        "tag": tag,
    })
    .to_string();
    hex_digest(text.as_bytes())[..16].to_string()
}

/// Per-cell figures of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub rel_error: f64,
    pub components: usize,
    pub peak_eps: f64,
    pub min_eps: f64,
    /// Pixels with `Re ε̂_r < 1`.
    pub below_one: usize,
    /// Pixels with `Re ε̂_r < 0.5`.
    pub below_half: usize,
    /// Above-threshold pixels inside the inter-object gap mask.
    pub gap_spurious: usize,
    pub final_loss: LossBreakdown,
}

impl CellMetrics {
    pub fn from_result(result: &ReconstructionResult, chi_true: &ComplexGrid) -> Self {
        let eps = &result.eps_r_map;
        let re: Vec<f64> = eps.values().iter().map(|v| v.re).collect();
        let mask = gap_mask(chi_true, GAP_RADIUS);
        Self {
            rel_error: crate::solver::relative_error(eps, &chi_true.to_permittivity()),
            components: count_components(eps, COMPONENT_THRESHOLD),
            peak_eps: re.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_eps: re.iter().copied().fold(f64::INFINITY, f64::min),
            below_one: re.iter().filter(|v| **v < 1.0).count(),
            below_half: re.iter().filter(|v| **v < 0.5).count(),
            gap_spurious: mask.iter().zip(&re).filter(|(m, v)| **m && **v > COMPONENT_THRESHOLD).count(),
            final_loss: result.final_loss,
        }
    }
}

/// Background pixels within `radius` cells (Chebyshev) of at least two
/// distinct ground-truth objects.
pub fn gap_mask(chi_true: &ComplexGrid, radius: usize) -> Vec<bool> {
    let (m1, m2) = (chi_true.m1(), chi_true.m2());
    let support: Vec<bool> = chi_true.values().iter().map(|v| v.norm() > 0.0).collect();
    let (labels, _) = label_components(&support, m1, m2);
    let r = radius as isize;
    let mut mask = vec![false; support.len()];
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            if support[k] {
                continue;
            }
            let mut first = 0;
            'scan: for di in -r..=r {
                for dj in -r..=r {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    if a < 0 || b < 0 || a >= m1 as isize || b >= m2 as isize {
                        continue;
                    }
                    let l = labels[a as usize * m2 + b as usize];
                    if l == 0 {
                        continue;
                    }
                    if first == 0 {
                        first = l;
                    } else if l != first {
                        mask[k] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    mask
}

/// Outcome of one cell; failures are kept rather than aborting the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub labels: Vec<(String, String)>,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
    /// Seconds; not part of the deterministic outputs.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Seeded generator for noise and perturbations; streams keep draws independent.
pub fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates, optionally adds noise, reconstructs and scores one cell.
pub fn run_cell(plan: &CellPlan) -> CellRecord {
    let start = Instant::now();
    let outcome = (|| -> Result<CellMetrics> {
        let array = build_array(&plan.config)?;
        let sim = simulate(&plan.config, &plan.scene, &array)?;
        let data = match plan.snr_db {
            Some(snr) => add_awgn(&sim.data, snr, &mut noise_rng(plan.config.rng_seed, 1)),
            None => sim.data,
        };
        let result = Reconstructor::new(&plan.config, &array)?.run(&data)?;
        Ok(CellMetrics::from_result(&result, &sim.chi))
    })();
    let (metrics, error) = match outcome {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellRecord {
        key: plan.key.clone(),
        labels: plan.labels.clone(),
        metrics,
        error,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

fn cached_or_run(plan: &CellPlan, cache: Option<&Path>) -> Result<CellRecord> {
    let Some(dir) = cache else {
        return Ok(run_cell(plan));
    };
    let path = dir.join(format!("{}.json", plan.key));
    let timing = dir.join(format!("{}.timing.json", plan.key));
    if path.exists() {
        let mut record: CellRecord = serde_json::from_slice(&fs::read(&path)?)?;
        record.labels = plan.labels.clone();
        record.wall_time = fs::read(&timing)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or(f64::NAN);
        return Ok(record);
    }
    let record = run_cell(plan);
    fs::write(&timing, serde_json::to_vec(&record.wall_time)?)?;
    // written last so a partial cell never looks complete
    let tmp = dir.join(format!("{}.json.tmp", plan.key));
    fs::write(&tmp, serde_json::to_vec_pretty(&record)?)?;
    fs::rename(&tmp, &path)?;
    Ok(record)
}

/// Runs every plan, in parallel, reusing cached cells under `out/cells`.
pub fn run_plans(plans: &[CellPlan], out: Option<&Path>) -> Result<Vec<CellRecord>> {
    let cache = match out {
        Some(dir) => {
            let c = dir.join("cells");
            fs::create_dir_all(&c)?;
            Some(c)
        }
        None => None,
    };
    plans.par_iter().map(|p| cached_or_run(p, cache.as_deref())).collect()
}

const METRIC_COLUMNS: [&str; 14] = [
    "status",
    "rel_error",
    "components",
    "peak_eps",
    "min_eps",
    "below_one",
    "below_half",
    "gap_spurious",
    "loss_total",
    "loss_state",
    "loss_data",
    "loss_bound",
    "loss_tv",
    "loss_bridge",
];

fn metric_fields(record: &CellRecord) -> Vec<String> {
    match (&record.metrics, &record.error) {
        (Some(m), _) => {
            let l = &m.final_loss;
            vec![
                "ok".into(),
                format!("{:?}", m.rel_error),
                m.components.to_string(),
                format!("{:?}", m.peak_eps),
                format!("{:?}", m.min_eps),
                m.below_one.to_string(),
                m.below_half.to_string(),
                m.gap_spurious.to_string(),
                format!("{:?}", l.total),
                format!("{:?}", l.state),
                format!("{:?}", l.data),
                format!("{:?}", l.bound),
                format!("{:?}", l.tv),
                format!("{:?}", l.bridge),
            ]
        }
        (None, e) => {
            let mut v = vec![format!("error: {}", e.as_deref().unwrap_or("unknown"))];
            v.resize(METRIC_COLUMNS.len(), String::new());
            v
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `<stem>.csv` (deterministic) and `<stem>.timing.csv`.
pub fn write_records(dir: &Path, stem: &str, records: &[CellRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let label_names: Vec<String> = records
        .first()
        .map(|r| r.labels.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv"))).map_err(csv_error)?;
    let mut header = vec!["key".to_string()];
    header.extend(label_names.iter().cloned());
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_error)?;
    for r in records {
        let mut row = vec![r.key.clone()];
        row.extend(r.labels.iter().map(|(_, v)| v.clone()));
        row.extend(metric_fields(r));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    let mut t = csv::Writer::from_path(dir.join(format!("{stem}.timing.csv"))).map_err(csv_error)?;
    t.write_record(["key", "wall_time_s"]).map_err(csv_error)?;
    for r in records {
        t.write_record([r.key.clone(), format!("{:.3}", r.wall_time)]).map_err(csv_error)?;
    }
    t.flush()?;
    Ok(())
}

/// Cartesian sweep; one row per cell in plan order.
pub fn run_sweep(spec: &StudySpec, out: Option<&Path>) -> Result<Vec<CellRecord>> {
    spec.validate()?;
    let records = run_plans(&spec.plan()?, out)?;
    if let Some(dir) = out {
        write_records(dir, "sweep", &records)?;
    }
    Ok(records)
}

pub const NOISE_LEVELS: [f64; 4] = [f64::INFINITY, 10.0, 5.0, 1.0];
pub const CONTRAST_LEVELS: [f64; 3] = [2.0, 5.0, 8.0];

/// SNR × contrast grid (SNR outer) over the spec's scene and base config.
pub fn run_noise_study(spec: &StudySpec, out: Option<&Path>) -> Result<Vec<CellRecord>> {
    let mut grid = spec.clone();
    grid.axes = vec![Axis::new("snr_db", &NOISE_LEVELS), Axis::new("eps_r", &CONTRAST_LEVELS)];
    grid.seeds.truncate(1);
    grid.validate()?;
    let records = run_plans(&grid.plan()?, out)?;
    if let Some(dir) = out {
        write_records(dir, "noise", &records)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPair {
    pub ablation: Ablation,
    pub full: CellRecord,
    pub ablated: CellRecord,
}

/// Every base cell of the spec paired with each ablation, same seeds.
pub fn run_ablation(spec: &StudySpec, out: Option<&Path>) -> Result<Vec<AblationPair>> {
    spec.validate()?;
    let toggles: Vec<Ablation> = if spec.ablations.is_empty() {
        Ablation::STANDARD.to_vec()
    } else {
        spec.ablations.clone()
    };
    let base = spec.plan()?;
    let mut plans = Vec::new();
    for p in &base {
        for a in std::iter::once(Ablation::None).chain(toggles.iter().copied()) {
            let config = a.apply(&p.config);
            let mut labels = vec![("ablation".to_string(), a.name().to_string())];
            labels.extend(p.labels.iter().cloned());
            plans.push(CellPlan {
                index: plans.len(),
                key: cell_key(&config, &p.scene, p.snr_db, ""),
                labels,
                config,
                scene: p.scene.clone(),
                snr_db: p.snr_db,
            });
        }
    }
    let records = run_plans(&plans, out)?;
    if let Some(dir) = out {
        write_records(dir, "ablation", &records)?;
    }
    let per_base = toggles.len() + 1;
    let mut pairs = Vec::new();
    for chunk in records.chunks(per_base) {
        for (a, r) in toggles.iter().zip(&chunk[1..]) {
            pairs.push(AblationPair {
                ablation: *a,
                full: chunk[0].clone(),
                ablated: r.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub sigma: f64,
    /// Relative error of each successful realization, in realization order.
    pub errors: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    pub stats: Option<BoxStats>,
    #[serde(skip)]
    pub wall_time: f64,
}

pub const DEFAULT_SIGMAS: [f64; 3] = [1e-3, 2e-3, 3e-3];

/// Data simulated with perturbed antenna positions, reconstructed with the
/// nominal ones.
pub fn run_monte_carlo(spec: &StudySpec, out: Option<&Path>) -> Result<Vec<MonteCarloSummary>> {
    spec.validate()?;
    let start = Instant::now();
    let config = &spec.base;
    let scene = spec.scene.build(config, None)?;
    let nominal = build_array(config)?;
    let rec = Reconstructor::new(config, &nominal)?;
    let truth = crate::scene::rasterize(&scene, &crate::geometry::build_grid(config)?)?;
    let sigmas: Vec<f64> = if spec.sigmas.is_empty() {
        DEFAULT_SIGMAS.to_vec()
    } else {
        spec.sigmas.clone()
    };
    let n = spec.n_realizations;
    let seed = spec.seeds()[0];
    let jobs: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|s| (0..n).map(move |r| (s, r))).collect();
    let outcomes: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let mut rng = noise_rng(seed, 2 + ((s as u64) << 32) + r as u64);
            let array = perturb_array(&nominal, sigmas[s], &mut rng);
            let sim = simulate(config, &scene, &array)?;
            let data = match spec.snr_db {
                Some(snr) => add_awgn(&sim.data, snr, &mut rng),
                None => sim.data,
            };
            let result = rec.run(&data)?.with_truth(&truth);
            Ok(result.relative_error.expect("truth supplied"))
        })
        .collect();
    let mut summaries = Vec::new();
    for (s, sigma) in sigmas.iter().enumerate() {
        let mut errors = Vec::new();
        let mut failures = Vec::new();
        for (r, o) in outcomes[s * n..(s + 1) * n].iter().enumerate() {
            match o {
                Ok(e) => errors.push(*e),
                Err(e) => failures.push((r, e.to_string())),
            }
        }
        summaries.push(MonteCarloSummary {
            sigma: *sigma,
            stats: BoxStats::from_values(&errors),
            errors,
            failures,
            wall_time: 0.0,
        });
    }
    let elapsed = start.elapsed().as_secs_f64();
    for s in summaries.iter_mut() {
        s.wall_time = elapsed;
    }
    if let Some(dir) = out {
        write_monte_carlo(dir, &summaries)?;
    }
    Ok(summaries)
}

fn write_monte_carlo(dir: &Path, summaries: &[MonteCarloSummary]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("montecarlo.csv")).map_err(csv_error)?;
    w.write_record(["sigma_m", "n_ok", "n_failed", "min", "q1", "median", "q3", "max"])
        .map_err(csv_error)?;
    for s in summaries {
        let mut row = vec![format!("{:?}", s.sigma), s.errors.len().to_string(), s.failures.len().to_string()];
        match s.stats {
            Some(b) => row.extend([b.min, b.q1, b.median, b.q3, b.max].iter().map(|v| format!("{v:?}"))),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    let mut r = csv::Writer::from_path(dir.join("montecarlo_runs.csv")).map_err(csv_error)?;
    r.write_record(["sigma_m", "realization", "status", "rel_error"]).map_err(csv_error)?;
    for s in summaries {
        let mut ok = s.errors.iter();
        let failed: std::collections::BTreeMap<usize, &String> = s.failures.iter().map(|(i, e)| (*i, e)).collect();
        for i in 0..s.errors.len() + s.failures.len() {
            let row = match failed.get(&i) {
                Some(e) => [format!("{:?}", s.sigma), i.to_string(), format!("error: {e}"), String::new()],
                None => [
                    format!("{:?}", s.sigma),
                    i.to_string(),
                    "ok".into(),
                    format!("{:?}", ok.next().expect("one error per success")),
                ],
            };
            r.write_record(&row).map_err(csv_error)?;
        }
    }
    r.flush()?;
    Ok(())
}
