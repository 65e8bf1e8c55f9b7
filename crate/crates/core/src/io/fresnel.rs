//! Loader for the Institut Fresnel ASCII measurement files.
//!
//! Data lines carry seven whitespace-separated columns:
//!
//! ```text
//! tx_index rx_index freq_GHz Re(E_tot) Im(E_tot) Re(E_inc) Im(E_inc)
//! ```
//!
//! Indices are 1-based positions on circular rails. Free-text lines before
//! the first data line are treated as a header; afterwards only blank lines
//! and `#`/`%` comments are allowed. Comment lines of the form
//! `# key = value` (or `key: value`) set `tx_radius`, `rx_radius` (metres),
//! `tx_step_deg` and `rx_step_deg`. Without a step directive the angular
//! step is 360° divided by the largest index seen.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::C0;
use crate::error::{Error, Result};
use crate::forward::{line_source, ScatteredData};
use crate::geometry::{AntennaArray, GridGeometry, Point};
use crate::grid::ComplexGrid;
use crate::scene::{Geometry, Scene, Shape};

/// Radius of both rails in the published setup.
pub const DEFAULT_RADIUS: f64 = 1.67;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FresnelRecord {
    pub tx: usize,
    pub rx: usize,
    pub freq_ghz: f64,
    pub total: Complex64,
    pub incident: Complex64,
}

/// Settings not carried by the file. Explicit values override header
/// directives, which override the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FresnelOptions {
    /// GHz; `None` picks the lowest frequency measured by every transmitter.
    pub frequency_ghz: Option<f64>,
    pub tx_radius: Option<f64>,
    pub rx_radius: Option<f64>,
    pub tx_step_deg: Option<f64>,
    pub rx_step_deg: Option<f64>,
    /// Conjugate every measurement, for files recorded with the opposite
    /// time convention to the `exp(-iωt)` used by the solver.
    #[serde(default)]
    pub conjugate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FresnelDataset {
    /// Every record in the file, in file order.
    pub records: Vec<FresnelRecord>,
    /// Distinct frequencies present, ascending (GHz).
    pub frequencies: Vec<f64>,
    pub frequency_ghz: f64,
    pub tx_radius: f64,
    pub rx_radius: f64,
    /// File indices of the transmitters and receivers that appear, ascending.
    pub tx_indices: Vec<usize>,
    pub rx_indices: Vec<usize>,
    pub tx_angles_deg: Vec<f64>,
    pub rx_angles_deg: Vec<f64>,
    /// `n_tx × n_rx` raw measurements at the selected frequency; zero where
    /// absent.
    pub total: Vec<Complex64>,
    pub incident: Vec<Complex64>,
    /// Complex factor applied to every measurement of each transmitter.
    pub calibration: Vec<Complex64>,
    /// Receiver column used to calibrate each transmitter.
    pub calibration_rx: Vec<usize>,
    /// Calibrated `total − incident`, masked to the measured pairs.
    pub data: ScatteredData,
    pub array: AntennaArray,
}

impl FresnelDataset {
    pub fn frequency_hz(&self) -> f64 {
        self.frequency_ghz * 1e9
    }

    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz() / C0
    }

    /// Calibrated incident field at receiver column `r` of transmitter `i`.
    pub fn calibrated_incident(&self, i: usize, r: usize) -> Complex64 {
        self.incident[i * self.rx_indices.len() + r] * self.calibration[i]
    }
}

fn polar(radius: f64, deg: f64) -> Point {
    let phi = deg.to_radians();
    [radius * phi.cos(), radius * phi.sin()]
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct Parsed {
    records: Vec<FresnelRecord>,
    directives: BTreeMap<String, f64>,
}

fn parse(text: &str) -> Result<Parsed> {
    let mut records = Vec::new();
    let mut directives = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#').or_else(|| line.strip_prefix('%')) {
            if let Some((k, v)) = comment.split_once('=').or_else(|| comment.split_once(':')) {
                let key = k.trim().to_ascii_lowercase();
                if ["tx_radius", "rx_radius", "tx_step_deg", "rx_step_deg"].contains(&key.as_str()) {
                    let value: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| parse_error(line_no, format!("directive `{key}` needs a number")))?;
                    directives.insert(key, value);
                }
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let numeric_start = tokens[0].parse::<f64>().is_ok();
        if records.is_empty() && !numeric_start {
            continue;
        }
        if tokens.len() != 7 {
            return Err(parse_error(line_no, format!("expected 7 columns, found {}", tokens.len())));
        }
        let index = |t: &str, what: &str| -> Result<usize> {
            match t.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(parse_error(line_no, format!("{what} index `{t}` is not a positive integer"))),
            }
        };
        let mut num = [0.0; 5];
        for (slot, t) in num.iter_mut().zip(&tokens[2..]) {
            *slot = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(line_no, format!("`{t}` is not a finite number")))?;
        }
        let rec = FresnelRecord {
            tx: index(tokens[0], "transmitter")?,
            rx: index(tokens[1], "receiver")?,
            freq_ghz: num[0],
            total: Complex64::new(num[1], num[2]),
            incident: Complex64::new(num[3], num[4]),
        };
        if rec.freq_ghz <= 0.0 {
            return Err(parse_error(line_no, "frequency must be positive"));
        }
        if !seen.insert((rec.tx, rec.rx, rec.freq_ghz.to_bits())) {
            return Err(parse_error(
                line_no,
                format!("duplicate record for tx {} rx {} at {} GHz", rec.tx, rec.rx, rec.freq_ghz),
            ));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Dataset("no data lines found".into()));
    }
    Ok(Parsed { records, directives })
}

fn same_freq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn angles(indices: &[usize], step: f64, what: &str) -> Result<Vec<f64>> {
    let out: Vec<f64> = indices.iter().map(|i| (i - 1) as f64 * step).collect();
    if let Some(a) = out.iter().find(|a| !(0.0..360.0).contains(*a)) {
        return Err(Error::Dataset(format!("{what} angle {a}° outside [0, 360)")));
    }
    Ok(out)
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn load_fresnel(path: &Path, options: &FresnelOptions) -> Result<FresnelDataset> {
    let text = fs::read_to_string(path)?;
    from_text(&text, options)
}

fn from_text(text: &str, options: &FresnelOptions) -> Result<FresnelDataset> {
    let Parsed { records, directives } = parse(text)?;
    let pick = |explicit: Option<f64>, key: &str| explicit.or_else(|| directives.get(key).copied());

    let mut frequencies: Vec<f64> = Vec::new();
    for r in &records {
        if !frequencies.iter().any(|f| same_freq(*f, r.freq_ghz)) {
            frequencies.push(r.freq_ghz);
        }
    }
    frequencies.sort_by(f64::total_cmp);
    let all_tx: BTreeSet<usize> = records.iter().map(|r| r.tx).collect();
    let frequency_ghz = match options.frequency_ghz {
        Some(f) => *frequencies
            .iter()
            .find(|g| same_freq(**g, f))
            .ok_or(Error::MissingFrequency(f))?,
        None => *frequencies
            .iter()
            .find(|f| {
                let txs: BTreeSet<usize> = records
                    .iter()
                    .filter(|r| same_freq(r.freq_ghz, **f))
                    .map(|r| r.tx)
                    .collect();
                txs == all_tx
            })
            .ok_or_else(|| Error::Dataset("no frequency is measured by every transmitter".into()))?,
    };

    let selected: Vec<&FresnelRecord> = records.iter().filter(|r| same_freq(r.freq_ghz, frequency_ghz)).collect();
    let tx_indices: Vec<usize> = selected.iter().map(|r| r.tx).collect::<BTreeSet<_>>().into_iter().collect();
    let rx_indices: Vec<usize> = selected.iter().map(|r| r.rx).collect::<BTreeSet<_>>().into_iter().collect();
    let max_tx = records.iter().map(|r| r.tx).max().unwrap();
    let max_rx = records.iter().map(|r| r.rx).max().unwrap();
    let tx_step = pick(options.tx_step_deg, "tx_step_deg").unwrap_or(360.0 / max_tx as f64);
    let rx_step = pick(options.rx_step_deg, "rx_step_deg").unwrap_or(360.0 / max_rx as f64);
    let tx_radius = pick(options.tx_radius, "tx_radius").unwrap_or(DEFAULT_RADIUS);
    let rx_radius = pick(options.rx_radius, "rx_radius").unwrap_or(DEFAULT_RADIUS);
    if !(tx_radius > 0.0 && rx_radius > 0.0 && tx_step > 0.0 && rx_step > 0.0) {
        return Err(Error::Dataset("radii and angular steps must be positive".into()));
    }
    let tx_angles_deg = angles(&tx_indices, tx_step, "transmitter")?;
    let rx_angles_deg = angles(&rx_indices, rx_step, "receiver")?;

    let (nt, nr) = (tx_indices.len(), rx_indices.len());
    let col_of: BTreeMap<usize, usize> = rx_indices.iter().enumerate().map(|(c, i)| (*i, c)).collect();
    let row_of: BTreeMap<usize, usize> = tx_indices.iter().enumerate().map(|(r, i)| (*i, r)).collect();
    let mut total = vec![Complex64::new(0.0, 0.0); nt * nr];
    let mut incident = total.clone();
    let mut mask = vec![false; nt * nr];
    let fix = |v: Complex64| if options.conjugate { v.conj() } else { v };
    for r in &selected {
        let k = row_of[&r.tx] * nr + col_of[&r.rx];
        total[k] = fix(r.total);
        incident[k] = fix(r.incident);
        mask[k] = true;
    }

    let array = AntennaArray {
        tx: tx_angles_deg.iter().map(|a| polar(tx_radius, *a)).collect(),
        rx: rx_angles_deg.iter().map(|a| polar(rx_radius, *a)).collect(),
    };
    let k0 = 2.0 * std::f64::consts::PI * frequency_ghz * 1e9 / C0;
    let mut calibration = Vec::with_capacity(nt);
    let mut calibration_rx = Vec::with_capacity(nt);
    for i in 0..nt {
        let opposite = tx_angles_deg[i] + 180.0;
        let c = (0..nr)
            .filter(|c| mask[i * nr + c])
            .min_by(|a, b| {
                angular_distance(rx_angles_deg[*a], opposite).total_cmp(&angular_distance(rx_angles_deg[*b], opposite))
            })
            .expect("every selected transmitter has a record");
        let measured = incident[i * nr + c];
        if measured.norm() == 0.0 {
            return Err(Error::Dataset(format!(
                "transmitter {} has zero incident field at its calibration receiver {}",
                tx_indices[i], rx_indices[c]
            )));
        }
        calibration.push(line_source(k0, array.tx[i], array.rx[c]) / measured);
        calibration_rx.push(c);
    }

    let matrix: Vec<Complex64> = (0..nt * nr)
        .map(|k| if mask[k] { (total[k] - incident[k]) * calibration[k / nr] } else { Complex64::new(0.0, 0.0) })
        .collect();
    if matrix.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::Dataset(
            "scattered field (total minus incident) is identically zero; total and incident columns look duplicated".into(),
        ));
    }
    let mut data = ScatteredData::new(nt, nr, matrix);
    if mask.iter().any(|m| !m) {
        data.mask = Some(mask);
    }
    Ok(FresnelDataset {
        records,
        frequencies,
        frequency_ghz,
        tx_radius,
        rx_radius,
        tx_indices,
        rx_indices,
        tx_angles_deg,
        rx_angles_deg,
        total,
        incident,
        calibration,
        calibration_rx,
        data,
        array,
    })
}

/// Nominal targets of the foam/dielectric datasets: a foam cylinder
/// (`ε_r ≈ 1.45`, 80 mm diameter) and a plastic cylinder (`ε_r ≈ 3`, 31 mm
/// diameter) beside it (`FoamDielExt`) or inside it (`FoamDielInt`).
pub fn foam_diel_target(name: &str) -> Option<Scene> {
    let plastic_x = match name.to_ascii_lowercase().as_str() {
        "foamdielext" => -0.0555,
        "foamdielint" => -0.005,
        _ => return None,
    };
    let disk = |x: f64, radius: f64, eps: f64| Shape {
        geometry: Geometry::Disk { center: [x, 0.0], radius },
        eps_r: Complex64::new(eps, 0.0),
    };
    Some(Scene {
        name: name.into(),
        shapes: vec![disk(0.0, 0.04, 1.45), disk(plastic_x, 0.0155, 3.0)],
    })
}

/// Peak `Re ε_r` over the cells whose centres fall in each shape and in no
/// later shape; `None` for a shape that covers no cell centre.
pub fn region_peaks(eps_r: &ComplexGrid, scene: &Scene) -> Vec<Option<f64>> {
    let grid = GridGeometry::new(eps_r.m1(), eps_r.m2(), eps_r.cell_size());
    let owner: Vec<Option<usize>> = grid
        .centers
        .iter()
        .map(|c| scene.shapes.iter().rposition(|s| s.geometry.contains(*c)))
        .collect();
    (0..scene.shapes.len())
        .map(|s| {
            owner
                .iter()
                .zip(eps_r.values())
                .filter(|(o, _)| **o == Some(s))
                .map(|(_, v)| v.re)
                .reduce(f64::max)
        })
        .collect()
}

/// Writes records in the loader's format, with geometry directives.
pub fn write_fresnel(path: &Path, records: &[FresnelRecord], options: &FresnelOptions) -> Result<()> {
    let mut out = String::from("# tx rx freq_GHz Re(Etot) Im(Etot) Re(Einc) Im(Einc)\n");
    for (key, v) in [
        ("tx_radius", options.tx_radius),
        ("rx_radius", options.rx_radius),
        ("tx_step_deg", options.tx_step_deg),
        ("rx_step_deg", options.rx_step_deg),
    ] {
        if let Some(v) = v {
            writeln!(out, "# {key} = {v:?}").unwrap();
        }
    }
    for r in records {
        writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {:?}",
            r.tx, r.rx, r.freq_ghz, r.total.re, r.total.im, r.incident.re, r.incident.im
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 8 transmitters every 45°, receivers every 1° from 60° to 300° away
    /// from the transmitter; incident field is a distorted line source.
    fn synthetic(freqs: &[f64], seed: u64) -> (Vec<FresnelRecord>, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gains: Vec<Complex64> = (0..8)
            .map(|_| Complex64::from_polar(rng.random_range(50.0..200.0), rng.random_range(-3.0..3.0)))
            .collect();
        let mut recs = Vec::new();
        for &f in freqs {
            let k0 = 2.0 * std::f64::consts::PI * f * 1e9 / C0;
            for t in 1..=8usize {
                let ta = (t - 1) as f64 * 45.0;
                for off in 60..=300usize {
                    let r = ((t - 1) * 45 + off) % 360 + 1;
                    let ra = (r - 1) as f64;
                    let model = line_source(k0, polar(DEFAULT_RADIUS, ta), polar(DEFAULT_RADIUS, ra));
                    let inc = model / gains[t - 1];
                    let scat = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3;
                    recs.push(FresnelRecord {
                        tx: t,
                        rx: r,
                        freq_ghz: f,
                        total: inc + scat,
                        incident: inc,
                    });
                }
            }
        }
        (recs, gains)
    }

    fn write(recs: &[FresnelRecord], opts: &FresnelOptions) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.exp");
        write_fresnel(&p, recs, opts).unwrap();
        (dir, p)
    }

    #[test]
    fn counts_come_from_the_file() {
        let (recs, _) = synthetic(&[2.0, 3.0], 1);
        let (_d, p) = write(&recs, &FresnelOptions::default());
        let ds = load_fresnel(&p, &FresnelOptions::default()).unwrap();
        assert_eq!(ds.frequencies, vec![2.0, 3.0]);
        assert_eq!(ds.frequency_ghz, 2.0);
        assert_eq!(ds.tx_indices.len(), 8);
        assert_eq!(ds.rx_indices.len(), 360);
        let mask = ds.data.mask.as_ref().unwrap();
        for i in 0..8 {
            assert_eq!((0..360).filter(|r| mask[i * 360 + r]).count(), 241);
        }
        assert_eq!(ds.tx_angles_deg[2], 90.0);
        assert_eq!(ds.rx_angles_deg[359], 359.0);
    }

    #[test]
    fn exporter_round_trip() {
        let (recs, _) = synthetic(&[4.0], 2);
        let opts = FresnelOptions {
            tx_radius: Some(1.5),
            rx_step_deg: Some(1.0),
            ..Default::default()
        };
        let (_d, p) = write(&recs, &opts);
        let a = load_fresnel(&p, &FresnelOptions::default()).unwrap();
        assert_eq!(a.records, recs);
        assert_eq!(a.tx_radius, 1.5);
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("y.exp");
        write_fresnel(&q, &a.records, &opts).unwrap();
        let b = load_fresnel(&q, &FresnelOptions::default()).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.total, b.total);
        assert_eq!(a.incident, b.incident);
    }

    #[test]
    fn calibration_matches_line_source_model() {
        let (recs, gains) = synthetic(&[2.0], 3);
        let (_d, p) = write(&recs, &FresnelOptions::default());
        let ds = load_fresnel(&p, &FresnelOptions::default()).unwrap();
        for i in 0..8 {
            let c = ds.calibration_rx[i];
            let model = line_source(ds.k0(), ds.array.tx[i], ds.array.rx[c]);
            let got = ds.calibrated_incident(i, c);
            assert!((got - model).norm() / model.norm() < 0.02);
            assert!((ds.calibration[i] - gains[i]).norm() / gains[i].norm() < 1e-9);
            assert_eq!(angular_distance(ds.rx_angles_deg[c], ds.tx_angles_deg[i]), 180.0);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "Free text header\nmore header\n1 1 2.0 1 0 0.5 0\n1 2 2.0 1 0 oops 0\n";
        match from_text(text, &FresnelOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = "1 1 2.0 1 0 0.5\n";
        assert!(matches!(from_text(short, &Default::default()), Err(Error::Parse { line: 1, .. })));
        let dup = "1 1 2.0 1 0 0.5 0\n# note\n1 1 2.0 1 0 0.5 0\n";
        assert!(matches!(from_text(dup, &Default::default()), Err(Error::Parse { line: 3, .. })));
        let zero_index = "0 1 2.0 1 0 0.5 0\n";
        assert!(matches!(from_text(zero_index, &Default::default()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(from_text("header only\n", &Default::default()), Err(Error::Dataset(_))));
    }

    #[test]
    fn missing_frequency_is_an_error() {
        let (recs, _) = synthetic(&[2.0], 4);
        let (_d, p) = write(&recs, &FresnelOptions::default());
        let opts = FresnelOptions {
            frequency_ghz: Some(5.0),
            ..Default::default()
        };
        assert!(matches!(load_fresnel(&p, &opts), Err(Error::MissingFrequency(f)) if f == 5.0));
    }

    #[test]
    fn duplicated_columns_are_rejected() {
        let (mut recs, _) = synthetic(&[2.0], 5);
        for r in recs.iter_mut() {
            r.total = r.incident;
        }
        let (_d, p) = write(&recs, &FresnelOptions::default());
        assert!(matches!(load_fresnel(&p, &FresnelOptions::default()), Err(Error::Dataset(_))));
    }

    #[test]
    fn conjugation_option() {
        let (recs, _) = synthetic(&[2.0], 6);
        let (_d, p) = write(&recs, &FresnelOptions::default());
        let plain = load_fresnel(&p, &FresnelOptions::default()).unwrap();
        let conj = load_fresnel(
            &p,
            &FresnelOptions {
                conjugate: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(conj.total[0], plain.total[0].conj());
    }

    #[test]
    fn region_peaks_follow_ownership() {
        let scene = foam_diel_target("FoamDielExt").unwrap();
        let cell = 0.005;
        let grid = GridGeometry::new(40, 40, cell);
        let truth = crate::scene::rasterize(&scene, &grid).unwrap().to_permittivity();
        let peaks = region_peaks(&truth, &scene);
        assert_eq!(peaks, vec![Some(1.45), Some(3.0)]);
        let inner = foam_diel_target("foamdielint").unwrap();
        let truth = crate::scene::rasterize(&inner, &grid).unwrap().to_permittivity();
        assert_eq!(region_peaks(&truth, &inner), vec![Some(1.45), Some(3.0)]);
        assert!(foam_diel_target("other").is_none());
    }

    #[test]
    fn angles_outside_the_circle_are_rejected() {
        let text = "# rx_step_deg = 10\n1 1 2.0 1 0 0.5 0\n1 40 2.0 1 0 0.5 0\n";
        assert!(matches!(from_text(text, &Default::default()), Err(Error::Dataset(_))));
    }
}
