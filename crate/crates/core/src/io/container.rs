use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::config::hex_digest;
use crate::error::{Error, Result};
use crate::forward::ScatteredData;
use crate::geometry::AntennaArray;
use crate::grid::ComplexGrid;

const DATASET_MAGIC: &[u8] = b"EMSCA/1\n";
const GRID_MAGIC: &[u8] = b"PDFGRID/1\n";
const BOM: u32 = 0x0102_0304;

fn encode(magic: &[u8], header: &impl Serialize, payload: &[Complex64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(magic.len() + 12 + header.len() + 16 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&BOM.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in payload {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

fn decode<H: DeserializeOwned>(magic: &[u8], bytes: &[u8]) -> Result<(H, Vec<Complex64>)> {
    let corrupt = |m: &str| Error::CorruptHeader(m.to_string());
    let rest = bytes.strip_prefix(magic).ok_or_else(|| {
        corrupt(&format!(
            "missing magic `{}`",
            String::from_utf8_lossy(magic).trim_end()
        ))
    })?;
    if rest.len() < 12 {
        return Err(corrupt("truncated before header"));
    }
    let bom: [u8; 4] = rest[..4].try_into().unwrap();
    if bom == BOM.to_be_bytes() {
        return Err(Error::BigEndian);
    }
    if bom != BOM.to_le_bytes() {
        return Err(corrupt("bad byte-order marker"));
    }
    let h = u64::from_le_bytes(rest[4..12].try_into().unwrap()) as usize;
    let body = &rest[12..];
    if h > body.len() {
        return Err(corrupt("header length exceeds file size"));
    }
    let header: H = serde_json::from_slice(&body[..h]).map_err(|e| corrupt(&e.to_string()))?;
    let payload = &body[h..];
    if payload.len() % 16 != 0 {
        return Err(corrupt("payload is not a whole number of complex values"));
    }
    let values = payload
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((header, values))
}

fn payload_digest(fields: &str, values: &[Complex64]) -> String {
    let mut bytes = fields.as_bytes().to_vec();
    for v in values {
        bytes.extend_from_slice(&v.re.to_le_bytes());
        bytes.extend_from_slice(&v.im.to_le_bytes());
    }
    hex_digest(&bytes)
}

/// Header of a `.grid` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub m1: usize,
    pub m2: usize,
    pub cell_size: f64,
    /// Hash of the configuration that produced the grid (may be empty).
    pub config_hash: String,
    /// SHA-256 over the other header fields and the payload.
    #[serde(default)]
    pub checksum: String,
}

impl GridHeader {
    fn fields(&self) -> String {
        format!("{}x{}:{:?}:{}", self.m1, self.m2, self.cell_size, self.config_hash)
    }
}

pub fn save_grid(path: &Path, grid: &ComplexGrid, config_hash: &str) -> Result<()> {
    let mut header = GridHeader {
        m1: grid.m1(),
        m2: grid.m2(),
        cell_size: grid.cell_size(),
        config_hash: config_hash.to_string(),
        checksum: String::new(),
    };
    header.checksum = payload_digest(&header.fields(), grid.values());
    fs::write(path, encode(GRID_MAGIC, &header, grid.values())?)?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<(ComplexGrid, GridHeader)> {
    let (header, values): (GridHeader, Vec<Complex64>) = decode(GRID_MAGIC, &fs::read(path)?)?;
    if values.len() != header.m1 * header.m2 {
        return Err(Error::CorruptHeader(format!(
            "header says {}x{} but payload holds {} values",
            header.m1,
            header.m2,
            values.len()
        )));
    }
    if payload_digest(&header.fields(), &values) != header.checksum {
        return Err(Error::CorruptHeader("checksum mismatch".into()));
    }
    let grid = ComplexGrid::new(header.m1, header.m2, header.cell_size, values)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    Ok((grid, header))
}

/// [`load_grid`] that also insists on the given dimensions.
pub fn load_grid_expecting(path: &Path, m1: usize, m2: usize) -> Result<(ComplexGrid, GridHeader)> {
    let (grid, header) = load_grid(path)?;
    if (grid.m1(), grid.m2()) != (m1, m2) {
        return Err(Error::ShapeMismatch(format!(
            "grid is {}x{}, expected {m1}x{m2}",
            grid.m1(),
            grid.m2()
        )));
    }
    Ok((grid, header))
}

/// Measurements plus the antenna layout and frequency they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frequency: f64,
    pub array: AntennaArray,
    pub data: ScatteredData,
    /// Hash of the configuration that simulated the data, if any.
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    n_tx: usize,
    n_rx: usize,
    frequency: f64,
    array: AntennaArray,
    snr_db: Option<f64>,
    mask: Option<Vec<bool>>,
    config_hash: String,
    checksum: String,
}

fn dataset_fields(h: &DatasetHeader) -> String {
    let bare = serde_json::json!({
        "n_tx": h.n_tx, "n_rx": h.n_rx, "frequency": h.frequency, "array": h.array,
        "snr_db": h.snr_db, "mask": h.mask, "config_hash": h.config_hash,
    });
    bare.to_string()
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let d = &ds.data;
    let mut header = DatasetHeader {
        n_tx: d.n_tx,
        n_rx: d.n_rx,
        frequency: ds.frequency,
        array: ds.array.clone(),
        snr_db: d.snr_db,
        mask: d.mask.clone(),
        config_hash: ds.config_hash.clone(),
        checksum: String::new(),
    };
    header.checksum = payload_digest(&dataset_fields(&header), &d.matrix);
    fs::write(path, encode(DATASET_MAGIC, &header, &d.matrix)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (h, values): (DatasetHeader, Vec<Complex64>) = decode(DATASET_MAGIC, &fs::read(path)?)?;
    let n = h.n_tx * h.n_rx;
    if values.len() != n {
        return Err(Error::CorruptHeader(format!(
            "header says {}x{} but payload holds {} values",
            h.n_tx,
            h.n_rx,
            values.len()
        )));
    }
    if h.array.tx.len() != h.n_tx || h.array.rx.len() != h.n_rx {
        return Err(Error::CorruptHeader("antenna counts disagree with data shape".into()));
    }
    if h.mask.as_ref().is_some_and(|m| m.len() != n) {
        return Err(Error::CorruptHeader("mask length disagrees with data shape".into()));
    }
    if payload_digest(&dataset_fields(&h), &values) != h.checksum {
        return Err(Error::CorruptHeader("checksum mismatch".into()));
    }
    let mut data = ScatteredData::new(h.n_tx, h.n_rx, values);
    data.snr_db = h.snr_db;
    data.mask = h.mask;
    Ok(Dataset {
        frequency: h.frequency,
        array: h.array,
        data,
        config_hash: h.config_hash,
    })
}
