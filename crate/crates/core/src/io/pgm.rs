use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

/// Binary PGM (P5) of `Re` values, `m2` wide and `m1` tall, rows in storage
/// order. Values map linearly from `[vmin, vmax]` onto `[0, 255]`, clamped
/// and rounded to nearest.
pub fn encode_pgm(map: &ComplexGrid, vmin: f64, vmax: f64) -> Result<Vec<u8>> {
    if !(vmin.is_finite() && vmax.is_finite() && vmax > vmin) {
        return Err(Error::InvalidConfig(format!(
            "render range must satisfy vmin < vmax, got [{vmin}, {vmax}]"
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", map.m2(), map.m1()).into_bytes();
    out.extend(map.values().iter().map(|v| {
        let t = ((v.re - vmin) / (vmax - vmin)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn render_pgm(path: &Path, map: &ComplexGrid, vmin: f64, vmax: f64) -> Result<()> {
    fs::write(path, encode_pgm(map, vmin, vmax)?)?;
    Ok(())
}
