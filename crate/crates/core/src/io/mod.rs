//! Persistence: the `.emsca` measurement format, the `.grid` result format,
//! PGM renders and the Institut Fresnel ASCII loader.
//!
//! Both binary formats share one container:
//!
//! | bytes          | content                                              |
//! |----------------|------------------------------------------------------|
//! | magic line     | `EMSCA/1\n` or `PDFGRID/1\n`                         |
//! | 4              | byte-order marker `0x01020304` as a little-endian u32 |
//! | 8              | header length `h` (u64 LE)                           |
//! | `h`            | UTF-8 JSON header                                    |
//! | rest           | payload of f64 LE values, complex numbers as (re, im) |
//!
//! A marker that reads `04 03 02 01` in reverse was produced by a big-endian
//! writer and is refused.

mod container;
pub mod fresnel;
mod pgm;

pub use container::{load_dataset, load_grid, load_grid_expecting, save_dataset, save_grid, Dataset, GridHeader};
pub use fresnel::{foam_diel_target, load_fresnel, region_peaks, write_fresnel, FresnelDataset, FresnelOptions, FresnelRecord};
pub use pgm::{encode_pgm, render_pgm};
