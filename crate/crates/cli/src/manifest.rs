//! Run manifests: what was run, on which inputs, and the digest of every
//! output file it produced.

use anyhow::{bail, Context, Result};
use pdf_isp::config::hex_digest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::Command;

pub const FILE_NAME: &str = "manifest.json";

/// Files whose content depends on the clock rather than the inputs.
pub fn is_timing_file(name: &str) -> bool {
    name.contains(".timing.") || name.starts_with("timing.")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Command,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Outputs left out of `outputs` because they record wall-clock time.
    pub excluded: Vec<String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex_digest(&bytes))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

/// Digests of every file under `dir` except the manifest itself; timing
/// files are listed separately.
pub fn digest_outputs(dir: &Path) -> Result<(BTreeMap<String, String>, Vec<String>)> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut outputs = BTreeMap::new();
    let mut excluded = Vec::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == FILE_NAME || name.ends_with(".manifest.json") {
            continue;
        }
        let file = rel.file_name().unwrap().to_string_lossy().into_owned();
        if is_timing_file(&file) {
            excluded.push(name);
        } else {
            outputs.insert(name, file_digest(&dir.join(&rel))?);
        }
    }
    Ok((outputs, excluded))
}

impl Manifest {
    pub fn new(invocation: &Command, seed: Option<u64>, config_hash: Option<String>, inputs: &[&Path]) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.to_string_lossy().into_owned(), file_digest(p)?);
        }
        Ok(Self {
            tool: "pdf-isp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            invocation: invocation.clone(),
            seed,
            config_hash,
            inputs: digests,
            outputs: BTreeMap::new(),
            excluded: Vec::new(),
        })
    }

    /// Digests `out_dir` and writes the manifest into it.
    pub fn finish(mut self, out_dir: &Path) -> Result<Self> {
        let (outputs, excluded) = digest_outputs(out_dir)?;
        self.outputs = outputs;
        self.excluded = excluded;
        self.write(&out_dir.join(FILE_NAME))?;
        Ok(self)
    }

    /// Records a single output file and writes `<file>.manifest.json`.
    pub fn finish_file(mut self, file: &Path) -> Result<Self> {
        let name = file.file_name().context("output has no file name")?.to_string_lossy().into_owned();
        self.outputs = BTreeMap::from([(name, file_digest(file)?)]);
        self.write(&sidecar(file))?;
        Ok(self)
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn check_inputs(&self) -> Result<()> {
        for (path, digest) in &self.inputs {
            let now = file_digest(Path::new(path))?;
            if &now != digest {
                bail!("input {path} changed since the manifest was written");
            }
        }
        Ok(())
    }
}

pub fn sidecar(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

/// Output digests that differ between two manifests (missing files count).
pub fn differences(expected: &Manifest, actual: &Manifest) -> Vec<String> {
    let single = expected.outputs.len() == 1 && actual.outputs.len() == 1;
    if single {
        let (a, b) = (expected.outputs.values().next(), actual.outputs.values().next());
        return if a == b { Vec::new() } else { vec![expected.outputs.keys().next().unwrap().clone()] };
    }
    let mut diff = Vec::new();
    for (k, v) in &expected.outputs {
        if actual.outputs.get(k) != Some(v) {
            diff.push(k.clone());
        }
    }
    for k in actual.outputs.keys() {
        if !expected.outputs.contains_key(k) {
            diff.push(k.clone());
        }
    }
    diff
}
