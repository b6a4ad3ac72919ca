//! Artifacts: atomic writes, run manifests, CSV tables and field files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Grid};
use crate::solver::FieldST;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Git-style object hash: SHA-256 of `"blob <len>\0" + content`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes rows into CSV text with a header line.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, csv_string(rows)?.as_bytes())
}

/// Reads a JSON document; schema errors name the offending field.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Error::Config(format!("{}: {at}: {}", path.display(), e.into_inner()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Ok,
    AssertionFailed,
    Failed,
}

/// Run record written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The configuration exactly as run, after defaults were applied.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub outputs: Vec<OutputRecord>,
    pub assertions: Vec<Assertion>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new<C: Serialize>(subcommand: &str, config: &C, seed: u64) -> Result<Self> {
        let value = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
        let canonical = serde_json::to_vec(&value).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            tool: "idlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config: value,
            config_hash: blob_hash(&canonical),
            seed,
            threads: rayon::current_num_threads(),
            outputs: Vec::new(),
            assertions: Vec::new(),
            status: RunStatus::Ok,
            error: None,
            summary: serde_json::Value::Null,
        })
    }

    /// Records an artifact already on disk.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.outputs.push(OutputRecord {
            path: path.display().to_string(),
            hash: blob_hash(&bytes),
        });
        Ok(())
    }

    pub fn assert(&mut self, a: Assertion) {
        self.assertions.push(a);
    }

    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    /// Sets the status from the assertions unless a failure was recorded.
    pub fn finish(&mut self) {
        if self.status != RunStatus::Failed {
            self.status = if self.all_pass() {
                RunStatus::Ok
            } else {
                RunStatus::AssertionFailed
            };
        }
    }

    pub fn fail(&mut self, err: &Error) {
        self.status = RunStatus::Failed;
        self.error = Some(err.to_string());
    }
}

/// Path of the marker left next to `out` when a run fails numerically.
pub fn failed_marker(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".FAILED");
    PathBuf::from(s)
}

/// JSON sidecar of a field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub domain: Domain,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub times: Vec<f64>,
    pub n_nodes: usize,
    /// Node `k = j·(nx+1) + i`, levels stored one after another.
    pub layout: String,
    pub dtype: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes all time levels as little-endian `f64` plus a JSON sidecar.
pub fn write_field(path: &Path, field: &FieldST) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * field.n_times() * field.grid.n_nodes());
    for v in field.values.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let header = FieldHeader {
        domain: field.grid.domain.clone(),
        xs: field.grid.xs.clone(),
        ys: field.grid.ys.clone(),
        times: field.times.clone(),
        n_nodes: field.grid.n_nodes(),
        layout: "time-major, node k = j*(nx+1) + i".into(),
        dtype: "f64le".into(),
    };
    write_json(&sidecar_path(path), &header)
}

pub fn read_field(path: &Path) -> Result<FieldST> {
    let text = fs::read_to_string(sidecar_path(path))?;
    let header: FieldHeader =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("field sidecar: {e}")))?;
    let bytes = fs::read(path)?;
    let n = header.n_nodes;
    if bytes.len() != 8 * n * header.times.len() {
        return Err(Error::Config(format!(
            "field file holds {} bytes, sidecar expects {}",
            bytes.len(),
            8 * n * header.times.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let grid = Grid::from_coordinates(&header.domain, header.xs, header.ys)?;
    if grid.n_nodes() != n {
        return Err(Error::Config("field sidecar grid does not match n_nodes".into()));
    }
    let values = flat.chunks_exact(n).map(|c| c.to_vec()).collect();
    FieldST::new(Arc::new(grid), header.times, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn field_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Arc::new(Grid::uniform(&Domain::default(), 8).unwrap());
        let values = vec![vec![0.25; grid.n_nodes()], (0..grid.n_nodes()).map(|k| k as f64 * 0.1).collect()];
        let f = FieldST::new(grid, vec![0.0, 0.5], values).unwrap();
        let p = dir.path().join("field.bin");
        write_field(&p, &f).unwrap();
        let g = read_field(&p).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.times, f.times);
        assert_eq!(g.grid.xs, f.grid.xs);
    }

    #[test]
    fn csv_rows_have_a_header() {
        #[derive(Serialize)]
        struct Row {
            eps: f64,
            value: f64,
        }
        let s = csv_string(&[Row { eps: 0.5, value: 1e-3 }]).unwrap();
        assert_eq!(s, "eps,value\n0.5,0.001\n");
    }
}
