//! Plain-text bundle of a [`TrajectoryData`]: three CSV matrices plus a JSON
//! sidecar with the sampling metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TrajectoryData;
use crate::error::{Error, Result};
use crate::matops;
use crate::report::{fmt_num, write_csv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    #[serde(rename = "M")]
    pub samples: usize,
    pub dt: f64,
    pub n: usize,
    pub m: usize,
    pub seeds: BTreeMap<String, u64>,
    pub files: BTreeMap<String, String>,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_matrix(path: &Path, name: &str, m: &DMatrix<f64>) -> Result<()> {
    let header: Vec<String> = (0..m.ncols()).map(|c| format!("{name}_{c}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = m
        .row_iter()
        .map(|r| r.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>());
    write_csv(BufWriter::new(File::create(path)?), None, &header, rows)
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::Format(format!(
                "{}: expected {cols} columns, got {}",
                path.display(),
                record.len()
            )));
        }
        for field in record.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                Error::Format(format!("{}: bad number {field:?}: {e}", path.display()))
            })?);
        }
        count += 1;
    }
    if count != rows {
        return Err(Error::Format(format!(
            "{}: expected {rows} rows, got {count}",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Writes `<prefix>_delta_xx.csv`, `<prefix>_i_xx.csv`, `<prefix>_i_xu.csv`
/// and `<prefix>_data.json`.
pub fn save_bundle(data: &TrajectoryData, prefix: &Path) -> Result<BundleMeta> {
    data.validate()?;
    let mut files = BTreeMap::new();
    for (name, m) in [
        ("delta_xx", &data.delta_xx),
        ("i_xx", &data.i_xx),
        ("i_xu", &data.i_xu),
    ] {
        let path = with_suffix(prefix, &format!("_{name}.csv"));
        write_matrix(&path, name, m)?;
        let file_name = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        files.insert(name.to_string(), file_name);
    }
    let meta = BundleMeta {
        samples: data.samples(),
        dt: data.dt,
        n: data.n,
        m: data.m,
        seeds: data.seeds.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(with_suffix(prefix, "_data.json"), json + "\n")?;
    Ok(meta)
}

pub fn load_bundle(prefix: &Path) -> Result<TrajectoryData> {
    let text = std::fs::read_to_string(with_suffix(prefix, "_data.json"))?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
    let (rows, n, m) = (meta.samples, meta.n, meta.m);
    let data = TrajectoryData {
        delta_xx: read_matrix(&with_suffix(prefix, "_delta_xx.csv"), rows, matops::svec_len(n))?,
        i_xx: read_matrix(&with_suffix(prefix, "_i_xx.csv"), rows, n * n)?,
        i_xu: read_matrix(&with_suffix(prefix, "_i_xu.csv"), rows, n * m)?,
        dt: meta.dt,
        n,
        m,
        states: Vec::new(),
        seeds: meta.seeds,
    };
    data.validate()?;
    Ok(data)
}
