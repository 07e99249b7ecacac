//! On-disk formats: long-form panel CSV with a JSON sidecar, blockwise
//! kernel-matrix CSV, and JSON round-trips for fits and truth bundles.
//!
//! Every CSV value is written with 17 significant digits so that reading a
//! file back reproduces the original `f64` bit patterns.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dgp::DgpTruth;
use crate::error::{Error, Result};
use crate::fpca::FactorFit;
use crate::panel::{FunctionalPanel, Grid, KernelMatrix};

/// Formats a float with 17 significant digits (lossless round-trip).
pub fn format_g17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sidecar metadata stored next to a panel CSV.
#[derive(Debug, Serialize, Deserialize)]
struct PanelMeta {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    grids: Vec<Grid>,
    centered: bool,
}

/// Sidecar metadata stored next to a kernel-matrix CSV.
#[derive(Debug, Serialize, Deserialize)]
struct KernelMeta {
    grids: Vec<Grid>,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes a panel as long CSV (`subject,time,grid_index,value`) plus its
/// JSON sidecar alongside.
pub fn write_panel(panel: &FunctionalPanel, csv_path: &Path) -> Result<()> {
    let meta = PanelMeta {
        n: panel.n_subjects(),
        t: panel.n_times(),
        grids: panel.grids().to_vec(),
        centered: panel.is_centered(),
    };
    write_json(&meta, &sidecar_path(csv_path))?;
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["subject", "time", "grid_index", "value"])?;
    for i in 0..panel.n_subjects() {
        let v = panel.values(i);
        for t in 0..panel.n_times() {
            for g in 0..panel.grid(i).len() {
                w.write_record([
                    i.to_string(),
                    t.to_string(),
                    g.to_string(),
                    format_g17(v[[t, g]]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel written by [`write_panel`].
pub fn read_panel(csv_path: &Path) -> Result<FunctionalPanel> {
    let meta: PanelMeta = read_json(&sidecar_path(csv_path))?;
    let mut values: Vec<Array2<f64>> = meta
        .grids
        .iter()
        .map(|g| Array2::zeros((meta.t, g.len())))
        .collect();
    let mut seen = vec![0usize; meta.n];
    let mut reader = csv::Reader::from_path(csv_path)?;
    check_header(&mut reader, &["subject", "time", "grid_index", "value"])?;
    for record in reader.records() {
        let record = record?;
        let (i, t, g, v) = parse_panel_row(&record)?;
        if i >= meta.n {
            return Err(Error::MalformedInput(format!("subject {i} out of range")));
        }
        if t >= meta.t || g >= meta.grids[i].len() {
            return Err(Error::MalformedInput(format!(
                "indices ({t}, {g}) out of range for subject {i}"
            )));
        }
        values[i][[t, g]] = v;
        seen[i] += 1;
    }
    for (i, &count) in seen.iter().enumerate() {
        let expected = meta.t * meta.grids[i].len();
        if count != expected {
            return Err(Error::MalformedInput(format!(
                "subject {i}: expected {expected} rows, found {count}"
            )));
        }
    }
    FunctionalPanel::new(meta.grids, values, meta.centered)
}

fn parse_panel_row(record: &csv::StringRecord) -> Result<(usize, usize, usize, f64)> {
    if record.len() != 4 {
        return Err(Error::MalformedInput(format!(
            "expected 4 fields, found {}",
            record.len()
        )));
    }
    let parse_idx = |s: &str, what: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::MalformedInput(format!("bad {what}: '{s}'")))
    };
    let v = record[3]
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::MalformedInput(format!("bad value: '{}'", &record[3])))?;
    Ok((
        parse_idx(&record[0], "subject")?,
        parse_idx(&record[1], "time")?,
        parse_idx(&record[2], "grid_index")?,
        v,
    ))
}

fn check_header(reader: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let actual: Vec<&str> = header.iter().map(str::trim).collect();
    if actual != expected {
        return Err(Error::MalformedInput(format!(
            "bad header {actual:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

/// Writes a kernel matrix as CSV `i,j,row_index,col_index,value` plus a JSON
/// sidecar describing the grids.
pub fn write_kernel_matrix(km: &KernelMatrix, csv_path: &Path) -> Result<()> {
    write_json(
        &KernelMeta {
            grids: km.grids().to_vec(),
        },
        &sidecar_path(csv_path),
    )?;
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["i", "j", "row_index", "col_index", "value"])?;
    let n = km.n();
    for i in 0..n {
        for j in 0..n {
            let block = km.block(i, j);
            for r in 0..block.nrows() {
                for c in 0..block.ncols() {
                    w.write_record([
                        i.to_string(),
                        j.to_string(),
                        r.to_string(),
                        c.to_string(),
                        format_g17(block[[r, c]]),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a kernel matrix written by [`write_kernel_matrix`].
pub fn read_kernel_matrix(csv_path: &Path) -> Result<KernelMatrix> {
    let meta: KernelMeta = read_json(&sidecar_path(csv_path))?;
    let n = meta.grids.len();
    let mut km = KernelMatrix::zeros(meta.grids);
    let total: usize = {
        let sum: usize = km.grids().iter().map(|g| g.len()).sum();
        sum * sum
    };
    let mut reader = csv::Reader::from_path(csv_path)?;
    check_header(&mut reader, &["i", "j", "row_index", "col_index", "value"])?;
    let mut count = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::MalformedInput(format!(
                "expected 5 fields, found {}",
                record.len()
            )));
        }
        let idx = |k: usize| {
            record[k]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::MalformedInput(format!("bad index '{}'", &record[k])))
        };
        let (i, j, r, c) = (idx(0)?, idx(1)?, idx(2)?, idx(3)?);
        let v = record[4]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::MalformedInput(format!("bad value '{}'", &record[4])))?;
        if i >= n || j >= n {
            return Err(Error::MalformedInput(format!(
                "block ({i}, {j}) out of range"
            )));
        }
        let (gi, gj) = (km.grids()[i].len(), km.grids()[j].len());
        if r >= gi || c >= gj {
            return Err(Error::MalformedInput(format!(
                "entry ({r}, {c}) out of range for block ({i}, {j})"
            )));
        }
        let (oi, oj) = (km.offset(i), km.offset(j));
        km.dense_mut()[[oi + r, oj + c]] = v;
        count += 1;
    }
    if count != total {
        return Err(Error::MalformedInput(format!(
            "expected {total} entries, found {count}"
        )));
    }
    Ok(km)
}

/// Writes a plain dense matrix as headerless CSV (one row per line), used
/// for correlation matrices.
pub fn write_matrix_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format_g17(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Serializes any value as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

/// Deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a factor fit as JSON.
pub fn write_factor_fit(fit: &FactorFit, path: &Path) -> Result<()> {
    write_json(fit, path)
}

/// Reads a factor fit from JSON.
pub fn read_factor_fit(path: &Path) -> Result<FactorFit> {
    read_json(path)
}

/// Writes a truth bundle as JSON.
pub fn write_truth(truth: &DgpTruth, path: &Path) -> Result<()> {
    write_json(truth, path)
}

/// Reads a truth bundle from JSON.
pub fn read_truth(path: &Path) -> Result<DgpTruth> {
    read_json(path)
}
