//! Plain comma-separated text: datasets in, diagnostics out.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fmt::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::calibration::CalibTrace;
use crate::diagnostics::{CovariogramEstimate, ExceedanceCurve, Kde1d, Kde2d, ScoreReport};
use crate::inference::{Dataset, Predictive, Transform};
use crate::math::Grid;
use crate::{Error, Result};

const DATASET: &str = "dataset";

/// Reads `s1[,s2,...],value` records with `d` coordinates. A first line
/// that does not parse as numbers is taken as a header. Blank lines are
/// skipped.
pub fn parse_dataset(text: &str, d: usize, noise_var: f64, transform: Transform) -> Result<Dataset<f64>> {
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut record = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let nums = match parsed {
            Ok(v) => v,
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::format(DATASET, format!("record {record}"), format!("`{line}` is not numeric")));
            }
        };
        if nums.len() != d + 1 {
            return Err(Error::format(
                DATASET,
                format!("record {record}"),
                format!("expected {} columns, found {}", d + 1, nums.len()),
            ));
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(DATASET, format!("record {record}"), "non-finite value"));
        }
        coords.extend_from_slice(&nums[..d]);
        values.push(nums[d]);
        record += 1;
    }
    let sites = Array2::from_shape_vec((values.len(), d), coords).expect("d coordinates per record");
    Dataset::new(sites, Array1::from_vec(values), noise_var, transform)
        .map_err(|e| Error::format(DATASET, "values", e.to_string()))
}

pub fn load_dataset(path: &Path, d: usize, noise_var: f64, transform: Transform) -> Result<Dataset<f64>> {
    let bytes = super::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(DATASET, "file", "not valid UTF-8"))?;
    parse_dataset(text, d, noise_var, transform)
}

fn coord_header(d: usize) -> String {
    (1..=d).map(|i| format!("s{i}")).collect::<Vec<_>>().join(",")
}

/// `s1[,s2],value` with a header line.
pub fn dataset_csv(sites: &Array2<f64>, values: &Array1<f64>) -> String {
    let mut out = format!("{},value\n", coord_header(sites.ncols()));
    for (s, v) in sites.rows().into_iter().zip(values) {
        for c in s {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn covariogram_csv(est: &CovariogramEstimate) -> String {
    let mut out = String::from("lag,estimate,count\n");
    for ((h, e), c) in est.centers.iter().zip(&est.estimates).zip(&est.counts) {
        let _ = writeln!(out, "{h},{e},{c}");
    }
    out
}

/// One row per anchor and grid cell.
pub fn anchored_csv(grid: &Grid<f64>, maps: &[Array1<f64>]) -> String {
    let mut out = format!("anchor_id,{},cov\n", coord_header(grid.dim()));
    for (id, map) in maps.iter().enumerate() {
        for (j, c) in map.iter().enumerate() {
            let _ = write!(out, "{id},");
            for x in grid.location(j) {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{c}");
        }
    }
    out
}

/// `x,density`; a point mass becomes a single row with an infinite density.
pub fn kde1_csv(kde: &Kde1d) -> String {
    let mut out = String::from("x,density\n");
    match kde {
        Kde1d::Density { x, density, .. } => {
            for (a, d) in x.iter().zip(density) {
                let _ = writeln!(out, "{a},{d}");
            }
        }
        Kde1d::PointMass(v) => {
            let _ = writeln!(out, "{v},inf");
        }
    }
    out
}

pub fn kde2_csv(kde: &Kde2d) -> String {
    let mut out = String::from("x,y,density\n");
    match kde {
        Kde2d::Density { x, y, density, .. } => {
            for (a, row) in x.iter().zip(density) {
                for (b, d) in y.iter().zip(row) {
                    let _ = writeln!(out, "{a},{b},{d}");
                }
            }
        }
        Kde2d::PointMass(a, b) => {
            let _ = writeln!(out, "{a},{b},inf");
        }
    }
    out
}

/// Absent bins are left out.
pub fn exceedance_csv(curve: &ExceedanceCurve) -> String {
    let mut out = String::from("q,lag,prob\n");
    for (q, row) in curve.levels.iter().zip(&curve.probs) {
        for (h, p) in curve.lags.iter().zip(row) {
            if let Some(p) = p {
                let _ = writeln!(out, "{q},{h},{p}");
            }
        }
    }
    out
}

pub fn scores_csv(r: &ScoreReport) -> String {
    format!("metric,value\nmape,{}\nrmspe,{}\ncrps,{}\n", r.mape, r.rmspe, r.crps)
}

/// The `seconds` column is wall-clock time and differs between runs.
pub fn trace_csv(trace: &CalibTrace) -> String {
    let mut out = String::from("outer_step,w1_estimate,grad_norm_mean,seconds\n");
    for r in &trace.rows {
        let _ = writeln!(out, "{},{},{},{}", r.outer_step, r.w1, r.grad_norm_mean, r.seconds);
    }
    out
}

/// `s1[,s2],mean,sd` per grid cell.
pub fn predictive_csv(grid: &Grid<f64>, pred: &Predictive<f64>) -> String {
    let mut out = format!("{},mean,sd\n", coord_header(grid.dim()));
    for j in 0..grid.len() {
        for x in grid.location(j) {
            let _ = write!(out, "{x},");
        }
        let _ = writeln!(out, "{},{}", pred.mean[j], pred.sd[j]);
    }
    out
}

/// Reads the `value` column of a truth file (`s1[,s2],value` or just
/// `value`), in record order.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Err(_) if lineno == 0 => continue,
            _ => {
                return Err(Error::format("values file", format!("record {}", out.len()), format!("`{line}`")));
            }
        }
    }
    Ok(out)
}
