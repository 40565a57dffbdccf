use std::f64::consts::PI;

use crate::{Error, Result, Scalar};

/// Evaluation points per axis.
const POINTS_1D: usize = 512;
const POINTS_2D: usize = 64;
/// The evaluation grid extends this many bandwidths past the data.
const MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Kde1d {
    Density { x: Vec<f64>, density: Vec<f64>, bandwidth: f64 },
    /// All samples share one value.
    PointMass(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kde2d {
    /// `density[i][j]` at `(x[i], y[j])`.
    Density {
        x: Vec<f64>,
        y: Vec<f64>,
        density: Vec<Vec<f64>>,
        bandwidth: (f64, f64),
    },
    /// One coordinate has no spread; holds the sample means.
    PointMass(f64, f64),
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to the sd when the
/// interquartile range vanishes. Zero for constant samples.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let (_, sd) = moments(xs);
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (xs.len() as f64).powf(-0.2)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn to_f64<T: Scalar>(xs: &[T]) -> Result<Vec<f64>> {
    if xs.len() < 10 {
        return Err(Error::invalid(format!("kde needs at least 10 samples, got {}", xs.len())));
    }
    let v: Vec<f64> = xs.iter().map(|x| x.as_f64()).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("kde samples must be finite"));
    }
    Ok(v)
}

/// Gaussian kernel density of `samples`; `bandwidth` overrides Silverman's
/// rule.
pub fn kde_1d<T: Scalar>(samples: &[T], bandwidth: Option<f64>) -> Result<Kde1d> {
    let xs = to_f64(samples)?;
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        return Ok(Kde1d::PointMass(lo));
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(&xs));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    let x = linspace(lo - MARGIN * h, hi + MARGIN * h, POINTS_1D);
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * PI).sqrt());
    let density = x
        .iter()
        .map(|&g| xs.iter().map(|&s| (-0.5 * ((g - s) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(Kde1d::Density { x, density, bandwidth: h })
}

/// Product-Gaussian kernel density of paired samples; bandwidths default to
/// `sd n^(-1/6)` per axis.
pub fn kde_2d<T: Scalar>(xs: &[T], ys: &[T], bandwidth: Option<(f64, f64)>) -> Result<Kde2d> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("kde_2d needs paired samples"));
    }
    let (xs, ys) = (to_f64(xs)?, to_f64(ys)?);
    let ((mx, sx), (my, sy)) = (moments(&xs), moments(&ys));
    if sx == 0.0 || sy == 0.0 {
        return Ok(Kde2d::PointMass(mx, my));
    }
    let scale = (xs.len() as f64).powf(-1.0 / 6.0);
    let (hx, hy) = bandwidth.unwrap_or((sx * scale, sy * scale));
    if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
        return Err(Error::invalid("bandwidths must be positive"));
    }
    let range = |v: &[f64], h: f64| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        linspace(lo - MARGIN * h, hi + MARGIN * h, POINTS_2D)
    };
    let (gx, gy) = (range(&xs, hx), range(&ys, hy));
    let norm = 1.0 / (xs.len() as f64 * 2.0 * PI * hx * hy);
    // Kernel factors per sample and evaluation point, reused across the grid.
    let kx: Vec<Vec<f64>> = gx
        .iter()
        .map(|&g| xs.iter().map(|&s| (-0.5 * ((g - s) / hx).powi(2)).exp()).collect())
        .collect();
    let ky: Vec<Vec<f64>> = gy
        .iter()
        .map(|&g| ys.iter().map(|&s| (-0.5 * ((g - s) / hy).powi(2)).exp()).collect())
        .collect();
    let density = kx
        .iter()
        .map(|a| ky.iter().map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() * norm).collect())
        .collect();
    Ok(Kde2d::Density {
        x: gx,
        y: gy,
        density,
        bandwidth: (hx, hy),
    })
}
