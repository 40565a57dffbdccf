//! Empirical comparisons between sets of fields: covariograms, anchored
//! covariance maps, kernel density estimates, conditional exceedance
//! curves and predictive scores.

mod exceedance;
mod kde;
mod score;

pub use exceedance::{exceedance_curve, gumbel_quantile, ExceedanceCurve};
pub use kde::{kde_1d, kde_2d, silverman_bandwidth, Kde1d, Kde2d};
pub use score::{crps_sample, score, ScoreReport};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rayon::prelude::*;

use crate::math::{Grid, SeededRng};
use crate::{Error, Result, Scalar};

/// Pairs beyond this many are subsampled.
pub const DEFAULT_PAIR_CAP: usize = 200_000;

/// Location pairs `(i, j)` with `i < j`, all of them or a seeded uniform
/// subsample of `cap` when there are more.
pub(crate) fn location_pairs(n: usize, cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let decode = |k: usize| {
        // Row i holds pairs (i, i+1..n); find i by walking the row starts.
        let mut i = 0;
        let mut start = 0;
        while start + (n - 1 - i) <= k {
            start += n - 1 - i;
            i += 1;
        }
        (i, i + 1 + (k - start))
    };
    if total <= cap {
        let mut out = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j));
            }
        }
        out
    } else {
        let mut picks = index::sample(&mut SeededRng::new(seed, 0), total, cap).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(decode).collect()
    }
}

/// Per-location anomalies, `n x N` with contiguous rows. Values are first
/// shifted by the first replicate, so constant locations give exact zeros.
fn anomalies<T: Scalar>(samples: &Array2<T>) -> Array2<f64> {
    let mut x = samples.mapv(|v| v.as_f64());
    let first = x.row(0).to_owned();
    x -= &first.insert_axis(Axis(0));
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let c = &x - &mean.insert_axis(Axis(0));
    c.t().as_standard_layout().into_owned()
}

fn check_samples<T: Scalar>(samples: &Array2<T>, grid: &Grid<T>) -> Result<()> {
    if samples.nrows() < 2 {
        return Err(Error::invalid("need at least two realisations"));
    }
    if samples.ncols() != grid.len() {
        return Err(Error::invalid(format!(
            "fields have {} values but the grid has {} cells",
            samples.ncols(),
            grid.len()
        )));
    }
    Ok(())
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b)
}

/// Covariances averaged within lag bins. Bin 0 holds only zero-lag pairs
/// (each location with itself); bins `1..=n_bins` split
/// `(0, half diagonal]` evenly. Empty bins are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariogramEstimate {
    /// Bin midpoints (0 for the zero-lag bin).
    pub centers: Vec<f64>,
    /// Mean lag of the pairs in each bin.
    pub lags: Vec<f64>,
    pub estimates: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Empirical covariogram of `samples` (`N x n`, one field per row).
pub fn empirical_covariogram<T: Scalar>(
    samples: &Array2<T>,
    grid: &Grid<T>,
    n_bins: usize,
    pair_cap: usize,
    seed: u64,
) -> Result<CovariogramEstimate> {
    check_samples(samples, grid)?;
    if n_bins == 0 {
        return Err(Error::invalid("need at least one lag bin"));
    }
    let n = grid.len();
    let denom = (samples.nrows() - 1) as f64;
    let c = anomalies(samples);
    let hmax = grid.half_diagonal().as_f64();
    let width = hmax / n_bins as f64;
    let pairs = location_pairs(n, pair_cap, seed);
    let per_pair: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| (grid.distance(i, j).as_f64(), dot(c.row(i), c.row(j)) / denom))
        .collect();
    let mut sums = vec![0.0; n_bins + 1];
    let mut lag_sums = vec![0.0; n_bins + 1];
    let mut counts = vec![0usize; n_bins + 1];
    for i in 0..n {
        sums[0] += dot(c.row(i), c.row(i)) / denom;
        counts[0] += 1;
    }
    for (h, v) in per_pair {
        if h > hmax * (1.0 + 1e-12) {
            continue;
        }
        let k = if h == 0.0 {
            0
        } else {
            ((h / width).ceil() as usize).clamp(1, n_bins)
        };
        sums[k] += v;
        lag_sums[k] += h;
        counts[k] += 1;
    }
    let mut out = CovariogramEstimate {
        centers: Vec::new(),
        lags: Vec::new(),
        estimates: Vec::new(),
        counts: Vec::new(),
    };
    for k in 0..=n_bins {
        if counts[k] == 0 {
            continue;
        }
        out.centers.push(if k == 0 { 0.0 } else { (k as f64 - 0.5) * width });
        out.lags.push(lag_sums[k] / counts[k] as f64);
        out.estimates.push(sums[k] / counts[k] as f64);
        out.counts.push(counts[k]);
    }
    Ok(out)
}

/// Empirical covariance between each anchor (snapped to its grid cell) and
/// every grid location; one `n`-vector per anchor.
pub fn anchored_covariance<T: Scalar>(
    samples: &Array2<T>,
    grid: &Grid<T>,
    anchors: &[Vec<T>],
) -> Result<Vec<Array1<f64>>> {
    check_samples(samples, grid)?;
    let denom = (samples.nrows() - 1) as f64;
    let c = anomalies(samples);
    anchors
        .iter()
        .map(|a| {
            let col = grid
                .nearest(a)
                .ok_or_else(|| Error::invalid(format!("anchor {a:?} lies outside the domain")))?;
            Ok(c.dot(&c.row(col)) / denom)
        })
        .collect()
}

/// Eccentricity `sqrt(1 - l_min / l_max)` of the second-moment matrix of
/// the cells whose correlation with `anchor` is at least `threshold`.
/// Zero for a circular region, approaching 1 for an elongated one.
pub fn anchored_eccentricity<T: Scalar>(
    samples: &Array2<T>,
    grid: &Grid<T>,
    anchor: &[T],
    threshold: f64,
) -> Result<f64> {
    if grid.dim() != 2 {
        return Err(Error::invalid("eccentricity needs a two-dimensional grid"));
    }
    let cov = anchored_covariance(samples, grid, &[anchor.to_vec()])?.remove(0);
    let col = grid.nearest(anchor).expect("checked by anchored_covariance");
    let c = anomalies(samples);
    let var: Vec<f64> = c.rows().into_iter().map(|r| dot(r, r)).collect();
    let mut pts = Vec::new();
    for j in 0..grid.len() {
        let rho = if var[j] > 0.0 && var[col] > 0.0 {
            cov[j] * (samples.nrows() - 1) as f64 / (var[j] * var[col]).sqrt()
        } else {
            0.0
        };
        if rho >= threshold {
            let s = grid.location(j);
            pts.push([s[0].as_f64(), s[1].as_f64()]);
        }
    }
    if pts.len() < 2 {
        return Ok(0.0);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / k;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / k;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &pts {
        sxx += (p[0] - mx) * (p[0] - mx);
        syy += (p[1] - my) * (p[1] - my);
        sxy += (p[0] - mx) * (p[1] - my);
    }
    let tr = (sxx + syy) / k;
    let det = (sxx * syy - sxy * sxy) / (k * k);
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, (tr / 2.0 - disc).max(0.0));
    Ok(if hi > 0.0 { (1.0 - lo / hi).sqrt() } else { 0.0 })
}

/// Pearson correlation of two equally long vectors.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("pearson needs two vectors of equal length at least 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mb = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x.as_f64() - ma, y.as_f64() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::numerical("pearson correlation of a constant vector"));
    }
    Ok(sab / (saa * sbb).sqrt())
}
