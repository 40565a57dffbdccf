use ndarray::Array2;

use super::location_pairs;
use crate::math::Grid;
use crate::{Error, Result, Scalar};

/// `-ln(-ln q)`, the standard Gumbel quantile.
pub fn gumbel_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {q}")));
    }
    Ok(-(-q.ln()).ln())
}

/// `P(Y(s_i) > y | Y(s_j) > y)` pooled over location pairs in lag bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceCurve {
    pub levels: Vec<f64>,
    /// Bin midpoints over `(0, half diagonal]`.
    pub lags: Vec<f64>,
    /// `probs[q][bin]`; `None` when no conditioning exceedance fell in the
    /// bin.
    pub probs: Vec<Vec<Option<f64>>>,
}

/// Exceedance bits per location, packed into words.
fn exceed_bits(samples: &Array2<f64>, y: f64) -> Vec<Vec<u64>> {
    let (n_fields, n) = samples.dim();
    let words = n_fields.div_ceil(64);
    let mut bits = vec![vec![0u64; words]; n];
    for (r, row) in samples.rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > y {
                bits[j][r / 64] |= 1 << (r % 64);
            }
        }
    }
    bits
}

/// Conditional exceedance frequencies of `samples` (`N x n`, already on
/// the Gumbel scale) at the Gumbel quantiles of `levels`.
pub fn exceedance_curve<T: Scalar>(
    samples: &Array2<T>,
    grid: &Grid<T>,
    levels: &[f64],
    n_bins: usize,
    pair_cap: usize,
    seed: u64,
) -> Result<ExceedanceCurve> {
    if samples.ncols() != grid.len() || samples.nrows() == 0 {
        return Err(Error::invalid("samples do not match the grid"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("need at least one lag bin"));
    }
    let x = samples.mapv(|v| v.as_f64());
    let hmax = grid.half_diagonal().as_f64();
    let width = hmax / n_bins as f64;
    let pairs: Vec<(usize, usize, usize)> = location_pairs(grid.len(), pair_cap, seed)
        .into_iter()
        .filter_map(|(i, j)| {
            let h = grid.distance(i, j).as_f64();
            (h > 0.0 && h <= hmax * (1.0 + 1e-12)).then(|| (i, j, ((h / width).ceil() as usize).clamp(1, n_bins) - 1))
        })
        .collect();
    let mut probs = Vec::with_capacity(levels.len());
    for &q in levels {
        let y = gumbel_quantile(q)?;
        let bits = exceed_bits(&x, y);
        let count: Vec<u64> = bits.iter().map(|b| b.iter().map(|w| w.count_ones() as u64).sum()).collect();
        let mut both = vec![0u64; n_bins];
        let mut cond = vec![0u64; n_bins];
        for &(i, j, k) in &pairs {
            let joint: u64 = bits[i].iter().zip(&bits[j]).map(|(a, b)| (a & b).count_ones() as u64).sum();
            // Both orders of conditioning.
            both[k] += 2 * joint;
            cond[k] += count[i] + count[j];
        }
        probs.push(
            both.iter()
                .zip(&cond)
                .map(|(&b, &c)| (c > 0).then(|| b as f64 / c as f64))
                .collect::<Vec<_>>(),
        );
    }
    if probs.iter().all(|p| p.iter().all(Option::is_none)) {
        return Err(Error::invalid("no conditioning exceedances at any level; need more realisations"));
    }
    Ok(ExceedanceCurve {
        levels: levels.to_vec(),
        lags: (1..=n_bins).map(|k| (k as f64 - 0.5) * width).collect(),
        probs,
    })
}
