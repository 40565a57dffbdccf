use ndarray::Array2;

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub mape: f64,
    pub rmspe: f64,
    pub crps: f64,
    /// Number of scored points.
    pub m: usize,
    /// Draws per point.
    pub draws: usize,
}

/// `mean |X - y| - 0.5 mean |X - X'|` over all ordered draw pairs.
pub fn crps_sample<T: Scalar>(draws: &[T], truth: T) -> Result<f64> {
    if draws.len() < 2 {
        return Err(Error::invalid("crps needs at least two draws"));
    }
    let d = draws.len() as f64;
    let y = truth.as_f64();
    let x: Vec<f64> = draws.iter().map(|v| v.as_f64()).collect();
    let fit = x.iter().map(|v| (v - y).abs()).sum::<f64>() / d;
    let mut spread = 0.0;
    for (k, a) in x.iter().enumerate() {
        for b in &x[k + 1..] {
            spread += (a - b).abs();
        }
    }
    // Each unordered pair counts twice among the d^2 ordered pairs.
    Ok(fit - spread / (d * d))
}

/// Scores predictive draws (`draws x m`, column `i` for point `i`) against
/// the true values.
pub fn score<T: Scalar>(draws: &Array2<T>, truth: &[T]) -> Result<ScoreReport> {
    let (n, m) = draws.dim();
    if m != truth.len() {
        return Err(Error::invalid(format!("{m} predicted points but {} true values", truth.len())));
    }
    if m == 0 || n < 2 {
        return Err(Error::invalid("need at least one point and two draws"));
    }
    let (mut abs, mut sq, mut crps) = (0.0, 0.0, 0.0);
    for (col, &y) in draws.columns().into_iter().zip(truth) {
        let xs = col.to_vec();
        let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let e = mean - y.as_f64();
        abs += e.abs();
        sq += e * e;
        crps += crps_sample(&xs, y)?;
    }
    let mf = m as f64;
    Ok(ScoreReport {
        mape: abs / mf,
        rmspe: (sq / mf).sqrt(),
        crps: crps / mf,
        m,
        draws: n,
    })
}
