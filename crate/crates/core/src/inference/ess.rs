use crate::Scalar;

/// Effective sample size of one scalar quantity across chains, by the
/// initial monotone sequence estimator on chain-averaged autocorrelations.
///
/// Chains must share a length. A quantity with no variation returns the
/// total draw count.
pub fn effective_sample_size<T: Scalar>(chains: &[Vec<T>]) -> f64 {
    let n = chains.first().map_or(0, Vec::len);
    let total = (n * chains.len()) as f64;
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return total;
    }
    let centred: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let mean = c.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            c.iter().map(|v| v.as_f64() - mean).collect()
        })
        .collect();
    let autocov = |x: &[f64], k: usize| x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let var0: Vec<f64> = centred.iter().map(|x| autocov(x, 0)).collect();
    if var0.iter().all(|&v| v <= 0.0) {
        return total;
    }
    let rho = |k: usize| {
        let (mut s, mut used) = (0.0, 0);
        for (x, &v) in centred.iter().zip(&var0) {
            if v > 0.0 {
                s += autocov(x, k) / v;
                used += 1;
            }
        }
        s / used as f64
    };
    // Sum of consecutive pairs, truncated at the first non-positive pair and
    // forced to be non-increasing.
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 2;
    }
    total / tau.max(1.0 / total.max(1.0))
}
