use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::SeededRng;
use crate::{Error, Result, Scalar};

/// Diagonal jitter values tried, in order, when a factorisation fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Lower-triangular Cholesky factor together with the jitter that was
/// needed to obtain it.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T> {
    lower: Array2<T>,
    jitter: T,
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    pub fn into_lower(self) -> Array2<T> {
        self.lower
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let y = solve_lower(self.lower.view(), b);
        solve_lower_transpose(self.lower.view(), y.view())
    }
}

/// Factors `a + jitter * I`. On failure the jitter escalates through
/// [`JITTER_LADDER`] (values above the requested one) before giving up.
pub fn cholesky<T: Scalar>(a: &Array2<T>, jitter: T) -> Result<CholeskyFactor<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if jitter < T::zero() || !jitter.is_finite() {
        return Err(Error::invalid("jitter must be a finite nonnegative number"));
    }
    let scale = a.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let tol = T::of(1e-10) * scale.max(T::min_positive_value());
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut attempts = vec![jitter];
    attempts.extend(
        JITTER_LADDER
            .iter()
            .map(|&j| T::of(j))
            .filter(|&j| j > jitter),
    );
    let mut last_pivot = 0;
    for (k, &jit) in attempts.iter().enumerate() {
        match factor(a, jit) {
            Ok(lower) => {
                if k > 0 {
                    log::warn!(
                        "cholesky needed jitter {:e} (requested {:e})",
                        jit.as_f64(),
                        jitter.as_f64()
                    );
                }
                return Ok(CholeskyFactor { lower, jitter: jit });
            }
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(Error::NotPositiveDefinite {
        pivot: last_pivot,
        jitter: attempts.last().copied().unwrap_or(jitter).as_f64(),
    })
}

fn factor<T: Scalar>(a: &Array2<T>, jitter: T) -> std::result::Result<Array2<T>, usize> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    let slice = l.as_slice_mut().expect("fresh array is contiguous");
    for i in 0..n {
        let (done, rest) = slice.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..=i {
            let row_j: &[T] = if j == i { &[] } else { &done[j * n..j * n + n] };
            let dot = if j == i {
                row_i[..j].iter().map(|&x| x * x).sum::<T>()
            } else {
                row_i[..j]
                    .iter()
                    .zip(&row_j[..j])
                    .map(|(&x, &y)| x * y)
                    .sum::<T>()
            };
            if j == i {
                let d = a[[i, i]] + jitter - dot;
                if !(d > T::zero()) || !d.is_finite() {
                    return Err(i);
                }
                row_i[i] = d.sqrt();
            } else {
                row_i[j] = (a[[i, j]] - dot) / row_j[j];
            }
        }
    }
    Ok(l)
}

/// Forward substitution `L y = b`.
pub fn solve_lower<T: Scalar>(l: ArrayView2<'_, T>, b: ArrayView1<'_, T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[[i, k]] * y[k];
        }
        y[i] = acc / l[[i, i]];
    }
    y
}

/// Back substitution `L^T x = y`.
pub fn solve_lower_transpose<T: Scalar>(l: ArrayView2<'_, T>, y: ArrayView1<'_, T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = y.to_owned();
    for i in (0..n).rev() {
        let xi = x[i] / l[[i, i]];
        x[i] = xi;
        for k in 0..i {
            let v = l[[i, k]] * xi;
            x[k] -= v;
        }
    }
    x
}

/// Draws `mean + L z` with `z` standard normal.
pub fn sample_mvn<T: Scalar>(
    mean: ArrayView1<'_, T>,
    lower: ArrayView2<'_, T>,
    rng: &mut SeededRng,
) -> Result<Array1<T>> {
    let n = mean.len();
    if lower.nrows() != n || lower.ncols() != n {
        return Err(Error::invalid(format!(
            "mean has length {n} but factor is {}x{}",
            lower.nrows(),
            lower.ncols()
        )));
    }
    let z = Array1::from(rng.normal_vec::<T>(n));
    Ok(&mean + &lower.dot(&z))
}
