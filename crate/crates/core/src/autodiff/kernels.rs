//! Dense kernels for the row-wise batched operations.

use ndarray::Array2;

use crate::Scalar;

/// `out[s, j] = sum_k w[s, j*q + k] * x[s, k]` with `q = x.ncols()`.
pub(crate) fn rowwise_matvec<T: Scalar>(w: &Array2<T>, x: &Array2<T>) -> Array2<T> {
    let rows = x.nrows();
    let q = x.ncols();
    assert_eq!(w.nrows(), rows, "rowwise_matvec: row count mismatch");
    assert!(q > 0 && w.ncols() % q == 0, "rowwise_matvec: width mismatch");
    let p = w.ncols() / q;
    let mut out = Array2::zeros((rows, p));
    for s in 0..rows {
        let wr = w.row(s);
        let xr = x.row(s);
        for j in 0..p {
            let mut acc = T::zero();
            for k in 0..q {
                acc += wr[j * q + k] * xr[k];
            }
            out[[s, j]] = acc;
        }
    }
    out
}

/// `out[s, k] = sum_j w[s, j*q + k] * g[s, j]` with `q = w.ncols() / g.ncols()`.
pub(super) fn rowwise_matvec_t<T: Scalar>(w: &Array2<T>, g: &Array2<T>) -> Array2<T> {
    let rows = g.nrows();
    let p = g.ncols();
    assert_eq!(w.nrows(), rows, "rowwise_matvec_t: row count mismatch");
    assert!(p > 0 && w.ncols() % p == 0, "rowwise_matvec_t: width mismatch");
    let q = w.ncols() / p;
    let mut out = Array2::zeros((rows, q));
    for s in 0..rows {
        let wr = w.row(s);
        let gr = g.row(s);
        let mut orow = out.row_mut(s);
        for j in 0..p {
            let gj = gr[j];
            for k in 0..q {
                orow[k] += wr[j * q + k] * gj;
            }
        }
    }
    out
}

/// `out[s, j*q + k] = a[s, j] * b[s, k]`.
pub(super) fn rowwise_outer<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let rows = a.nrows();
    assert_eq!(b.nrows(), rows, "rowwise_outer: row count mismatch");
    let (p, q) = (a.ncols(), b.ncols());
    let mut out = Array2::zeros((rows, p * q));
    for s in 0..rows {
        let ar = a.row(s);
        let br = b.row(s);
        let mut orow = out.row_mut(s);
        for j in 0..p {
            for k in 0..q {
                orow[j * q + k] = ar[j] * br[k];
            }
        }
    }
    out
}
