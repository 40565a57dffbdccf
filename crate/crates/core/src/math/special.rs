use crate::Scalar;

/// `ln(1 + e^x)`, evaluated as `max(x, 0) + ln(1 + e^{-|x|})`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on `(0, inf)`.
#[inline]
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    y + (-(-y).exp_m1()).ln()
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    -softplus(-x)
}
