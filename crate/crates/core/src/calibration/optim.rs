use ndarray::{Array2, Zip};

use crate::Scalar;

/// Adagrad: `x += sign * lr * g / (sqrt(sum g^2) + eps)`.
#[derive(Debug, Clone)]
pub struct Adagrad<T> {
    lr: T,
    eps: T,
    accum: Vec<Array2<T>>,
}

impl<T: Scalar> Adagrad<T> {
    pub fn new(lr: T, shapes: &[(usize, usize)]) -> Self {
        Adagrad {
            lr,
            eps: T::of(1e-10),
            accum: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// One ascent step (maximisation) on `params`.
    pub fn ascend(&mut self, params: Vec<&mut Array2<T>>, grads: &[Array2<T>]) {
        let (lr, eps) = (self.lr, self.eps);
        for ((p, g), a) in params.into_iter().zip(grads).zip(&mut self.accum) {
            Zip::from(p).and(g).and(a).for_each(|p, &g, a| {
                *a += g * g;
                *p += lr * g / (a.sqrt() + eps);
            });
        }
    }
}

/// RMSprop: `v = rho v + (1 - rho) g^2`, `x -= lr * g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    lr: T,
    decay: T,
    eps: T,
    sq: Vec<Array2<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(lr: T, decay: T, eps: T, shapes: &[(usize, usize)]) -> Self {
        RmsProp {
            lr,
            decay,
            eps,
            sq: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// One descent step (minimisation) on `params`.
    pub fn descend(&mut self, params: Vec<&mut Array2<T>>, grads: &[Array2<T>]) {
        let (lr, rho, eps) = (self.lr, self.decay, self.eps);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.sq) {
            Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                *v = rho * *v + (T::one() - rho) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            });
        }
    }
}
