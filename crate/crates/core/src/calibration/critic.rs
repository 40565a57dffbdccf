use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::autodiff::{Tape, Var};
use crate::math::{softplus, SeededRng};
use crate::{Error, Result, Scalar};

/// Critic weights: two softplus hidden layers and a linear scalar output,
/// each layer of the form `(1/sqrt(m)) W h + b` with `m` its input width.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams<T> {
    /// `(W: out x in, b: 1 x out)` per layer.
    pub layers: Vec<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> CriticParams<T> {
    pub fn zeros(n: usize, width: usize) -> Self {
        let widths = [n, width, width, 1];
        let layers = widths
            .windows(2)
            .map(|p| (Array2::zeros((p[1], p[0])), Array2::zeros((1, p[1]))))
            .collect();
        CriticParams { layers }
    }

    /// Every weight and bias of a layer with input width `m` drawn from
    /// `U[-1/sqrt(m), 1/sqrt(m)]`.
    pub fn init(n: usize, width: usize, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || width == 0 {
            return Err(Error::invalid("critic widths must be positive"));
        }
        let mut c = Self::zeros(n, width);
        for (w, b) in &mut c.layers {
            let bound = T::one() / T::of_usize(w.ncols()).sqrt();
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = (T::of(2.0) * rng.uniform::<T>() - T::one()) * bound;
            }
        }
        Ok(c)
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].0.ncols()
    }

    pub fn blocks(&self) -> Vec<&Array2<T>> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<T>> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn leaves<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.blocks().into_iter().map(|b| tape.leaf(b.clone())).collect()
    }

    pub fn constants<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.blocks().into_iter().map(|b| tape.constant(b.clone())).collect()
    }

    /// Critic value for each row of `ys`.
    pub fn evaluate(&self, ys: &Array2<T>) -> Array1<T> {
        let last = self.layers.len() - 1;
        let mut h = ys.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let c = T::one() / T::of_usize(w.ncols()).sqrt();
            let mut z = h.dot(&w.t()) * c;
            z += &b.row(0);
            if l < last {
                z.mapv_inplace(softplus);
            }
            h = z;
        }
        h.column(0).to_owned()
    }
}

/// `phi(y)` for a single field.
pub fn critic_forward<T: Scalar>(y: ArrayView1<'_, T>, lambda: &CriticParams<T>) -> T {
    lambda.evaluate(&y.insert_axis(Axis(0)).to_owned())[0]
}

/// Taped critic over the rows of `ys`; `lambda` in block order
/// `W1, b1, W2, b2, W3, b3`. Returns `B x 1`.
pub fn critic_taped<'t, T: Scalar>(ys: Var<'t, T>, lambda: &[Var<'t, T>]) -> Var<'t, T> {
    let last = lambda.len() / 2 - 1;
    let mut h = ys;
    for (l, p) in lambda.chunks(2).enumerate() {
        let c = T::one() / T::of_usize(p[0].shape().1).sqrt();
        let z = h.matmul_t(p[0].scale(c)).add_row(p[1]);
        h = if l < last { z.softplus() } else { z };
    }
    h
}

/// Taped `zeta * mean_i (|grad phi(ybar_i)| - 1)^2` and the per-row norms.
/// `ybar` must be a differentiable leaf.
pub fn penalty_taped<'t, T: Scalar>(
    tape: &'t Tape<T>,
    ybar: Var<'t, T>,
    lambda: &[Var<'t, T>],
    zeta: T,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let out = critic_taped(ybar, lambda).sum();
    let norms = tape.grad_norm(out, ybar)?;
    let penalty = norms.shift(-T::one()).square().mean().scale(zeta);
    Ok((penalty, norms))
}

/// Gradient penalty of the critic at the rows of `ybar`.
pub fn gradient_penalty<T: Scalar>(ybar: &Array2<T>, lambda: &CriticParams<T>, zeta: T) -> Result<T> {
    check_width(ybar, lambda)?;
    let tape = Tape::new();
    let y = tape.leaf(ybar.clone());
    let lam = lambda.constants(&tape);
    Ok(penalty_taped(&tape, y, &lam, zeta)?.0.item())
}

/// Mean critic gap `mean phi(Y) - mean phi(Y~)` over paired batches.
pub fn wasserstein_estimate<T: Scalar>(y: &Array2<T>, y_target: &Array2<T>, lambda: &CriticParams<T>) -> Result<T> {
    if y.dim() != y_target.dim() {
        return Err(Error::invalid(format!(
            "batch shapes differ: {:?} vs {:?}",
            y.dim(),
            y_target.dim()
        )));
    }
    check_width(y, lambda)?;
    let a = lambda.evaluate(y);
    let b = lambda.evaluate(y_target);
    let n = T::of_usize(a.len());
    Ok(a.iter().zip(b.iter()).map(|(&p, &q)| p - q).sum::<T>() / n)
}

fn check_width<T: Scalar>(y: &Array2<T>, lambda: &CriticParams<T>) -> Result<()> {
    if y.ncols() != lambda.input_len() {
        return Err(Error::invalid(format!(
            "fields have {} values, the critic expects {}",
            y.ncols(),
            lambda.input_len()
        )));
    }
    Ok(())
}

/// Convex combinations `delta_i Y_i + (1 - delta_i) Y~_i` with the given
/// weights.
pub fn mix_with<T: Scalar>(y: &Array2<T>, y_target: &Array2<T>, delta: &[T]) -> Result<Array2<T>> {
    if y.dim() != y_target.dim() || delta.len() != y.nrows() {
        return Err(Error::invalid("mix_pairs: batch sizes differ"));
    }
    let mut out = y_target.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let d = delta[i];
        Zip::from(&mut row)
            .and(y.row(i))
            .for_each(|o, &a| *o = d * a + (T::one() - d) * *o);
    }
    Ok(out)
}

/// Convex combinations with fresh `delta_i ~ U[0, 1]`.
pub fn mix_pairs<T: Scalar>(y: &Array2<T>, y_target: &Array2<T>, rng: &mut SeededRng) -> Result<Array2<T>> {
    let delta: Vec<T> = (0..y.nrows()).map(|_| rng.uniform()).collect();
    mix_with(y, y_target, &delta)
}
