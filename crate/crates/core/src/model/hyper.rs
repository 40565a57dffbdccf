use ndarray::{Array2, ArrayView1, Zip};

use super::{Architecture, Variant};
use crate::autodiff::{Tape, Var};
use crate::math::{softplus, SeededRng};
use crate::{Error, Result, Scalar};

/// Weights `d_l x d_{l-1}` and biases `1 x d_l` of every layer.
///
/// Also used for the standard-normal draws behind a reparameterised sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub layers: Vec<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(arch: &Architecture<T>) -> Self {
        let layers = (1..=arch.layers())
            .map(|l| {
                let (ws, bs) = arch.layer_shape(l);
                (Array2::zeros(ws), Array2::zeros(bs))
            })
            .collect();
        Weights { layers }
    }

    /// Standard-normal entries, per layer weights (row-major) then biases.
    pub fn standard_normal(arch: &Architecture<T>, rng: &mut SeededRng) -> Self {
        let mut w = Self::zeros(arch);
        for (a, b) in &mut w.layers {
            a.iter_mut().chain(b.iter_mut()).for_each(|v| *v = rng.std_normal());
        }
        w
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn from_flat(arch: &Architecture<T>, flat: &[T]) -> Result<Self> {
        let mut w = Self::zeros(arch);
        if flat.len() != w.len() {
            return Err(Error::invalid(format!(
                "expected {} weights and biases, got {}",
                w.len(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for (a, b) in &mut w.layers {
            a.iter_mut().chain(b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
        Ok(w)
    }

    fn conforms(&self, arch: &Architecture<T>) -> bool {
        self.layers.len() == arch.layers()
            && self.layers.iter().enumerate().all(|(i, (w, b))| {
                let (ws, bs) = arch.layer_shape(i + 1);
                w.dim() == ws && b.dim() == bs
            })
    }
}

/// Hyper-parameter blocks of one layer.
///
/// `loc` blocks hold the means (or their basis coefficients), `scale` blocks
/// the pre-softplus scales (or their coefficients). Shapes by variant:
/// per-layer `1 x 1`; per-parameter the weight/bias shape; spatially varying
/// per-layer `K x 1`; spatially varying per-parameter `K x (d_l d_{l-1})`
/// for weights and `K x d_l` for biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHyper<T> {
    pub w_loc: Array2<T>,
    pub w_scale: Array2<T>,
    pub b_loc: Array2<T>,
    pub b_scale: Array2<T>,
}

/// The calibrated object: every hyper-parameter block of the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams<T> {
    variant: Variant,
    layers: Vec<LayerHyper<T>>,
}

fn block_shapes<T: Scalar>(arch: &Architecture<T>, l: usize) -> ((usize, usize), (usize, usize)) {
    let ((o, i), (_, ob)) = arch.layer_shape(l);
    let k = arch.basis_len();
    match arch.variant() {
        Variant::BnnIl | Variant::SbnnIl => ((1, 1), (1, 1)),
        Variant::BnnIp | Variant::SbnnIp => ((o, i), (1, ob)),
        Variant::SbnnVl => ((k, 1), (k, 1)),
        Variant::SbnnVp => ((k, o * i), (k, ob)),
    }
}

impl<T: Scalar> HyperParams<T> {
    /// Every location block set to `loc`, every scale block to `scale`.
    pub fn constant(arch: &Architecture<T>, loc: T, scale: T) -> Self {
        let layers = (1..=arch.layers())
            .map(|l| {
                let (ws, bs) = block_shapes(arch, l);
                LayerHyper {
                    w_loc: Array2::from_elem(ws, loc),
                    w_scale: Array2::from_elem(ws, scale),
                    b_loc: Array2::from_elem(bs, loc),
                    b_scale: Array2::from_elem(bs, scale),
                }
            })
            .collect();
        HyperParams {
            variant: arch.variant(),
            layers,
        }
    }

    /// Starting point for calibration: means zero and scales one; for
    /// spatially varying variants the scale coefficients are standard normal.
    pub fn init(arch: &Architecture<T>, rng: &mut SeededRng) -> Self {
        if arch.variant().is_varying() {
            let mut h = Self::constant(arch, T::zero(), T::zero());
            for layer in &mut h.layers {
                for v in layer.w_scale.iter_mut().chain(layer.b_scale.iter_mut()) {
                    *v = rng.std_normal();
                }
            }
            h
        } else {
            Self::constant(arch, T::zero(), T::one())
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layers(&self) -> &[LayerHyper<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerHyper<T>] {
        &mut self.layers
    }

    /// Blocks in storage order: per layer `w_loc, w_scale, b_loc, b_scale`.
    pub fn blocks(&self) -> Vec<&Array2<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_loc, &l.w_scale, &l.b_loc, &l.b_scale])
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_loc, &mut l.w_scale, &mut l.b_loc, &mut l.b_scale])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.blocks().into_iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn from_flat(arch: &Architecture<T>, flat: &[T]) -> Result<Self> {
        let mut h = Self::constant(arch, T::zero(), T::zero());
        if flat.len() != h.len() {
            return Err(Error::invalid(format!(
                "{} needs {} hyper-parameters, got {}",
                arch.variant(),
                h.len(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for b in h.blocks_mut() {
            b.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(h)
    }

    /// Checks block shapes against `arch` and that every entry is finite.
    pub fn check(&self, arch: &Architecture<T>) -> Result<()> {
        if self.variant != arch.variant() || self.layers.len() != arch.layers() {
            return Err(Error::invalid(format!(
                "hyper-parameters for {} with {} layers do not fit {} with {} layers",
                self.variant,
                self.layers.len(),
                arch.variant(),
                arch.layers()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (ws, bs) = block_shapes(arch, i + 1);
            if layer.w_loc.dim() != ws
                || layer.w_scale.dim() != ws
                || layer.b_loc.dim() != bs
                || layer.b_scale.dim() != bs
            {
                return Err(Error::invalid(format!("layer {} hyper-parameter shapes", i + 1)));
            }
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("hyper-parameters contain non-finite entries"));
        }
        Ok(())
    }

    /// Records every block as a differentiable leaf, in storage order.
    pub fn leaves<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.blocks().into_iter().map(|b| tape.leaf(b.clone())).collect()
    }

    /// Weights at one location for a spatially varying draw:
    /// `mu(s) + sigma(s) * eta` with `basis` the embedding at `s`.
    pub fn weights_at(&self, eta: &Weights<T>, basis: ArrayView1<'_, T>) -> Weights<T> {
        let layers = self
            .layers
            .iter()
            .zip(&eta.layers)
            .map(|(h, (ew, eb))| {
                (
                    varying(&h.w_loc, &h.w_scale, ew, basis),
                    varying(&h.b_loc, &h.b_scale, eb, basis),
                )
            })
            .collect();
        Weights { layers }
    }
}

fn varying<T: Scalar>(loc: &Array2<T>, scale: &Array2<T>, eta: &Array2<T>, basis: ArrayView1<'_, T>) -> Array2<T> {
    let mu = basis.dot(loc);
    let sigma = basis.dot(scale).mapv(softplus);
    let mut out = eta.clone();
    let per_param = mu.len() > 1;
    for (i, v) in out.iter_mut().enumerate() {
        let j = if per_param { i } else { 0 };
        *v = mu[j] + sigma[j] * *v;
    }
    out
}

/// One prior realisation of the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamDraw<T> {
    /// Spatially invariant variants: the weights themselves.
    Invariant(Weights<T>),
    /// Spatially varying variants: the shared standard-normal draws; the
    /// weights at `s` are formed on demand.
    Varying(Weights<T>),
}

impl<T: Scalar> ParamDraw<T> {
    /// Reparameterised draw `theta = mu + softplus(gamma) eta`.
    pub fn sample(psi: &HyperParams<T>, arch: &Architecture<T>, rng: &mut SeededRng) -> Result<Self> {
        psi.check(arch)?;
        let eta = Weights::standard_normal(arch, rng);
        Ok(Self::from_noise(psi, eta))
    }

    /// Applies the reparameterisation to given standard-normal draws.
    pub fn from_noise(psi: &HyperParams<T>, eta: Weights<T>) -> Self {
        if psi.variant().is_varying() {
            return ParamDraw::Varying(eta);
        }
        let mut w = eta;
        for (h, (a, b)) in psi.layers().iter().zip(&mut w.layers) {
            shift_scale(a, &h.w_loc, &h.w_scale);
            shift_scale(b, &h.b_loc, &h.b_scale);
        }
        ParamDraw::Invariant(w)
    }

    pub fn weights(&self) -> &Weights<T> {
        match self {
            ParamDraw::Invariant(w) | ParamDraw::Varying(w) => w,
        }
    }

    pub(crate) fn check(&self, arch: &Architecture<T>) -> Result<()> {
        let ok = self.weights().conforms(arch)
            && matches!(self, ParamDraw::Varying(_)) == arch.variant().is_varying();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("parameter draw does not conform to the architecture"))
        }
    }
}

fn shift_scale<T: Scalar>(eta: &mut Array2<T>, loc: &Array2<T>, scale: &Array2<T>) {
    if loc.len() == 1 {
        let (m, s) = (loc[[0, 0]], softplus(scale[[0, 0]]));
        eta.mapv_inplace(|e| m + s * e);
    } else {
        Zip::from(eta).and(loc).and(scale).for_each(|e, &m, &g| *e = m + softplus(g) * *e);
    }
}

/// Free-function form of [`ParamDraw::sample`].
pub fn sample_prior_params<T: Scalar>(
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
    rng: &mut SeededRng,
) -> Result<ParamDraw<T>> {
    ParamDraw::sample(psi, arch, rng)
}
