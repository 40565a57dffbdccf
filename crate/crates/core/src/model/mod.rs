//! (S)BNN priors: architecture, hyper-parameters, prior draws and the
//! forward pass.
//!
//! Each layer computes `(1/sqrt(d_{l-1})) W phi + b`; hidden layers apply
//! `tanh`, the output layer is linear. SBNN inputs are the RBF embedding of
//! the location passed through `tanh`; BNN inputs are the raw coordinates.

pub(crate) mod forward;
mod hyper;

pub use forward::{forward, forward_taped, sample_field, sample_fields_taped, Inputs};
pub use hyper::{sample_prior_params, HyperParams, LayerHyper, ParamDraw, Weights};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::math::Grid;
use crate::{Error, Result, Scalar};

/// The six prior families: BNN or SBNN input, spatially Invariant or
/// Varying parameters, hyper-parameters per Layer or per Parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "BNN-IL")]
    BnnIl,
    #[serde(rename = "BNN-IP")]
    BnnIp,
    #[serde(rename = "SBNN-IL")]
    SbnnIl,
    #[serde(rename = "SBNN-IP")]
    SbnnIp,
    #[serde(rename = "SBNN-VL")]
    SbnnVl,
    #[serde(rename = "SBNN-VP")]
    SbnnVp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::BnnIl,
        Variant::BnnIp,
        Variant::SbnnIl,
        Variant::SbnnIp,
        Variant::SbnnVl,
        Variant::SbnnVp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BnnIl => "BNN-IL",
            Variant::BnnIp => "BNN-IP",
            Variant::SbnnIl => "SBNN-IL",
            Variant::SbnnIp => "SBNN-IP",
            Variant::SbnnVl => "SBNN-VL",
            Variant::SbnnVp => "SBNN-VP",
        }
    }

    pub fn is_spatial(self) -> bool {
        !matches!(self, Variant::BnnIl | Variant::BnnIp)
    }

    pub fn is_varying(self) -> bool {
        matches!(self, Variant::SbnnVl | Variant::SbnnVp)
    }

    pub fn per_parameter(self) -> bool {
        matches!(self, Variant::BnnIp | Variant::SbnnIp | Variant::SbnnVp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Gaussian radial basis functions centred on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    centroids: Grid<T>,
    tau: T,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(centroids: Grid<T>, tau: T) -> Result<Self> {
        if !(tau > T::zero() && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(Embedding { centroids, tau })
    }

    pub fn centroids(&self) -> &Grid<T> {
        &self.centroids
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// `exp(-(|s - xi_k| / tau)^2)` for every centroid `xi_k`.
    pub fn embed(&self, s: ArrayView1<'_, T>) -> Array1<T> {
        let c = self.centroids.locations();
        Array1::from_shape_fn(self.len(), |k| {
            let d2: T = (0..c.nrows()).map(|a| (s[a] - c[[a, k]]) * (s[a] - c[[a, k]])).sum();
            (-d2 / (self.tau * self.tau)).exp()
        })
    }

    /// Embedding of each row of `sites` (`n x d`), giving `n x K`.
    pub fn embed_sites(&self, sites: &Array2<T>) -> Array2<T> {
        let mut out = Array2::zeros((sites.nrows(), self.len()));
        for (i, s) in sites.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.embed(s));
        }
        out
    }
}

/// `rbf_embedding(s)` as a free function.
pub fn rbf_embedding<T: Scalar>(s: &[T], embedding: &Embedding<T>) -> Array1<T> {
    embedding.embed(ArrayView1::from(s))
}

/// Layer widths `d_0..d_L` (with `d_L = 1`), the variant and, for SBNNs,
/// the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture<T> {
    variant: Variant,
    dims: Vec<usize>,
    embedding: Option<Embedding<T>>,
}

impl<T: Scalar> Architecture<T> {
    /// `dims` are the layer widths including input and output.
    pub fn new(variant: Variant, dims: Vec<usize>, embedding: Option<Embedding<T>>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("need at least an input and an output width"));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::invalid("the output layer must have width 1"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        match (&embedding, variant.is_spatial()) {
            (Some(e), true) if e.len() != dims[0] => {
                return Err(Error::invalid(format!(
                    "input width {} differs from the {} embedding centroids",
                    dims[0],
                    e.len()
                )));
            }
            (None, true) => return Err(Error::invalid(format!("{variant} needs an embedding"))),
            (Some(_), false) => return Err(Error::invalid(format!("{variant} takes no embedding"))),
            _ => {}
        }
        Ok(Architecture {
            variant,
            dims,
            embedding,
        })
    }

    /// BNN over `d`-dimensional locations with the given hidden widths.
    pub fn bnn(variant: Variant, d: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![d];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::new(variant, dims, None)
    }

    /// SBNN with the given embedding and hidden widths.
    pub fn sbnn(variant: Variant, embedding: Embedding<T>, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![embedding.len()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::new(variant, dims, Some(embedding))
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of weight layers `L`.
    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn embedding(&self) -> Option<&Embedding<T>> {
        self.embedding.as_ref()
    }

    /// Number of basis functions backing spatially varying parameters.
    pub fn basis_len(&self) -> usize {
        self.embedding.as_ref().map_or(0, Embedding::len)
    }

    /// `(weights, biases)` shape of layer `l` (1-based).
    pub fn layer_shape(&self, l: usize) -> ((usize, usize), (usize, usize)) {
        ((self.dims[l], self.dims[l - 1]), (1, self.dims[l]))
    }
}

/// `(weights and biases, hyper-parameters)` for an architecture.
pub fn count_parameters<T: Scalar>(arch: &Architecture<T>) -> (usize, usize) {
    let dims = arch.dims();
    let wb: usize = dims.windows(2).map(|p| p[1] * p[0] + p[1]).sum();
    let l = arch.layers();
    let k = arch.basis_len();
    let hyper = match arch.variant() {
        Variant::BnnIl | Variant::SbnnIl => 4 * l,
        Variant::BnnIp | Variant::SbnnIp => 2 * wb,
        Variant::SbnnVl => 4 * k * l,
        Variant::SbnnVp => 2 * k * wb,
    };
    (wb, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_embedding() -> Embedding<f64> {
        Embedding::new(Grid::square(-4.0, 4.0, 15, 2).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn paper_parameter_counts() {
        let hidden = [40, 40, 40];
        for v in [Variant::BnnIl, Variant::BnnIp] {
            let a = Architecture::<f64>::bnn(v, 2, &hidden).unwrap();
            assert_eq!(count_parameters(&a).0, 3441);
        }
        let expect = [
            (Variant::SbnnIl, 16),
            (Variant::SbnnIp, 24722),
            (Variant::SbnnVl, 3600),
            (Variant::SbnnVp, 5_562_450),
        ];
        for (v, h) in expect {
            let a = Architecture::sbnn(v, paper_embedding(), &hidden).unwrap();
            assert_eq!(count_parameters(&a), (12361, h), "{v}");
        }
    }

    #[test]
    fn architecture_validation() {
        let e = paper_embedding();
        assert!(Architecture::<f64>::new(Variant::SbnnIl, vec![225, 1], None).is_err());
        assert!(Architecture::new(Variant::BnnIl, vec![225, 1], Some(e.clone())).is_err());
        assert!(Architecture::new(Variant::SbnnIl, vec![224, 1], Some(e)).is_err());
        assert!(Architecture::<f64>::new(Variant::BnnIl, vec![2, 3], None).is_err());
        assert!(Architecture::<f64>::new(Variant::BnnIl, vec![2], None).is_err());
        assert!(Embedding::new(Grid::square(0.0, 1.0, 2, 2).unwrap(), 0.0).is_err());
    }

    #[test]
    fn embedding_reference_values() {
        let e = paper_embedding();
        let xi = e.centroids().location(17).to_owned();
        assert_eq!(e.embed(xi.view())[17], 1.0);
        let shifted = [xi[0] + 0.6, xi[1] + 0.8];
        let v = rbf_embedding(&shifted, &e)[17];
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("SBNN-XX".parse::<Variant>().is_err());
    }
}
