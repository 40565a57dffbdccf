//! Target processes: covariance functions, exact Gaussian simulation, the
//! lognormal transform, ingestion of external realisations and centering.

use std::path::PathBuf;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::load_realisations;
use crate::math::{cholesky, Grid, SeededRng, StreamCounter};
use crate::{Error, Result, Scalar};

/// Which process to calibrate against, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum TargetSpec {
    /// Zero-mean unit-variance GP with squared-exponential covariogram.
    #[serde(rename = "stationary-sqexp-gp")]
    SqExp { length_scale: f64 },
    /// Zero-mean unit-variance GP with the Paciorek construction around
    /// kernel matrices `exp(kappa * |s - focus|) I`.
    #[serde(rename = "nonstationary-paciorek-gp")]
    Paciorek {
        length_scale: f64,
        kappa: f64,
        focus: Vec<f64>,
    },
    /// Elementwise exponential of a Matern-3/2 GP.
    #[serde(rename = "lognormal-matern32")]
    LognormalMatern32 { length_scale: f64 },
    /// Realisations read from a file.
    #[serde(rename = "external-realisations")]
    External { path: PathBuf },
}

fn check_length_scale<T: Scalar>(l: T) -> Result<()> {
    if l > T::zero() && l.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("length scale must be positive, got {l}")))
    }
}

fn check_lag<T: Scalar>(h: T) -> Result<()> {
    if h >= T::zero() {
        Ok(())
    } else {
        Err(Error::invalid(format!("lag must be nonnegative, got {h}")))
    }
}

/// `exp(-h^2 / (2 l^2))`.
pub fn sqexp_covariogram<T: Scalar>(h: T, l: T) -> Result<T> {
    check_length_scale(l)?;
    check_lag(h)?;
    Ok(sqexp(h * h, l))
}

/// `(1 + sqrt(3) h / l) exp(-sqrt(3) h / l)`.
pub fn matern32_covariogram<T: Scalar>(h: T, l: T) -> Result<T> {
    check_length_scale(l)?;
    check_lag(h)?;
    Ok(matern32(h, l))
}

fn sqexp<T: Scalar>(h2: T, l: T) -> T {
    (-h2 / (T::of(2.0) * l * l)).exp()
}

fn matern32<T: Scalar>(h: T, l: T) -> T {
    let a = T::of(3.0).sqrt() * h / l;
    (T::one() + a) * (-a).exp()
}

/// Paciorek covariance between `s` and `r` with squared-exponential base.
///
/// With isotropic kernel matrices `a I` the determinant factors reduce to
/// `(a_s a_r)^(d/4) ((a_s + a_r)/2)^(-d/2)` and `Q = |s - r|^2 / ((a_s + a_r)/2)`.
pub fn paciorek_cov<T: Scalar>(s: &[T], r: &[T], kappa: T, focus: &[T], l: T) -> Result<T> {
    check_length_scale(l)?;
    if !(kappa >= T::zero()) {
        return Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")));
    }
    if s.len() != r.len() || s.len() != focus.len() {
        return Err(Error::invalid("paciorek_cov: dimension mismatch"));
    }
    Ok(paciorek(s, r, kappa, focus, l))
}

fn kernel_scale<T: Scalar>(s: &[T], kappa: T, focus: &[T]) -> T {
    let d2: T = s.iter().zip(focus).map(|(&a, &b)| (a - b) * (a - b)).sum();
    (kappa * d2.sqrt()).exp()
}

fn paciorek<T: Scalar>(s: &[T], r: &[T], kappa: T, focus: &[T], l: T) -> T {
    if s == r {
        return T::one();
    }
    let d = T::of_usize(s.len());
    let a_s = kernel_scale(s, kappa, focus);
    let a_r = kernel_scale(r, kappa, focus);
    let avg = (a_s + a_r) * T::of(0.5);
    let h2: T = s.iter().zip(r).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let pre = (a_s * a_r).powf(d / T::of(4.0)) * avg.powf(-d / T::of(2.0));
    pre * sqexp(h2 / avg, l)
}

impl TargetSpec {
    pub fn validate(&self, grid: &Grid<f64>) -> Result<()> {
        match self {
            TargetSpec::SqExp { length_scale } | TargetSpec::LognormalMatern32 { length_scale } => {
                check_length_scale(*length_scale)
            }
            TargetSpec::Paciorek {
                length_scale,
                kappa,
                focus,
            } => {
                check_length_scale(*length_scale)?;
                if !(*kappa >= 0.0) {
                    return Err(Error::invalid(format!("kappa must be nonnegative, got {kappa}")));
                }
                if !grid.contains(focus) {
                    return Err(Error::invalid("focus point lies outside the domain"));
                }
                Ok(())
            }
            TargetSpec::External { .. } => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, TargetSpec::SqExp { .. } | TargetSpec::Paciorek { .. })
    }

    /// Covariance of the underlying Gaussian process between two points
    /// (the log-scale process for the lognormal kind).
    pub fn covariance<T: Scalar>(&self, s: &[T], r: &[T]) -> Result<T> {
        let dist = || -> T { s.iter().zip(r).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt() };
        match self {
            TargetSpec::SqExp { length_scale } => sqexp_covariogram(dist(), T::of(*length_scale)),
            TargetSpec::LognormalMatern32 { length_scale } => {
                matern32_covariogram(dist(), T::of(*length_scale))
            }
            TargetSpec::Paciorek {
                length_scale,
                kappa,
                focus,
            } => {
                let focus: Vec<T> = focus.iter().map(|&v| T::of(v)).collect();
                paciorek_cov(s, r, T::of(*kappa), &focus, T::of(*length_scale))
            }
            TargetSpec::External { .. } => Err(Error::invalid(
                "external realisations have no covariance function",
            )),
        }
    }
}

/// Covariance matrix of the (underlying Gaussian) target over the grid.
///
/// The upper triangle is computed and mirrored, so the result is exactly
/// symmetric.
pub fn build_covariance<T: Scalar>(grid: &Grid<T>, spec: &TargetSpec) -> Result<Array2<T>> {
    let n = grid.len();
    let sites = grid.sites();
    // validate parameters once through the checked path
    let first = sites.row(0).to_vec();
    spec.covariance(&first, &first)?;
    let entry: Box<dyn Fn(&[T], &[T]) -> T + Sync> = match spec {
        TargetSpec::SqExp { length_scale } => {
            let l = T::of(*length_scale);
            Box::new(move |s, r| sqexp(sq_dist(s, r), l))
        }
        TargetSpec::LognormalMatern32 { length_scale } => {
            let l = T::of(*length_scale);
            Box::new(move |s, r| matern32(sq_dist(s, r).sqrt(), l))
        }
        TargetSpec::Paciorek {
            length_scale,
            kappa,
            focus,
        } => {
            let (l, k) = (T::of(*length_scale), T::of(*kappa));
            let focus: Vec<T> = focus.iter().map(|&v| T::of(v)).collect();
            Box::new(move |s, r| paciorek(s, r, k, &focus, l))
        }
        TargetSpec::External { .. } => unreachable!("rejected by the covariance check"),
    };
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let si = sites.row(i);
            let si = si.as_slice().expect("sites are contiguous");
            (i..n)
                .map(|j| entry(si, sites.row(j).as_slice().expect("sites are contiguous")))
                .collect()
        })
        .collect();
    let mut sigma = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            sigma[[i, i + k]] = v;
            sigma[[i + k, i]] = v;
        }
    }
    Ok(sigma)
}

fn sq_dist<T: Scalar>(s: &[T], r: &[T]) -> T {
    s.iter().zip(r).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// Draws `count` standard-normal rows, row `i` from stream `first + i`.
pub(crate) fn normal_rows<T: Scalar>(seed: u64, first: u64, count: usize, len: usize) -> Array2<T> {
    let rows: Vec<Vec<T>> = (0..count)
        .into_par_iter()
        .map(|i| SeededRng::new(seed, first + i as u64).normal_vec(len))
        .collect();
    let mut out = Array2::zeros((count, len));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&Array1::from_vec(row));
    }
    out
}

/// Exact sampler for the Gaussian-based kinds, reusing one factorisation.
#[derive(Debug, Clone)]
pub struct GaussianSampler<T> {
    lower: Array2<T>,
    exponentiate: bool,
}

impl<T: Scalar> GaussianSampler<T> {
    pub fn new(spec: &TargetSpec, grid: &Grid<T>) -> Result<Self> {
        let exponentiate = matches!(spec, TargetSpec::LognormalMatern32 { .. });
        if !(spec.is_gaussian() || exponentiate) {
            return Err(Error::invalid("external realisations cannot be simulated"));
        }
        let sigma = build_covariance(grid, spec)?;
        let factor = cholesky(&sigma, T::zero())?;
        Ok(GaussianSampler {
            lower: factor.into_lower(),
            exponentiate,
        })
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// `count` fields (one per row), replicate `i` on its own stream.
    pub fn sample(&self, count: usize, streams: &mut StreamCounter) -> Array2<T> {
        let n = self.lower.nrows();
        let first = streams.reserve(count as u64);
        let z = normal_rows::<T>(streams.seed(), first, count, n);
        let mut y = z.dot(&self.lower.t());
        if self.exponentiate {
            y.mapv_inplace(|v| v.exp());
        }
        y
    }
}

/// Loads external realisations and checks they sit on `grid`.
pub fn load_external_realisations(path: &std::path::Path, grid: &Grid<f64>) -> Result<Array2<f64>> {
    let file = load_realisations(path)?;
    if file.grid.dims() != grid.dims() || file.grid.bounds() != grid.bounds() {
        return Err(Error::format(
            "realisation file",
            "header",
            format!(
                "grid {:?} over {:?} does not match the configured {:?} over {:?}",
                file.grid.dims(),
                file.grid.bounds(),
                grid.dims(),
                grid.bounds()
            ),
        ));
    }
    Ok(file.fields)
}

/// `count` target fields (one per row).
pub fn simulate_target<T: Scalar>(
    spec: &TargetSpec,
    grid: &Grid<T>,
    count: usize,
    streams: &mut StreamCounter,
) -> Result<Array2<T>> {
    if count == 0 {
        return Err(Error::invalid("need at least one realisation"));
    }
    match spec {
        TargetSpec::External { path } => {
            let g = grid64(grid)?;
            let all = load_external_realisations(path, &g)?;
            if all.nrows() < count {
                return Err(Error::InsufficientData {
                    requested: count,
                    available: all.nrows(),
                });
            }
            Ok(all.slice(ndarray::s![..count, ..]).mapv(T::of))
        }
        _ => Ok(GaussianSampler::new(spec, grid)?.sample(count, streams)),
    }
}

fn grid64<T: Scalar>(grid: &Grid<T>) -> Result<Grid<f64>> {
    let b: Vec<(f64, f64)> = grid.bounds().iter().map(|&(a, c)| (a.as_f64(), c.as_f64())).collect();
    Grid::new(&b, grid.dims())
}

/// Subtracts the per-location empirical mean; returns the centered fields and
/// the mean field.
pub fn center_realisations<T: Scalar>(fields: &Array2<T>) -> Result<(Array2<T>, Array1<T>)> {
    if fields.nrows() < 2 {
        return Err(Error::invalid("centering needs at least two realisations"));
    }
    let mean = fields.mean_axis(Axis(0)).expect("nonempty");
    let centered = fields - &mean.view().insert_axis(Axis(0));
    Ok((centered, mean))
}

/// Where calibration gets its target batches from.
#[derive(Debug, Clone)]
pub enum TargetSource<T> {
    /// Fresh exact draws, minus an optional fixed offset field.
    Simulated {
        sampler: GaussianSampler<T>,
        offset: Option<Array1<T>>,
    },
    /// A fixed pool; each batch is a fresh subsample without replacement.
    Pool { fields: Array2<T> },
}

impl<T: Scalar> TargetSource<T> {
    /// Builds the source for `spec`. Lognormal and external targets are
    /// centered with the empirical mean of `pilot` realisations (or of the
    /// whole file), which is then reported by [`TargetSource::mean_field`].
    pub fn from_spec(
        spec: &TargetSpec,
        grid: &Grid<T>,
        pilot: usize,
        streams: &mut StreamCounter,
    ) -> Result<(Self, Option<Array1<T>>)> {
        match spec {
            TargetSpec::External { path } => {
                let all = load_external_realisations(path, &grid64(grid)?)?.mapv(T::of);
                let (centered, mean) = center_realisations(&all)?;
                Ok((TargetSource::Pool { fields: centered }, Some(mean)))
            }
            TargetSpec::LognormalMatern32 { .. } => {
                let sampler = GaussianSampler::new(spec, grid)?;
                let pilot_fields = sampler.sample(pilot.max(2), streams);
                let (_, mean) = center_realisations(&pilot_fields)?;
                let source = TargetSource::Simulated {
                    sampler,
                    offset: Some(mean.clone()),
                };
                Ok((source, Some(mean)))
            }
            _ => Ok((
                TargetSource::Simulated {
                    sampler: GaussianSampler::new(spec, grid)?,
                    offset: None,
                },
                None,
            )),
        }
    }

    pub fn draw(&self, count: usize, streams: &mut StreamCounter) -> Result<Array2<T>> {
        match self {
            TargetSource::Simulated { sampler, offset } => {
                let mut y = sampler.sample(count, streams);
                if let Some(m) = offset {
                    y -= &m.view().insert_axis(Axis(0));
                }
                Ok(y)
            }
            TargetSource::Pool { fields } => {
                if fields.nrows() < count {
                    return Err(Error::InsufficientData {
                        requested: count,
                        available: fields.nrows(),
                    });
                }
                let mut rng = streams.next_rng();
                let picks = index::sample(&mut rng, fields.nrows(), count).into_vec();
                Ok(fields.select(Axis(0), &picks))
            }
        }
    }
}
