//! Posterior sampling over network weights with stochastic gradient
//! Hamiltonian Monte Carlo, predictive fields, and the exact Gaussian
//! conditioning used as a benchmark.

mod ess;
mod kriging;

pub use ess::effective_sample_size;
pub use kriging::{kriging_oracle, Kriging};

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::math::{softplus, Grid, SeededRng};
use crate::model::forward::{forward_invariant, forward_weights_taped};
use crate::model::{Architecture, HyperParams, Inputs, ParamDraw, Weights};
use crate::{Error, Result, Scalar};

/// How observations relate to the modelled field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    /// The model describes `log Z`.
    Log,
}

/// Noisy point observations `Z_i` at sites `s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    sites: Array2<T>,
    values: Array1<T>,
    noise_var: T,
    transform: Transform,
}

impl<T: Scalar> Dataset<T> {
    /// `sites` is `m x d`. An empty dataset is allowed and leaves only the
    /// prior in the posterior.
    pub fn new(sites: Array2<T>, values: Array1<T>, noise_var: T, transform: Transform) -> Result<Self> {
        if sites.nrows() != values.len() {
            return Err(Error::invalid(format!(
                "{} sites but {} values",
                sites.nrows(),
                values.len()
            )));
        }
        if !(noise_var > T::zero() && noise_var.is_finite()) {
            return Err(Error::invalid(format!("noise_var must be positive, got {noise_var}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("observation {i} is not finite")));
        }
        if sites.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation sites must be finite"));
        }
        if transform == Transform::Log {
            if let Some(i) = values.iter().position(|&v| v <= T::zero()) {
                return Err(Error::invalid(format!(
                    "log transform needs positive values; observation {i} is {}",
                    values[i]
                )));
            }
        }
        Ok(Dataset {
            sites: sites.as_standard_layout().into_owned(),
            values,
            noise_var,
            transform,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sites(&self) -> &Array2<T> {
        &self.sites
    }

    pub fn values(&self) -> &Array1<T> {
        &self.values
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Values on the modelled scale.
    pub fn transformed(&self) -> Array1<T> {
        match self.transform {
            Transform::Identity => self.values.clone(),
            Transform::Log => self.values.mapv(|v| v.ln()),
        }
    }

    /// Errors unless every site lies inside the grid's domain.
    pub fn check_domain(&self, grid: &Grid<T>) -> Result<()> {
        if self.sites.ncols() != grid.dim() {
            return Err(Error::invalid("site dimension differs from the grid"));
        }
        for (i, s) in self.sites.rows().into_iter().enumerate() {
            if !grid.contains(&s.to_vec()) {
                return Err(Error::invalid(format!("observation {i} lies outside the domain")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SghmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub step_size: f64,
    pub friction: f64,
    /// Defaults to `min(m, 32)`.
    pub minibatch: Option<usize>,
    pub seed: u64,
}

impl Default for SghmcConfig {
    fn default() -> Self {
        SghmcConfig {
            chains: 4,
            iterations: 300_000,
            burn_in: 100_000,
            thin: 1000,
            step_size: 1e-5,
            friction: 0.05,
            minibatch: None,
            seed: 0,
        }
    }
}

impl SghmcConfig {
    pub fn minibatch_for(&self, m: usize) -> usize {
        self.minibatch.unwrap_or(m.min(32))
    }

    /// Checks the chain protocol against a dataset of size `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::invalid("need at least one chain"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::invalid("burn_in must be smaller than iterations"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be non-negative"));
        }
        if !(self.friction > 0.0 && self.friction <= 1.0) {
            return Err(Error::invalid("friction must lie in (0, 1]"));
        }
        let b = self.minibatch_for(m);
        if m > 0 && (b == 0 || b > m) {
            return Err(Error::invalid(format!("minibatch {b} must lie in 1..={m}")));
        }
        Ok(())
    }

    /// Stored draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Log-density split into prior and per-observation likelihood terms, as
/// SGHMC needs them.
pub trait Potential<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    /// Number of observations `m`.
    fn data_len(&self) -> usize;
    /// Gradient of the log-prior.
    fn prior_grad(&self, theta: &[T]) -> Vec<T>;
    /// Gradient of `sum_{i in batch} log p(z_i | theta)`.
    fn likelihood_grad(&self, theta: &[T], batch: &[usize]) -> Result<Vec<T>>;
}

/// Gradient of the energy `U = -log posterior` from the observations in
/// `batch`, with the likelihood rescaled by `m / |batch|`.
pub fn energy_grad<T: Scalar, P: Potential<T> + ?Sized>(potential: &P, theta: &[T], batch: &[usize]) -> Result<Vec<T>> {
    let mut g = potential.prior_grad(theta);
    if !batch.is_empty() {
        let lik = potential.likelihood_grad(theta, batch)?;
        let scale = T::of_usize(potential.data_len()) / T::of_usize(batch.len());
        for (gi, li) in g.iter_mut().zip(lik) {
            *gi += scale * li;
        }
    }
    for gi in &mut g {
        *gi = -*gi;
    }
    Ok(g)
}

/// Posterior of an invariant (S)BNN's weights and biases given data and
/// calibrated hyper-parameters. Parameters are flattened layer by layer,
/// weights row-major and then biases.
#[derive(Debug, Clone)]
pub struct NetworkPotential<T> {
    arch: Architecture<T>,
    phi0: Array2<T>,
    targets: Array1<T>,
    noise_var: T,
    prior_loc: Vec<T>,
    prior_prec: Vec<T>,
}

impl<T: Scalar> NetworkPotential<T> {
    /// `mean_field` (on `grid`) is the offset added to network outputs,
    /// looked up at the grid cell containing each site.
    pub fn new(
        arch: &Architecture<T>,
        psi: &HyperParams<T>,
        data: &Dataset<T>,
        mean_field: Option<(&Grid<T>, &Array1<T>)>,
    ) -> Result<Self> {
        if arch.variant().is_varying() {
            return Err(Error::UnsupportedVariant(arch.variant().name().to_string()));
        }
        psi.check(arch)?;
        let mut targets = data.transformed();
        if let Some((grid, field)) = mean_field {
            if field.len() != grid.len() {
                return Err(Error::invalid("mean field length differs from the grid"));
            }
            for (i, s) in data.sites().rows().into_iter().enumerate() {
                let cell = grid
                    .nearest(&s.to_vec())
                    .ok_or_else(|| Error::invalid(format!("observation {i} lies outside the domain")))?;
                targets[i] -= field[cell];
            }
        }
        let phi0 = if data.is_empty() {
            Array2::zeros((0, arch.dims()[0]))
        } else {
            Inputs::new(arch, data.sites())?.phi0
        };
        let (mut prior_loc, mut prior_prec) = (Vec::new(), Vec::new());
        for (l, h) in psi.layers().iter().enumerate() {
            let ((o, i), _) = arch.layer_shape(l + 1);
            for (loc, scale, count) in [(&h.w_loc, &h.w_scale, o * i), (&h.b_loc, &h.b_scale, o)] {
                let locs: Vec<T> = loc.iter().copied().collect();
                let sds: Vec<T> = scale.iter().map(|&g| softplus(g)).collect();
                for k in 0..count {
                    let j = if locs.len() == 1 { 0 } else { k };
                    prior_loc.push(locs[j]);
                    prior_prec.push(T::one() / (sds[j] * sds[j]));
                }
            }
        }
        Ok(NetworkPotential {
            arch: arch.clone(),
            phi0,
            targets,
            noise_var: data.noise_var(),
            prior_loc,
            prior_prec,
        })
    }

    fn weights(&self, theta: &[T]) -> Result<Weights<T>> {
        Weights::from_flat(&self.arch, theta)
    }

    /// Network output at the observation sites.
    pub fn fitted(&self, theta: &[T]) -> Result<Array1<T>> {
        Ok(forward_invariant(&self.phi0, &self.weights(theta)?))
    }

    pub fn log_prior(&self, theta: &[T]) -> T {
        let half = T::of(0.5);
        theta
            .iter()
            .zip(&self.prior_loc)
            .zip(&self.prior_prec)
            .map(|((&t, &m), &p)| -half * p * (t - m) * (t - m))
            .sum()
    }

    pub fn log_likelihood(&self, theta: &[T]) -> Result<T> {
        let f = self.fitted(theta)?;
        let ss: T = f.iter().zip(&self.targets).map(|(&a, &z)| (z - a) * (z - a)).sum();
        Ok(-ss / (T::of(2.0) * self.noise_var))
    }

    /// Unnormalised log-posterior; additive constants are dropped.
    pub fn log_posterior(&self, theta: &[T]) -> Result<T> {
        Ok(self.log_prior(theta) + self.log_likelihood(theta)?)
    }
}

impl<T: Scalar> Potential<T> for NetworkPotential<T> {
    fn dim(&self) -> usize {
        self.prior_loc.len()
    }

    fn data_len(&self) -> usize {
        self.targets.len()
    }

    fn prior_grad(&self, theta: &[T]) -> Vec<T> {
        theta
            .iter()
            .zip(&self.prior_loc)
            .zip(&self.prior_prec)
            .map(|((&t, &m), &p)| -p * (t - m))
            .collect()
    }

    fn likelihood_grad(&self, theta: &[T], batch: &[usize]) -> Result<Vec<T>> {
        if batch.is_empty() {
            return Ok(vec![T::zero(); self.dim()]);
        }
        let w = self.weights(theta)?;
        let tape = Tape::new();
        let layers: Vec<_> = w
            .layers
            .iter()
            .map(|(a, b)| (tape.leaf(a.clone()), tape.leaf(b.clone())))
            .collect();
        let phi0 = tape.constant(self.phi0.select(Axis(0), batch));
        let z = self.targets.select(Axis(0), batch).insert_axis(Axis(1));
        let out = forward_weights_taped(phi0, &layers);
        let resid = tape.constant(z) - out;
        let loglik = resid.square().sum().scale(-T::one() / (T::of(2.0) * self.noise_var));
        let leaves: Vec<_> = layers.iter().flat_map(|&(a, b)| [a, b]).collect();
        let grads = tape.gradients(loglik, &leaves)?;
        Ok(grads.iter().flat_map(|g| g.iter().copied()).collect())
    }
}

/// Free-function form of [`NetworkPotential::log_posterior`].
pub fn log_posterior_unnorm<T: Scalar>(
    theta: &Weights<T>,
    data: &Dataset<T>,
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
) -> Result<T> {
    NetworkPotential::new(arch, psi, data, None)?.log_posterior(&theta.to_flat())
}

/// Stored draws, one `draws x p` matrix per chain in chain order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples<T> {
    pub chains: Vec<Array2<T>>,
    pub config: SghmcConfig,
}

impl<T: Scalar> PosteriorSamples<T> {
    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.nrows()).sum()
    }

    /// All draws stacked in chain order.
    pub fn stacked(&self) -> Array2<T> {
        let views: Vec<_> = self.chains.iter().map(|c| c.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("chains share a parameter count")
    }

    /// Per-chain traces of parameter `j`.
    pub fn trace(&self, j: usize) -> Vec<Vec<T>> {
        self.chains.iter().map(|c| c.column(j).to_vec()).collect()
    }
}

/// One SGHMC chain from `theta0`; returns the stored draws.
pub fn sghmc_chain<T: Scalar, P: Potential<T> + ?Sized>(
    potential: &P,
    theta0: Vec<T>,
    config: &SghmcConfig,
    rng: &mut SeededRng,
    chain: usize,
) -> Result<Array2<T>> {
    let m = potential.data_len();
    config.validate(m)?;
    if theta0.len() != potential.dim() {
        return Err(Error::invalid("initial state has the wrong length"));
    }
    let b = config.minibatch_for(m);
    let eps = T::of(config.step_size);
    let fr = T::of(config.friction);
    let noise_sd = (T::of(2.0) * fr * eps).sqrt();
    let all: Vec<usize> = (0..m).collect();
    let mut theta = theta0;
    let mut v = vec![T::zero(); theta.len()];
    let mut draws = Array2::zeros((config.draws_per_chain(), theta.len()));
    let mut stored = 0;
    for it in 1..=config.iterations {
        let picked;
        let batch: &[usize] = if b == m {
            &all
        } else {
            picked = index::sample(rng, m, b).into_vec();
            &picked
        };
        let g = energy_grad(potential, &theta, batch)?;
        for ((t, vi), gi) in theta.iter_mut().zip(&mut v).zip(g) {
            *vi = (T::one() - fr) * *vi - eps * gi + noise_sd * rng.std_normal::<T>();
            *t += *vi;
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::numerical(format!("chain {chain} diverged at iteration {it}")));
        }
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 {
            draws.row_mut(stored).assign(&Array1::from(theta.clone()));
            stored += 1;
        }
    }
    Ok(draws)
}

/// Runs `config.chains` independent chains, chain `c` on stream `c` of
/// `config.seed`, each started from `init`.
pub fn run_chains<T, P, F>(potential: &P, config: &SghmcConfig, init: F) -> Result<PosteriorSamples<T>>
where
    T: Scalar,
    P: Potential<T> + ?Sized,
    F: Fn(&mut SeededRng) -> Result<Vec<T>> + Sync,
{
    config.validate(potential.data_len())?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = SeededRng::new(config.seed, c as u64);
            let theta0 = init(&mut rng)?;
            sghmc_chain(potential, theta0, config, &mut rng, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        chains,
        config: config.clone(),
    })
}

/// SGHMC over the weights of an invariant (S)BNN; chains start from draws
/// of the calibrated prior.
pub fn sghmc_sample<T: Scalar>(
    data: &Dataset<T>,
    psi: &HyperParams<T>,
    arch: &Architecture<T>,
    config: &SghmcConfig,
    mean_field: Option<(&Grid<T>, &Array1<T>)>,
) -> Result<PosteriorSamples<T>> {
    let potential = NetworkPotential::new(arch, psi, data, mean_field)?;
    run_chains(&potential, config, |rng| {
        Ok(ParamDraw::sample(psi, arch, rng)?.weights().to_flat())
    })
}

/// Predictive draws (one row per stored parameter draw), their pointwise
/// mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive<T> {
    pub draws: Array2<T>,
    pub mean: Array1<T>,
    pub sd: Array1<T>,
}

impl<T: Scalar> Predictive<T> {
    /// Pointwise summaries of `draws` (rows are fields). The sd uses the
    /// `N - 1` divisor and is zero for a single draw.
    pub fn from_draws(draws: Array2<T>) -> Result<Self> {
        let n = draws.nrows();
        if n == 0 {
            return Err(Error::invalid("need at least one draw"));
        }
        let mean = draws.mean_axis(Axis(0)).expect("nonempty");
        let sd = if n == 1 {
            Array1::zeros(draws.ncols())
        } else {
            draws.var_axis(Axis(0), T::one()).mapv(|v| v.sqrt())
        };
        Ok(Predictive { draws, mean, sd })
    }
}

/// Evaluates every stored draw at `inputs`, adding `mean_field` if given.
pub fn predictive_field<T: Scalar>(
    samples: &PosteriorSamples<T>,
    inputs: &Inputs<T>,
    arch: &Architecture<T>,
    mean_field: Option<&Array1<T>>,
) -> Result<Predictive<T>> {
    if arch.variant().is_varying() {
        return Err(Error::UnsupportedVariant(arch.variant().name().to_string()));
    }
    if let Some(m) = mean_field {
        if m.len() != inputs.len() {
            return Err(Error::invalid("mean field length differs from the inputs"));
        }
    }
    let stacked = samples.stacked();
    if stacked.nrows() == 0 {
        return Err(Error::invalid("no posterior draws"));
    }
    let rows = stacked
        .rows()
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|theta| {
            let w = Weights::from_flat(arch, theta.as_slice().expect("standard layout"))?;
            let mut f = forward_invariant(&inputs.phi0, &w);
            if let Some(m) = mean_field {
                f += m;
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut draws = Array2::zeros((rows.len(), inputs.len()));
    for (i, r) in rows.into_iter().enumerate() {
        draws.row_mut(i).assign(&r);
    }
    Predictive::from_draws(draws)
}
