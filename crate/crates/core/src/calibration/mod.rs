//! Prior calibration: a gradient-penalised critic estimates the
//! 1-Wasserstein distance between prior and target fields, and the
//! hyper-parameters descend that estimate.
//!
//! Each outer iteration runs an inner loop of Adagrad ascent steps on the
//! critic over one reused batch, then takes a single RMSprop step on the
//! hyper-parameters using a fresh batch. Optimiser state carries over
//! between iterations.

mod critic;
mod optim;

pub use critic::{
    critic_forward, critic_taped, gradient_penalty, mix_pairs, mix_with, penalty_taped, wasserstein_estimate,
    CriticParams,
};
pub use optim::{Adagrad, RmsProp};

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::math::{SeededRng, StreamCounter};
use crate::model::{sample_field, sample_fields_taped, Architecture, HyperParams, Inputs, Weights};
use crate::target::TargetSource;
use crate::{Error, Result, Scalar};

/// Generator draws per tape in the outer step; bounds peak memory.
const OUTER_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    /// Monte Carlo batch size `N`.
    pub batch_size: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    /// Gradient-penalty weight.
    pub zeta: f64,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub critic_width: usize,
    pub trace_window: usize,
    /// Write a checkpoint every this many outer steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            batch_size: 1024,
            inner_steps: 50,
            outer_steps: 4000,
            zeta: 10.0,
            inner_lr: 0.01,
            outer_lr: 0.001,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            critic_width: 200,
            trace_window: 100,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::invalid("zeta must be non-negative"));
        }
        // A zero outer rate is allowed: it freezes the hyper-parameters.
        if !positive(self.inner_lr) || !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.rms_decay >= 0.0 && self.rms_decay < 1.0) || !positive(self.rms_eps) {
            return Err(Error::invalid("rms_decay must lie in [0, 1) and rms_eps be positive"));
        }
        if self.critic_width == 0 || self.trace_window == 0 {
            return Err(Error::invalid("critic_width and trace_window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer_step: usize,
    pub w1: f64,
    /// Batch-mean critic gradient norm at the mixtures after the inner loop.
    pub grad_norm_mean: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibTrace {
    pub rows: Vec<TraceRow>,
    pub window: usize,
}

impl CalibTrace {
    pub fn new(window: usize) -> Self {
        CalibTrace { rows: Vec::new(), window }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean W1 estimate over the last `window` steps.
    pub fn trailing_average(&self) -> Option<f64> {
        let k = self.window.min(self.rows.len());
        if k == 0 {
            return None;
        }
        let tail = &self.rows[self.rows.len() - k..];
        Some(tail.iter().map(|r| r.w1).sum::<f64>() / k as f64)
    }
}

/// What one inner loop did.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport<T> {
    /// Objective (gap minus penalty) at each critic iterate, the entry and
    /// the exit values included: `inner_steps + 1` entries.
    pub objective: Vec<T>,
    /// Mean gradient norm at the mixtures under the entry critic.
    pub grad_norm_start: T,
    /// Mean gradient norm at the mixtures under the updated critic.
    pub grad_norm_mean: T,
}

/// Critic objective on fixed batches: `gap - penalty` and its gradient.
fn critic_objective<T: Scalar>(
    y: &Array2<T>,
    y_target: &Array2<T>,
    ybar: &Array2<T>,
    lambda: &CriticParams<T>,
    zeta: T,
) -> Result<(T, Vec<Array2<T>>, T)> {
    let tape = Tape::new();
    let lam = lambda.leaves(&tape);
    let a = critic_taped(tape.constant(y.clone()), &lam).mean();
    let b = critic_taped(tape.constant(y_target.clone()), &lam).mean();
    let (pen, norms) = penalty_taped(&tape, tape.leaf(ybar.clone()), &lam, zeta)?;
    let obj = a - b - pen;
    let grads = tape.gradients(obj, &lam)?;
    Ok((obj.item(), grads, norms.value().mean().unwrap_or(T::zero())))
}

/// Mean `|grad phi(ybar_i)|` over the rows of `ybar`.
pub fn mean_grad_norm<T: Scalar>(ybar: &Array2<T>, lambda: &CriticParams<T>) -> Result<T> {
    let tape = Tape::new();
    let y = tape.leaf(ybar.clone());
    let lam = lambda.constants(&tape);
    let out = critic_taped(y, &lam).sum();
    let norms = tape.grad_norm(out, y)?;
    Ok(norms.value().mean().unwrap_or(T::zero()))
}

/// W1 estimate and its gradient with respect to the hyper-parameters for
/// given generator noise and a fixed target batch. The target batch only
/// enters the value, never the gradient.
pub fn psi_gradient<T: Scalar>(
    arch: &Architecture<T>,
    inputs: &Inputs<T>,
    psi: &HyperParams<T>,
    lambda: &CriticParams<T>,
    noise: &[Weights<T>],
    y_target: &Array2<T>,
) -> Result<(T, Vec<Array2<T>>)> {
    psi.check(arch)?;
    if noise.len() != y_target.nrows() {
        return Err(Error::invalid("generator and target batches differ in size"));
    }
    let total = T::of_usize(noise.len());
    let parts: Vec<(T, Vec<Array2<T>>)> = noise
        .par_chunks(OUTER_CHUNK)
        .map(|chunk| {
            let tape = Tape::new();
            let leaves = psi.leaves(&tape);
            let y = sample_fields_taped(&tape, arch, &leaves, inputs, chunk)?;
            let lam = lambda.constants(&tape);
            let out = critic_taped(y, &lam).sum().scale(T::one() / total);
            Ok((out.item(), tape.gradients(out, &leaves)?))
        })
        .collect::<Result<_>>()?;
    let mut value = T::zero();
    let mut grads: Vec<Array2<T>> = psi.blocks().iter().map(|b| Array2::zeros(b.dim())).collect();
    for (v, g) in parts {
        value += v;
        for (acc, gi) in grads.iter_mut().zip(g) {
            *acc += &gi;
        }
    }
    let target_term = lambda.evaluate(y_target).mean().unwrap_or(T::zero());
    Ok((value - target_term, grads))
}

/// Calibration state: hyper-parameters, critic and optimiser state.
pub struct Calibrator<T: Scalar> {
    arch: Architecture<T>,
    inputs: Inputs<T>,
    target: TargetSource<T>,
    config: CalibConfig,
    psi: HyperParams<T>,
    critic: CriticParams<T>,
    adagrad: Adagrad<T>,
    rmsprop: RmsProp<T>,
    streams: StreamCounter,
    trace: CalibTrace,
}

impl<T: Scalar> Calibrator<T> {
    /// The critic is initialised from the first stream of `config.seed`.
    pub fn new(
        arch: Architecture<T>,
        inputs: Inputs<T>,
        target: TargetSource<T>,
        psi0: HyperParams<T>,
        config: CalibConfig,
    ) -> Result<Self> {
        config.validate()?;
        psi0.check(&arch)?;
        let mut streams = StreamCounter::new(config.seed);
        let critic = CriticParams::init(inputs.len(), config.critic_width, &mut streams.next_rng())?;
        Ok(Self::with_critic(arch, inputs, target, psi0, critic, config, streams))
    }

    /// Starts from a given critic and stream position.
    pub fn with_critic(
        arch: Architecture<T>,
        inputs: Inputs<T>,
        target: TargetSource<T>,
        psi0: HyperParams<T>,
        critic: CriticParams<T>,
        config: CalibConfig,
        streams: StreamCounter,
    ) -> Self {
        let shapes = |blocks: Vec<&Array2<T>>| blocks.iter().map(|b| b.dim()).collect::<Vec<_>>();
        let adagrad = Adagrad::new(T::of(config.inner_lr), &shapes(critic.blocks()));
        let rmsprop = RmsProp::new(
            T::of(config.outer_lr),
            T::of(config.rms_decay),
            T::of(config.rms_eps),
            &shapes(psi0.blocks()),
        );
        let trace = CalibTrace::new(config.trace_window);
        Calibrator {
            arch,
            inputs,
            target,
            config,
            psi: psi0,
            critic,
            adagrad,
            rmsprop,
            streams,
            trace,
        }
    }

    pub fn psi(&self) -> &HyperParams<T> {
        &self.psi
    }

    pub fn critic(&self) -> &CriticParams<T> {
        &self.critic
    }

    pub fn trace(&self) -> &CalibTrace {
        &self.trace
    }

    pub fn streams(&self) -> &StreamCounter {
        &self.streams
    }

    pub fn config(&self) -> &CalibConfig {
        &self.config
    }

    pub fn into_parts(self) -> (HyperParams<T>, CriticParams<T>, CalibTrace) {
        (self.psi, self.critic, self.trace)
    }

    /// Draws one generator batch, one target batch and their mixtures, then
    /// runs `inner_steps` ascent steps on the critic over that batch.
    pub fn inner_loop(&mut self) -> Result<InnerReport<T>> {
        let n = self.config.batch_size;
        let y = sample_field(&self.psi, &self.arch, &self.inputs, n, &mut self.streams)?;
        let y_target = self.target.draw(n, &mut self.streams)?;
        let ybar = mix_pairs(&y, &y_target, &mut self.streams.next_rng())?;
        let zeta = T::of(self.config.zeta);
        let steps = self.config.inner_steps;
        let mut objective = Vec::with_capacity(steps + 1);
        let mut grad_norm_start = T::zero();
        let mut grad_norm_mean = T::zero();
        for step in 0..=steps {
            let (obj, grads, norm) = critic_objective(&y, &y_target, &ybar, &self.critic, zeta)?;
            if !obj.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::numerical(format!("critic objective is not finite at inner step {step}")));
            }
            objective.push(obj);
            if step == 0 {
                grad_norm_start = norm;
            }
            grad_norm_mean = norm;
            if step < steps {
                self.adagrad.ascend(self.critic.blocks_mut(), &grads);
            }
        }
        Ok(InnerReport {
            objective,
            grad_norm_start,
            grad_norm_mean,
        })
    }

    /// One descent step on the hyper-parameters with a fresh batch; returns
    /// the W1 estimate before the update.
    pub fn outer_step(&mut self) -> Result<T> {
        let n = self.config.batch_size;
        let first = self.streams.reserve(n as u64);
        let seed = self.streams.seed();
        let noise: Vec<Weights<T>> = (0..n)
            .map(|i| Weights::standard_normal(&self.arch, &mut SeededRng::new(seed, first + i as u64)))
            .collect();
        let y_target = self.target.draw(n, &mut self.streams)?;
        let (w1, grads) = psi_gradient(&self.arch, &self.inputs, &self.psi, &self.critic, &noise, &y_target)?;
        if !w1.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical("hyper-parameter gradient is not finite"));
        }
        self.rmsprop.descend(self.psi.blocks_mut(), &grads);
        Ok(w1)
    }

    /// Runs the remaining outer iterations. `on_step` sees the state after
    /// each completed iteration (checkpointing, progress).
    pub fn run<F>(&mut self, mut on_step: F) -> Result<()>
    where
        F: FnMut(&Self) -> Result<()>,
    {
        while self.trace.len() < self.config.outer_steps {
            let start = Instant::now();
            let inner = self.inner_loop()?;
            let w1 = self.outer_step()?;
            self.trace.rows.push(TraceRow {
                outer_step: self.trace.len() + 1,
                w1: w1.as_f64(),
                grad_norm_mean: inner.grad_norm_mean.as_f64(),
                seconds: start.elapsed().as_secs_f64(),
            });
            log::debug!(
                "outer step {}: w1 {:.5} grad norm {:.3}",
                self.trace.len(),
                w1,
                inner.grad_norm_mean
            );
            on_step(self)?;
        }
        Ok(())
    }
}

/// Calibrates `psi0` against `target`, returning the calibrated
/// hyper-parameters and the trace.
pub fn calibrate<T: Scalar>(
    psi0: HyperParams<T>,
    arch: &Architecture<T>,
    inputs: &Inputs<T>,
    target: TargetSource<T>,
    config: &CalibConfig,
) -> Result<(HyperParams<T>, CalibTrace)> {
    let mut cal = Calibrator::new(arch.clone(), inputs.clone(), target, psi0, config.clone())?;
    cal.run(|_| Ok(()))?;
    let (psi, _, trace) = cal.into_parts();
    Ok((psi, trace))
}

/// [`CriticParams::init`] under its operation name.
pub fn critic_init<T: Scalar>(n: usize, width: usize, rng: &mut SeededRng) -> Result<CriticParams<T>> {
    CriticParams::init(n, width, rng)
}

/// Stream used for the starting hyper-parameters of a seeded run.
pub const INIT_STREAM: u64 = 1 << 48;
/// First stream of the pilot draws that centre lognormal targets.
pub const PILOT_STREAM: u64 = 1 << 49;

/// Starting hyper-parameters for a run seeded with `seed`.
pub fn initial_psi<T: Scalar>(arch: &Architecture<T>, seed: u64) -> HyperParams<T> {
    HyperParams::init(arch, &mut SeededRng::new(seed, INIT_STREAM))
}
