//! Constrained policy optimisation: clipped surrogates, log barriers with an
//! adaptive sharpness, feasibility-first training and value regression.

pub mod gae;
pub mod objective;
pub mod policy;
pub mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, discounted_sum, normalize};
pub use objective::{
    clip_surrogate, cost_estimate, cost_surrogate, ipo_objective, log_barrier, phase1_objective,
    BarrierViolation, CostStream, Surrogate,
};
pub use policy::{log_prob, GaussianPolicy, ValueNet};
pub use schedule::{convergence_check, BarrierSchedule};
pub use trainer::{IterationStats, Phase, RngState, Trainer, TrainerSnapshot, UpdateMode, Variant};

use crate::error::{Error, Result};
use crate::safety::{CostModelConfig, LatencyLimit};
use crate::traffic::Slice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    /// The policy learning rate decays linearly to `lr * lr_final_fraction`
    /// over the planned iterations.
    pub lr_final_fraction: f64,
    pub value_lr: f64,
    pub episodes_per_iter: usize,
    pub episode_slots: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub t0: f64,
    pub mu_t: f64,
    pub window: usize,
    pub delta_conv: f64,
    /// EMA factor applied to returns before the convergence test.
    pub smoothing: f64,
    pub phase1_max_iters: usize,
    pub refit_every: usize,
    pub buffer_capacity: usize,
    pub cost_model: CostModelConfig,
    pub dykstra_max_iters: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            lr_final_fraction: 0.1,
            value_lr: 1e-3,
            episodes_per_iter: 20,
            episode_slots: 200,
            epochs: 10,
            minibatch_size: 256,
            max_grad_norm: 0.5,
            hidden: vec![64, 32],
            init_log_std: -0.5,
            t0: 20.0,
            mu_t: 1.5,
            window: 10,
            delta_conv: 0.01,
            smoothing: 0.3,
            phase1_max_iters: 100,
            refit_every: 10,
            buffer_capacity: 20_000,
            cost_model: CostModelConfig::default(),
            dykstra_max_iters: 200,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64, name: &str| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::config(format!("rl.{name} must lie in [0, 1]")))
            }
        };
        unit(self.gamma, "gamma")?;
        unit(self.gae_lambda, "gae_lambda")?;
        unit(self.lr_final_fraction, "lr_final_fraction")?;
        if self.gamma >= 1.0 {
            return Err(Error::config("rl.gamma must be < 1"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("rl.clip_eps must lie in (0, 1)"));
        }
        if !(self.lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::config("rl.lr and rl.value_lr must be > 0"));
        }
        if self.episodes_per_iter == 0 || self.episode_slots == 0 {
            return Err(Error::config(
                "rl.episodes_per_iter and rl.episode_slots must be >= 1",
            ));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::config(
                "rl.epochs and rl.minibatch_size must be >= 1",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "rl.hidden needs at least one non-empty layer",
            ));
        }
        if self.refit_every == 0 {
            return Err(Error::config("rl.refit_every must be >= 1"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("rl.max_grad_norm must be > 0"));
        }
        BarrierSchedule::new(
            self.t0,
            self.mu_t,
            self.window,
            self.delta_conv,
            self.smoothing,
            true,
        )?;
        Ok(())
    }
}

/// Bound on one slice's expected discounted dissatisfaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulativeConstraint {
    pub slice: Slice,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSpec {
    pub cumulative: Vec<CumulativeConstraint>,
    pub latency: Vec<LatencyLimit>,
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        for c in &self.cumulative {
            if !(c.omega.is_finite() && c.omega > 0.0) {
                return Err(Error::config(format!("omega for {} must be > 0", c.slice)));
            }
        }
        for l in &self.latency {
            if !(l.epsilon.is_finite() && l.epsilon > 0.0) {
                return Err(Error::config(format!(
                    "latency epsilon for {} must be > 0",
                    l.slice
                )));
            }
        }
        let mut seen = Vec::new();
        for s in self.cumulative.iter().map(|c| c.slice) {
            if seen.contains(&s) {
                return Err(Error::config(format!(
                    "duplicate cumulative constraint for {s}"
                )));
            }
            seen.push(s);
        }
        let mut seen = Vec::new();
        for s in self.latency.iter().map(|l| l.slice) {
            if seen.contains(&s) {
                return Err(Error::config(format!("duplicate latency limit for {s}")));
            }
            seen.push(s);
        }
        Ok(())
    }
}
