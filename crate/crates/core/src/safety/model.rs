//! Learned latency model, linear in the action.
//!
//! For each latency-limited slice the model predicts
//!
//! ```text
//! l(s, a) = f(s) + g(s) . a,   f(s) = w_0 . phi(s),   g_k(s) = w_k . phi(s) / B
//! ```
//!
//! where `phi(s)` is the quadratic monomial basis of the scaled user counts.
//! The weights are a ridge least-squares fit over a ring buffer of observed
//! `(state, action, latency)` triples.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::NUM_SLICES;
use crate::error::{Error, Result};
use crate::traffic::Slice;

/// Monomials of degree <= 2 in three variables.
pub const STATE_FEATURES: usize = 10;
const ROW: usize = STATE_FEATURES * (NUM_SLICES + 1);

pub fn state_features(x: &[f64; NUM_SLICES]) -> [f64; STATE_FEATURES] {
    let [a, b, c] = *x;
    [1.0, a, b, c, a * a, b * b, c * c, a * b, a * c, b * c]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    /// Scaled user counts.
    pub features: [f64; NUM_SLICES],
    /// Allocation actually applied, kilobits.
    pub action_kb: [f64; NUM_SLICES],
    /// Observed per-slice latency, seconds.
    pub latency: [f64; NUM_SLICES],
}

/// Fixed-capacity FIFO of latency samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: VecDeque<LatencySample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, s: LatencySample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LatencySample> {
        self.samples.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModelConfig {
    pub ridge: f64,
    pub min_samples: usize,
    /// When set, latency targets are capped at `target_cap_factor * epsilon`
    /// before fitting. Off by default: capping flattens the fitted slope and
    /// the layer then under-allocates to a slice that is building a backlog.
    pub target_cap_factor: Option<f64>,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        CostModelConfig {
            ridge: 1e-4,
            min_samples: 200,
            target_cap_factor: None,
        }
    }
}

/// `f + g . a` for one constraint at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCost {
    pub offset: f64,
    pub gradient: [f64; NUM_SLICES],
}

impl LinearCost {
    pub fn eval(&self, a: &[f64; NUM_SLICES]) -> f64 {
        self.offset + self.gradient.iter().zip(a).map(|(g, x)| g * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub slices: Vec<Slice>,
    pub total_bandwidth: f64,
    /// One row of `STATE_FEATURES * 4` weights per slice.
    pub weights: Vec<Vec<f64>>,
}

fn design_row(
    features: &[f64; NUM_SLICES],
    action_kb: &[f64; NUM_SLICES],
    total: f64,
) -> [f64; ROW] {
    let phi = state_features(features);
    let mut row = [0.0; ROW];
    for (k, chunk) in row.chunks_mut(STATE_FEATURES).enumerate() {
        let scale = if k == 0 {
            1.0
        } else {
            action_kb[k - 1] / total
        };
        for (r, p) in chunk.iter_mut().zip(&phi) {
            *r = p * scale;
        }
    }
    row
}

impl CostModel {
    /// A model that predicts zero latency everywhere (no projection happens).
    pub fn zero(slices: Vec<Slice>, total_bandwidth: f64) -> Self {
        let weights = vec![vec![0.0; ROW]; slices.len()];
        CostModel {
            slices,
            total_bandwidth,
            weights,
        }
    }

    /// Ridge fit of every slice's latency; `limits[j]` is the latency limit of
    /// `slices[j]` (used for target capping).
    pub fn fit(
        slices: Vec<Slice>,
        limits: &[f64],
        total_bandwidth: f64,
        buffer: &ReplayBuffer,
        cfg: &CostModelConfig,
    ) -> Result<Self> {
        if buffer.len() < cfg.min_samples {
            return Err(Error::InsufficientData(format!(
                "cost model needs {} samples, buffer holds {}",
                cfg.min_samples,
                buffer.len()
            )));
        }
        let n = buffer.len();
        let mut x = DMatrix::<f64>::zeros(n, ROW);
        for (i, s) in buffer.iter().enumerate() {
            let row = design_row(&s.features, &s.action_kb, total_bandwidth);
            x.row_mut(i).copy_from_slice(&row);
        }
        let mut gram = x.transpose() * &x / n as f64;
        for d in 0..ROW {
            gram[(d, d)] += cfg.ridge;
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::Internal("cost model normal equations not positive definite".into())
        })?;
        let mut weights = Vec::with_capacity(slices.len());
        for (j, slice) in slices.iter().enumerate() {
            let cap = cfg
                .target_cap_factor
                .map_or(f64::INFINITY, |f| f * limits[j]);
            let y =
                DVector::from_iterator(n, buffer.iter().map(|s| s.latency[slice.index()].min(cap)));
            let rhs = x.transpose() * y / n as f64;
            weights.push(chol.solve(&rhs).iter().copied().collect());
        }
        Ok(CostModel {
            slices,
            total_bandwidth,
            weights,
        })
    }

    /// Linearisation in the action (exact: the model is linear in `a`).
    pub fn linearize(&self, features: &[f64; NUM_SLICES]) -> Vec<LinearCost> {
        let phi = state_features(features);
        let dot = |w: &[f64]| w.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        self.weights
            .iter()
            .map(|w| {
                let mut gradient = [0.0; NUM_SLICES];
                for (k, g) in gradient.iter_mut().enumerate() {
                    *g = dot(&w[(k + 1) * STATE_FEATURES..(k + 2) * STATE_FEATURES])
                        / self.total_bandwidth;
                }
                LinearCost {
                    offset: dot(&w[..STATE_FEATURES]),
                    gradient,
                }
            })
            .collect()
    }

    pub fn predict(&self, features: &[f64; NUM_SLICES], action_kb: &[f64; NUM_SLICES]) -> Vec<f64> {
        self.linearize(features)
            .iter()
            .map(|c| c.eval(action_kb))
            .collect()
    }
}
