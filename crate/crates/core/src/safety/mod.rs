//! Instantaneous-constraint enforcement: the bandwidth budget through a
//! softmax, learned latency limits through an l2 projection.

mod model;
mod projection;

use serde::{Deserialize, Serialize};

pub use model::{
    state_features, CostModel, CostModelConfig, LatencySample, LinearCost, ReplayBuffer,
    STATE_FEATURES,
};
pub use projection::{
    project_action, project_simplex, softmax_project, DykstraConfig, Halfspace, Projection,
};

use crate::env::NUM_SLICES;
use crate::traffic::Slice;

/// Latency limit for one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyLimit {
    pub slice: Slice,
    /// Seconds.
    pub epsilon: f64,
}

/// Projection layer built on a fitted cost model.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyLayer {
    pub model: CostModel,
    pub limits: Vec<f64>,
    pub dykstra: DykstraConfig,
}

impl SafetyLayer {
    pub fn new(model: CostModel, limits: Vec<f64>, dykstra: DykstraConfig) -> Self {
        SafetyLayer {
            model,
            limits,
            dykstra,
        }
    }

    /// Layer for `limits` (in the model's slice order) with the default
    /// projection tolerance for `total_bandwidth`.
    pub fn with_limits(
        model: CostModel,
        limits: &[LatencyLimit],
        total_bandwidth: f64,
        max_iters: usize,
    ) -> Self {
        let dykstra = DykstraConfig {
            max_iters,
            ..DykstraConfig::for_budget(total_bandwidth)
        };
        SafetyLayer::new(model, limits.iter().map(|l| l.epsilon).collect(), dykstra)
    }

    pub fn halfspaces(&self, features: &[f64; NUM_SLICES]) -> Vec<Halfspace> {
        self.model
            .linearize(features)
            .into_iter()
            .zip(&self.limits)
            .map(|(c, eps)| Halfspace {
                normal: c.gradient.to_vec(),
                bound: eps - c.offset,
            })
            .collect()
    }

    /// Nearest allocation to `action_kb` whose predicted latencies respect the limits.
    pub fn apply(
        &self,
        features: &[f64; NUM_SLICES],
        action_kb: &[f64; NUM_SLICES],
    ) -> ([f64; NUM_SLICES], bool) {
        let hs = self.halfspaces(features);
        let p = project_action(action_kb, self.model.total_bandwidth, &hs, &self.dykstra);
        let mut out = [0.0; NUM_SLICES];
        out.copy_from_slice(&p.action);
        (out, p.feasible)
    }
}
