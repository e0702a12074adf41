//! Deterministic evaluation of a policy or baseline on fresh episodes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::baselines::{allocate_in, BaselineKind};
use crate::env::{Action, EnvConfig, Observation, SliceWorld, StepOutcome, NUM_SLICES};
use crate::error::{Error, Result};
use crate::rl::{ConstraintSpec, GaussianPolicy};
use crate::safety::{softmax_project, SafetyLayer};
use crate::seed::{derive_seed, purpose};

#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    /// Mean action, then the safety layer if one is given.
    Policy {
        policy: &'a GaussianPolicy,
        safety: Option<&'a SafetyLayer>,
    },
    Baseline(BaselineKind),
}

impl Agent<'_> {
    /// Allocation for the world's upcoming slot; the flag reports whether the
    /// safety layer changed it.
    pub fn act(&self, world: &SliceWorld) -> Result<([f64; NUM_SLICES], bool)> {
        match self {
            Agent::Baseline(kind) => Ok((allocate_in(*kind, world)?, false)),
            Agent::Policy { policy, safety } => {
                let cfg = world.config();
                let f = world.observation().features(cfg.user_cap);
                Ok(policy_action(policy, *safety, &f, cfg.total_bandwidth_kb))
            }
        }
    }
}

/// Deterministic allocation: mean logits, softmax onto the budget, then the
/// safety layer. The flag reports whether the layer moved the action.
pub fn policy_action(
    policy: &GaussianPolicy,
    safety: Option<&SafetyLayer>,
    features: &[f64; NUM_SLICES],
    total: f64,
) -> ([f64; NUM_SLICES], bool) {
    let (mean, _) = policy.forward(features);
    let s = softmax_project(&mean, total);
    let a = [s[0], s[1], s[2]];
    match safety {
        Some(layer) => {
            let (p, _) = layer.apply(features, &a);
            (p, p != a)
        }
        None => (a, false),
    }
}

/// A trained policy as deployed: the checkpoint's network plus its safety
/// layer when the method uses one.
#[derive(Debug, Clone)]
pub struct DeployedPolicy {
    pub policy: GaussianPolicy,
    pub safety: Option<SafetyLayer>,
    pub user_cap: usize,
    pub total_bandwidth_kb: f64,
}

impl DeployedPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = &ck.config;
        let variant = cfg
            .method
            .variant()
            .ok_or_else(|| Error::config("checkpoint has no learned policy"))?;
        let safety = match (&ck.cost_model, variant.safety_layer) {
            (Some(model), true) => Some(SafetyLayer::with_limits(
                model.clone(),
                &cfg.constraints.latency,
                cfg.env.total_bandwidth_kb,
                cfg.rl.dykstra_max_iters,
            )),
            _ => None,
        };
        Ok(DeployedPolicy {
            policy: ck.policy()?,
            safety,
            user_cap: cfg.env.user_cap,
            total_bandwidth_kb: cfg.env.total_bandwidth_kb,
        })
    }

    pub fn agent(&self) -> Agent<'_> {
        Agent::Policy {
            policy: &self.policy,
            safety: self.safety.as_ref(),
        }
    }

    pub fn act(&self, obs: &Observation) -> [f64; NUM_SLICES] {
        policy_action(
            &self.policy,
            self.safety.as_ref(),
            &obs.features(self.user_cap),
            self.total_bandwidth_kb,
        )
        .0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceStats {
    pub mean_users: f64,
    pub mean_fresh_packets: f64,
    pub mean_fresh_kb: f64,
    /// Fresh kilobits per active user per slot (ratio of totals).
    pub per_user_fresh_kb: f64,
    /// Backlog plus fresh traffic.
    pub mean_demand_kb: f64,
    pub mean_allocation_kb: f64,
    pub mean_latency: f64,
    pub mean_dissatisfaction: f64,
    /// Per-episode discounted dissatisfaction, mean and standard deviation.
    pub discounted_cost_mean: f64,
    pub discounted_cost_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub slots: usize,
    /// Undiscounted throughput per episode, kilobits.
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_per_slot: f64,
    /// Discounted dissatisfaction of each constrained slice, in constraint order.
    pub cost_j: Vec<f64>,
    /// Fraction of slots where some latency limit was exceeded.
    pub latency_violation_frac: f64,
    pub projected_frac: f64,
    pub slices: [SliceStats; NUM_SLICES],
    /// Mean latency at each slot index, averaged over episodes.
    pub latency_series: Vec<[f64; NUM_SLICES]>,
    /// Every slot conserved bits exactly (backlog + fresh = sent + left).
    pub bits_conserved: bool,
}

pub const TRAJECTORY_HEADER: &[&str] = &[
    "episode",
    "slot",
    "users_video",
    "users_volte",
    "users_urllc",
    "alloc_video",
    "alloc_volte",
    "alloc_urllc",
    "demand_video",
    "demand_volte",
    "demand_urllc",
    "reward",
    "dissat_video",
    "dissat_volte",
    "dissat_urllc",
    "latency_video",
    "latency_volte",
    "latency_urllc",
];

fn trajectory_row(ep: usize, slot: usize, a: &[f64; NUM_SLICES], out: &StepOutcome) -> Vec<String> {
    let mut row = vec![ep.to_string(), slot.to_string()];
    row.extend(out.obs.counts.iter().map(|c| c.to_string()));
    row.extend(a.iter().map(|x| x.to_string()));
    row.extend(out.diagnostics.demand_kb.iter().map(|x| x.to_string()));
    row.push(out.reward.to_string());
    row.extend(out.cum_costs.iter().map(|x| x.to_string()));
    row.extend(out.inst_costs.iter().map(|x| x.to_string()));
    row
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    /// Discount for the per-episode dissatisfaction sums.
    pub gamma: f64,
    pub episodes: usize,
    pub slots: usize,
    pub seed: u64,
}

/// Runs `spec.episodes` episodes of `spec.slots` slots; episode `k` is
/// seeded from `(seed, eval-env, k)`, so every agent sees the same traffic.
pub fn evaluate(
    agent: Agent<'_>,
    env_cfg: &EnvConfig,
    constraints: &ConstraintSpec,
    spec: &EvalSpec,
    mut trajectory: Option<&mut dyn Write>,
) -> Result<EvalReport> {
    let EvalSpec {
        gamma,
        episodes,
        slots,
        seed,
    } = *spec;
    if episodes == 0 || slots == 0 {
        return Err(Error::contract(
            "evaluation needs at least one episode and one slot",
        ));
    }
    let mut world = SliceWorld::new(
        env_cfg.clone(),
        derive_seed(seed, purpose::EVAL_ENV, u64::MAX),
    )?;
    let mut csv_out = trajectory
        .as_mut()
        .map(|w| csv::Writer::from_writer(w as &mut dyn Write));
    if let Some(w) = csv_out.as_mut() {
        w.write_record(TRAJECTORY_HEADER)?;
    }

    let mut rewards = Vec::with_capacity(episodes);
    let mut disc: [Vec<f64>; NUM_SLICES] = Default::default();
    let mut users = [0u64; NUM_SLICES];
    let mut packets = [0u64; NUM_SLICES];
    let mut fresh = [0.0; NUM_SLICES];
    let mut demand = [0.0; NUM_SLICES];
    let mut alloc = [0.0; NUM_SLICES];
    let mut lat = [0.0; NUM_SLICES];
    let mut diss = [0.0; NUM_SLICES];
    let mut series = vec![[0.0; NUM_SLICES]; slots];
    let mut lat_viol = 0usize;
    let mut projected = 0usize;
    let mut conserved = true;

    for ep in 0..episodes {
        world.reset(derive_seed(seed, purpose::EVAL_ENV, ep as u64))?;
        let mut total = 0.0;
        let mut d = [0.0; NUM_SLICES];
        let mut g = 1.0;
        for (slot, lat_acc) in series.iter_mut().enumerate() {
            let (a, proj) = agent.act(&world)?;
            projected += usize::from(proj);
            let out = world.step(&Action::new(a))?;
            let diag = &out.diagnostics;
            total += out.reward;
            for k in 0..NUM_SLICES {
                users[k] += u64::from(out.obs.counts[k]);
                packets[k] += diag.fresh_packets[k];
                fresh[k] += diag.fresh_kb[k];
                demand[k] += diag.demand_kb[k];
                alloc[k] += a[k];
                lat[k] += out.inst_costs[k];
                diss[k] += out.cum_costs[k];
                lat_acc[k] += out.inst_costs[k] / episodes as f64;
                d[k] += g * out.cum_costs[k];
                conserved &= diag.backlog_bits_before[k] + diag.fresh_bits[k]
                    == diag.transmitted_bits[k] + diag.backlog_bits_after[k];
            }
            g *= gamma;
            if constraints
                .latency
                .iter()
                .any(|l| out.inst_costs[l.slice.index()] > l.epsilon)
            {
                lat_viol += 1;
            }
            if let Some(w) = csv_out.as_mut() {
                w.write_record(trajectory_row(ep, slot, &a, &out))?;
            }
        }
        rewards.push(total);
        for k in 0..NUM_SLICES {
            disc[k].push(d[k]);
        }
    }
    if let Some(mut w) = csv_out {
        w.flush()?;
    }

    let n = (episodes * slots) as f64;
    let slices: [SliceStats; NUM_SLICES] = std::array::from_fn(|k| {
        let (dm, ds) = mean_std(&disc[k]);
        SliceStats {
            mean_users: users[k] as f64 / n,
            mean_fresh_packets: packets[k] as f64 / n,
            mean_fresh_kb: fresh[k] / n,
            per_user_fresh_kb: if users[k] == 0 {
                0.0
            } else {
                fresh[k] / users[k] as f64
            },
            mean_demand_kb: demand[k] / n,
            mean_allocation_kb: alloc[k] / n,
            mean_latency: lat[k] / n,
            mean_dissatisfaction: diss[k] / n,
            discounted_cost_mean: dm,
            discounted_cost_std: ds,
        }
    });
    let (reward_mean, reward_std) = mean_std(&rewards);
    Ok(EvalReport {
        episodes,
        slots,
        reward_mean,
        reward_std,
        reward_per_slot: reward_mean / slots as f64,
        cost_j: constraints
            .cumulative
            .iter()
            .map(|c| slices[c.slice.index()].discounted_cost_mean)
            .collect(),
        latency_violation_frac: lat_viol as f64 / n,
        projected_frac: projected as f64 / n,
        slices,
        latency_series: series,
        bits_conserved: conserved,
    })
}
