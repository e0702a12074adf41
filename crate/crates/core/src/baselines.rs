//! Heuristic allocators and policy warm start.
//!
//! `packet_number` and `traffic_demand` look at hidden simulator state (the
//! packets and kilobits waiting for the next slot); they serve as reference
//! points and as the imitation target of the warm start.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, Observation, SliceWorld, WorldPeek, NUM_SLICES};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Cache};
use crate::rl::GaussianPolicy;
use crate::safety::softmax_project;
use crate::seed::{derive_rng, derive_seed, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OneThird,
    UserNumber,
    PacketNumber,
    TrafficDemand,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::OneThird,
        BaselineKind::UserNumber,
        BaselineKind::PacketNumber,
        BaselineKind::TrafficDemand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::OneThird => "one_third",
            BaselineKind::UserNumber => "user_number",
            BaselineKind::PacketNumber => "packet_number",
            BaselineKind::TrafficDemand => "traffic_demand",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the allocator reads hidden state.
    pub fn needs_peek(self) -> bool {
        matches!(
            self,
            BaselineKind::PacketNumber | BaselineKind::TrafficDemand
        )
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Splits `total` in proportion to the kind's weights; all-zero weights fall
/// back to equal thirds.
pub fn allocate(
    kind: BaselineKind,
    obs: &Observation,
    peek: Option<&WorldPeek>,
    total: f64,
) -> Result<[f64; NUM_SLICES]> {
    let weights: [f64; NUM_SLICES] = match (kind, peek) {
        (BaselineKind::OneThird, None) => [1.0; NUM_SLICES],
        (BaselineKind::UserNumber, None) => obs.counts.map(f64::from),
        (BaselineKind::PacketNumber, Some(p)) => p.packets.map(|x| x as f64),
        (BaselineKind::TrafficDemand, Some(p)) => p.demand_kb,
        (k, Some(_)) => {
            return Err(Error::contract(format!(
                "{k} does not use privileged state"
            )))
        }
        (k, None) => return Err(Error::contract(format!("{k} needs privileged state"))),
    };
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Ok([total / 3.0; NUM_SLICES]);
    }
    Ok(weights.map(|w| total * w / sum))
}

/// Runs `kind` for one slot of `world`, peeking when the kind requires it.
pub fn allocate_in(kind: BaselineKind, world: &SliceWorld) -> Result<[f64; NUM_SLICES]> {
    let peek = kind.needs_peek().then(|| world.peek());
    allocate(
        kind,
        &world.observation(),
        peek.as_ref(),
        world.config().total_bandwidth_kb,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStartConfig {
    pub samples: usize,
    pub episode_slots: usize,
    pub epochs: usize,
    pub lr: f64,
    pub minibatch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig {
            samples: 2000,
            episode_slots: 200,
            epochs: 200,
            lr: 1e-3,
            minibatch_size: 128,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub train_samples: usize,
    pub holdout_samples: usize,
    /// Samples dropped because a slice had zero demand (log-share undefined).
    pub skipped: usize,
    /// Mean l1 distance between predicted and target shares on held-out states.
    pub holdout_l1: f64,
}

/// Minimum number of imitation samples.
pub const MIN_WARMSTART_SAMPLES: usize = 1000;

/// `(scaled counts, target logits)`: the traffic-demand allocator's shares as
/// logits, shifted to zero mean.
#[allow(clippy::type_complexity)]
pub fn demand_share_samples(
    env_cfg: &EnvConfig,
    n: usize,
    episode_slots: usize,
    seed: u64,
) -> Result<(Vec<[f64; NUM_SLICES]>, Vec<[f64; NUM_SLICES]>, usize)> {
    let mut world = SliceWorld::new(
        env_cfg.clone(),
        derive_seed(seed, purpose::WARMSTART, u64::MAX),
    )?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut skipped = 0;
    let mut episode = 0u64;
    let slots = episode_slots.max(1);
    while xs.len() < n {
        world.reset(derive_seed(seed, purpose::WARMSTART, episode))?;
        episode += 1;
        for _ in 0..slots {
            if xs.len() == n {
                break;
            }
            let obs = world.observation();
            let a = allocate_in(BaselineKind::TrafficDemand, &world)?;
            if a.iter().all(|&x| x > 0.0) {
                let logs = a.map(f64::ln);
                let mean = logs.iter().sum::<f64>() / NUM_SLICES as f64;
                xs.push(obs.features(env_cfg.user_cap));
                ys.push(logs.map(|l| l - mean));
            } else {
                skipped += 1;
                if skipped > 100 * n {
                    return Err(Error::InsufficientData(
                        "traffic-demand shares are almost always degenerate".into(),
                    ));
                }
            }
            world.step(&Action::new(a))?;
        }
    }
    Ok((xs, ys, skipped))
}

/// Fits the policy mean to the traffic-demand allocator's log-shares by
/// least squares (the log standard deviation is left alone).
pub fn warmstart_pretrain(
    policy: &mut GaussianPolicy,
    env_cfg: &EnvConfig,
    cfg: &WarmStartConfig,
    seed: u64,
) -> Result<WarmStartReport> {
    if cfg.samples < MIN_WARMSTART_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "warm start needs at least {MIN_WARMSTART_SAMPLES} samples, got {}",
            cfg.samples
        )));
    }
    if policy.net.input_dim() != NUM_SLICES || policy.act_dim() != NUM_SLICES {
        return Err(Error::contract("warm start expects a 3-in, 3-out policy"));
    }
    let (xs, ys, skipped) = demand_share_samples(env_cfg, cfg.samples, cfg.episode_slots, seed)?;
    let mut rng = derive_rng(seed, purpose::WARMSTART, 0);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let holdout = ((xs.len() as f64 * cfg.holdout_fraction).round() as usize).min(xs.len() - 1);
    let (test_idx, train_idx) = order.split_at(holdout);
    let mut train_idx = train_idx.to_vec();

    let mut opt = Adam::new(policy.net.num_params(), cfg.lr);
    let mut cache = Cache::default();
    let mb = cfg.minibatch_size.max(1);
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(mb) {
            let mut grad = vec![0.0; policy.net.num_params()];
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let out = policy.net.forward_cached(&xs[k], &mut cache);
                let d: Vec<f64> = out
                    .iter()
                    .zip(&ys[k])
                    .map(|(o, y)| 2.0 * scale * (o - y))
                    .collect();
                policy.net.backward(&cache, &d, &mut grad);
            }
            clip_grad_norm(&mut grad, 10.0);
            opt.step(&mut policy.net.params, &grad);
        }
    }

    let l1 = |k: usize| {
        let pred = softmax_project(&policy.net.forward(&xs[k]), 1.0);
        let target = softmax_project(&ys[k], 1.0);
        pred.iter()
            .zip(&target)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
    };
    let holdout_l1 = if test_idx.is_empty() {
        0.0
    } else {
        test_idx.iter().map(|&k| l1(k)).sum::<f64>() / test_idx.len() as f64
    };
    Ok(WarmStartReport {
        train_samples: train_idx.len(),
        holdout_samples: test_idx.len(),
        skipped,
        holdout_l1,
    })
}
