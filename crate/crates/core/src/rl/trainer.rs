use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::{compute_gae, discounted_sum, normalize};
use super::objective::{
    clip_surrogate, cost_surrogate, ipo_objective, phase1_objective, BarrierViolation, CostStream,
    Surrogate,
};
use super::policy::{GaussianPolicy, ValueNet};
use super::schedule::BarrierSchedule;
use super::{ConstraintSpec, RlConfig};
use crate::env::{Action, EnvConfig, SliceWorld, NUM_SLICES};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Cache};
use crate::safety::{softmax_project, CostModel, LatencySample, ReplayBuffer, SafetyLayer};
use crate::seed::{derive_rng, derive_seed, purpose};

/// Which parts of the full algorithm are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Feasibility phase plus barrier objective; otherwise plain clipped surrogate.
    pub constrained: bool,
    pub adaptive_t: bool,
    pub safety_layer: bool,
}

impl Variant {
    pub const CLARA: Variant = Variant {
        constrained: true,
        adaptive_t: true,
        safety_layer: true,
    };
    pub const IPO_FIXED_T: Variant = Variant {
        constrained: true,
        adaptive_t: false,
        safety_layer: false,
    };
    pub const ADAPTIVE_IPO: Variant = Variant {
        constrained: true,
        adaptive_t: true,
        safety_layer: false,
    };
    pub const PPO: Variant = Variant {
        constrained: false,
        adaptive_t: false,
        safety_layer: false,
    };
    pub const PPO_SAFELAYER: Variant = Variant {
        constrained: false,
        adaptive_t: false,
        safety_layer: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    One,
    Two,
}

/// Objective used for one iteration's policy update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    Unconstrained,
    /// Reducing constraint `i` with barriers on the ones before it.
    Feasibility(usize),
    Ipo,
    /// Constraint `i` was violated in Phase II; reducing it alone.
    Recovery(usize),
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpdateMode::Unconstrained => write!(f, "unconstrained"),
            UpdateMode::Feasibility(i) => write!(f, "feasibility:{i}"),
            UpdateMode::Ipo => write!(f, "ipo"),
            UpdateMode::Recovery(i) => write!(f, "recovery:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub phase: Phase,
    pub mode: UpdateMode,
    /// Undiscounted episode throughput, kilobits, averaged over the batch.
    pub mean_episode_reward: f64,
    /// Mean discounted cumulative cost per cumulative constraint.
    pub cost_j: Vec<f64>,
    /// Fraction of episodes whose discounted cost exceeded the limit.
    pub cost_violation_frac: Vec<f64>,
    pub mean_dissatisfaction: [f64; NUM_SLICES],
    pub mean_latency: [f64; NUM_SLICES],
    /// Fraction of slots in which any latency limit was exceeded.
    pub latency_violation_frac: f64,
    pub mean_allocation: [f64; NUM_SLICES],
    /// Barrier sharpness used for this iteration's update.
    pub t: f64,
    pub t_increased: bool,
    pub approx_kl: f64,
    pub value_loss: f64,
    /// Minibatches in which a barrier left its domain mid-epoch.
    pub barrier_fallbacks: usize,
    pub projected_frac: f64,
    pub infeasible_projections: usize,
}

struct Batch {
    obs: Vec<[f64; NUM_SLICES]>,
    raw: Vec<[f64; NUM_SLICES]>,
    logp: Vec<f64>,
    adv_r: Vec<f64>,
    ret_r: Vec<f64>,
    adv_c: Vec<Vec<f64>>,
    ret_c: Vec<Vec<f64>>,
    j_bar: Vec<f64>,
}

/// Everything needed to resume training bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSnapshot {
    pub iteration: u64,
    pub phase: Phase,
    pub phase1_iters: usize,
    pub policy: GaussianPolicy,
    pub values: Vec<ValueNet>,
    pub policy_opt: Adam,
    pub value_opts: Vec<Adam>,
    pub schedule: BarrierSchedule,
    pub rng: RngState,
    pub buffer: ReplayBuffer,
    pub cost_model: Option<CostModel>,
}

/// ChaCha stream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: the position is a 128-bit integer.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Internal(format!("bad rng word position {:?}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

pub struct Trainer {
    cfg: RlConfig,
    env_cfg: EnvConfig,
    constraints: ConstraintSpec,
    variant: Variant,
    seed: u64,
    planned_iterations: u64,
    policy: GaussianPolicy,
    policy_opt: Adam,
    values: Vec<ValueNet>,
    value_opts: Vec<Adam>,
    schedule: BarrierSchedule,
    phase: Phase,
    phase1_iters: usize,
    iteration: u64,
    rng: ChaCha8Rng,
    buffer: ReplayBuffer,
    safety: Option<SafetyLayer>,
    world: SliceWorld,
}

impl Trainer {
    pub fn new(
        cfg: RlConfig,
        env_cfg: EnvConfig,
        constraints: ConstraintSpec,
        variant: Variant,
        seed: u64,
        planned_iterations: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        constraints.validate()?;
        let mut init = derive_rng(seed, purpose::INIT, 0);
        let policy = GaussianPolicy::new(
            NUM_SLICES,
            &cfg.hidden,
            NUM_SLICES,
            cfg.init_log_std,
            &mut init,
        );
        let scale = 1.0 / (1.0 - cfg.gamma);
        let values: Vec<ValueNet> = (0..=constraints.cumulative.len())
            .map(|_| ValueNet::new(NUM_SLICES, &cfg.hidden, scale, &mut init))
            .collect();
        let policy_opt = Adam::new(policy.num_params(), cfg.lr);
        let value_opts = values
            .iter()
            .map(|v| Adam::new(v.net.num_params(), cfg.value_lr))
            .collect();
        let schedule = BarrierSchedule::new(
            cfg.t0,
            cfg.mu_t,
            cfg.window,
            cfg.delta_conv,
            cfg.smoothing,
            variant.adaptive_t,
        )?;
        let world = SliceWorld::new(
            env_cfg.clone(),
            derive_seed(seed, purpose::TRAIN_ENV, u64::MAX),
        )?;
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Ok(Trainer {
            phase: if variant.constrained {
                Phase::One
            } else {
                Phase::Two
            },
            cfg,
            env_cfg,
            constraints,
            variant,
            seed,
            planned_iterations: planned_iterations.max(1),
            policy,
            policy_opt,
            values,
            value_opts,
            schedule,
            phase1_iters: 0,
            iteration: 0,
            rng: derive_rng(seed, purpose::POLICY, 0),
            buffer,
            safety: None,
            world,
        })
    }

    pub fn config(&self) -> &RlConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn schedule(&self) -> &BarrierSchedule {
        &self.schedule
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut GaussianPolicy {
        &mut self.policy
    }

    pub fn safety_layer(&self) -> Option<&SafetyLayer> {
        self.safety.as_ref()
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            iteration: self.iteration,
            phase: self.phase,
            phase1_iters: self.phase1_iters,
            policy: self.policy.clone(),
            values: self.values.clone(),
            policy_opt: self.policy_opt.clone(),
            value_opts: self.value_opts.clone(),
            schedule: self.schedule.clone(),
            rng: RngState::capture(&self.rng),
            buffer: self.buffer.clone(),
            cost_model: self.safety.as_ref().map(|s| s.model.clone()),
        }
    }

    pub fn restore(&mut self, snap: TrainerSnapshot) -> Result<()> {
        if snap.policy.num_params() != self.policy.num_params()
            || snap.values.len() != self.values.len()
        {
            return Err(Error::config(
                "checkpoint does not match the configured network shapes",
            ));
        }
        self.iteration = snap.iteration;
        self.phase = snap.phase;
        self.phase1_iters = snap.phase1_iters;
        self.policy = snap.policy;
        self.values = snap.values;
        self.policy_opt = snap.policy_opt;
        self.value_opts = snap.value_opts;
        self.schedule = snap.schedule;
        self.rng = snap.rng.restore()?;
        self.buffer = snap.buffer;
        self.safety = snap.cost_model.map(|m| self.make_layer(m));
        Ok(())
    }

    fn latency_limits(&self) -> Vec<f64> {
        self.constraints.latency.iter().map(|l| l.epsilon).collect()
    }

    fn make_layer(&self, model: CostModel) -> SafetyLayer {
        SafetyLayer::with_limits(
            model,
            &self.constraints.latency,
            self.env_cfg.total_bandwidth_kb,
            self.cfg.dykstra_max_iters,
        )
    }

    fn current_lr(&self) -> f64 {
        let frac = (self.iteration as f64 / self.planned_iterations as f64).min(1.0);
        self.cfg.lr * (1.0 - (1.0 - self.cfg.lr_final_fraction) * frac)
    }

    fn feasible(&self, j_bar: &[f64]) -> Vec<bool> {
        j_bar
            .iter()
            .zip(&self.constraints.cumulative)
            .map(|(j, c)| j - c.omega < 0.0)
            .collect()
    }

    fn choose_mode(&mut self, j_bar: &[f64]) -> Result<UpdateMode> {
        if !self.variant.constrained {
            return Ok(UpdateMode::Unconstrained);
        }
        let feasible = self.feasible(j_bar);
        let first_bad = feasible.iter().position(|ok| !ok);
        match (self.phase, first_bad) {
            (Phase::One, Some(i)) => {
                if self.phase1_iters >= self.cfg.phase1_max_iters {
                    let detail: Vec<String> = self
                        .constraints
                        .cumulative
                        .iter()
                        .zip(j_bar)
                        .map(|(c, j)| format!("{}: J = {j:.4}, omega = {}", c.slice, c.omega))
                        .collect();
                    return Err(Error::Training(format!(
                        "no feasible policy after {} feasibility iterations ({})",
                        self.phase1_iters,
                        detail.join("; ")
                    )));
                }
                self.phase1_iters += 1;
                Ok(UpdateMode::Feasibility(i))
            }
            (Phase::One, None) => {
                self.phase = Phase::Two;
                Ok(UpdateMode::Ipo)
            }
            (Phase::Two, Some(i)) => Ok(UpdateMode::Recovery(i)),
            (Phase::Two, None) => Ok(UpdateMode::Ipo),
        }
    }

    /// Collects a batch, updates policy and value networks, adapts `t` and
    /// refits the latency model on schedule.
    pub fn step(&mut self) -> Result<IterationStats> {
        let (batch, mut stats) = self.rollout()?;
        let mode = self.choose_mode(&batch.j_bar)?;
        stats.phase = self.phase;
        stats.mode = mode;
        stats.t = self.schedule.t;
        self.policy_opt.lr = self.current_lr();
        let (fallbacks, value_loss) = self.update(&batch, mode);
        stats.barrier_fallbacks = fallbacks;
        stats.value_loss = value_loss;
        stats.approx_kl = self.approx_kl(&batch);
        if self.variant.constrained && self.phase == Phase::Two && mode == UpdateMode::Ipo {
            stats.t_increased = self.schedule.observe(stats.mean_episode_reward);
        }
        if self.variant.safety_layer
            && !self.constraints.latency.is_empty()
            && self.iteration.is_multiple_of(self.cfg.refit_every as u64)
        {
            let slices = self.constraints.latency.iter().map(|l| l.slice).collect();
            match CostModel::fit(
                slices,
                &self.latency_limits(),
                self.env_cfg.total_bandwidth_kb,
                &self.buffer,
                &self.cfg.cost_model,
            ) {
                Ok(model) => self.safety = Some(self.make_layer(model)),
                Err(Error::InsufficientData(_)) => {}
                Err(e) => return Err(e),
            }
        }
        self.iteration += 1;
        Ok(stats)
    }

    fn rollout(&mut self) -> Result<(Batch, IterationStats)> {
        let n_ep = self.cfg.episodes_per_iter;
        let horizon = self.cfg.episode_slots;
        let gamma = self.cfg.gamma;
        let lambda = self.cfg.gae_lambda;
        let b_total = self.env_cfg.total_bandwidth_kb;
        let cap = self.env_cfg.user_cap;
        let m = self.constraints.cumulative.len();
        let cap_n = n_ep * horizon;

        let mut batch = Batch {
            obs: Vec::with_capacity(cap_n),
            raw: Vec::with_capacity(cap_n),
            logp: Vec::with_capacity(cap_n),
            adv_r: Vec::with_capacity(cap_n),
            ret_r: Vec::with_capacity(cap_n),
            adv_c: vec![Vec::with_capacity(cap_n); m],
            ret_c: vec![Vec::with_capacity(cap_n); m],
            j_bar: vec![0.0; m],
        };
        let mut reward_sum = 0.0;
        let mut diss_sum = [0.0; NUM_SLICES];
        let mut lat_sum = [0.0; NUM_SLICES];
        let mut alloc_sum = [0.0; NUM_SLICES];
        let mut lat_viol = 0usize;
        let mut projected = 0usize;
        let mut infeasible = 0usize;
        let mut cost_viol = vec![0usize; m];

        for e in 0..n_ep {
            let ep_seed = derive_seed(
                self.seed,
                purpose::TRAIN_ENV,
                self.iteration * n_ep as u64 + e as u64,
            );
            let mut obs = self.world.reset(ep_seed)?;
            let mut rewards = Vec::with_capacity(horizon);
            let mut costs = vec![Vec::with_capacity(horizon); m];
            for _ in 0..horizon {
                let f = obs.features(cap);
                let (raw, lp) = self.policy.sample(&f, &mut self.rng);
                let soft = softmax_project(&raw, b_total);
                let mut a = [soft[0], soft[1], soft[2]];
                if self.variant.safety_layer {
                    if let Some(layer) = &self.safety {
                        let (p, ok) = layer.apply(&f, &a);
                        if p != a {
                            projected += 1;
                        }
                        if !ok {
                            infeasible += 1;
                        }
                        a = p;
                    }
                }
                let out = self.world.step(&Action::new(a))?;
                rewards.push(out.reward / b_total);
                reward_sum += out.reward;
                for k in 0..NUM_SLICES {
                    diss_sum[k] += out.cum_costs[k];
                    lat_sum[k] += out.inst_costs[k];
                    alloc_sum[k] += a[k];
                }
                for (i, c) in self.constraints.cumulative.iter().enumerate() {
                    costs[i].push(out.cum_costs[c.slice.index()]);
                }
                if self
                    .constraints
                    .latency
                    .iter()
                    .any(|l| out.inst_costs[l.slice.index()] > l.epsilon)
                {
                    lat_viol += 1;
                }
                if !self.constraints.latency.is_empty() {
                    self.buffer.push(LatencySample {
                        features: f,
                        action_kb: a,
                        latency: out.inst_costs,
                    });
                }
                batch.obs.push(f);
                batch.raw.push([raw[0], raw[1], raw[2]]);
                batch.logp.push(lp);
                obs = out.next_obs;
            }
            let start = batch.obs.len() - horizon;
            let last = obs.features(cap);
            let states = &batch.obs[start..];

            let v_r: Vec<f64> = states.iter().map(|s| self.values[0].predict(s)).collect();
            let boot = self.values[0].predict(&last);
            let adv = compute_gae(&rewards, &v_r, boot, gamma, lambda);
            batch.ret_r.extend(adv.iter().zip(&v_r).map(|(a, v)| a + v));
            batch.adv_r.extend(adv);
            for i in 0..m {
                let net = &self.values[i + 1];
                let v: Vec<f64> = states.iter().map(|s| net.predict(s)).collect();
                // dissatisfaction is in [0, 1]; an untrained net can bootstrap outside that
                let boot = net.predict(&last).clamp(0.0, 1.0 / (1.0 - gamma));
                let adv = compute_gae(&costs[i], &v, boot, gamma, lambda);
                batch.ret_c[i].extend(adv.iter().zip(&v).map(|(a, v)| a + v));
                batch.adv_c[i].extend(adv);
                let j = discounted_sum(&costs[i], boot, gamma);
                batch.j_bar[i] += j / n_ep as f64;
                if j > self.constraints.cumulative[i].omega {
                    cost_viol[i] += 1;
                }
            }
        }
        normalize(&mut batch.adv_r);

        let slots = (n_ep * horizon) as f64;
        let stats = IterationStats {
            iteration: self.iteration,
            phase: self.phase,
            mode: UpdateMode::Unconstrained,
            mean_episode_reward: reward_sum / n_ep as f64,
            cost_j: batch.j_bar.clone(),
            cost_violation_frac: cost_viol.iter().map(|&c| c as f64 / n_ep as f64).collect(),
            mean_dissatisfaction: diss_sum.map(|x| x / slots),
            mean_latency: lat_sum.map(|x| x / slots),
            latency_violation_frac: lat_viol as f64 / slots,
            mean_allocation: alloc_sum.map(|x| x / slots),
            t: self.schedule.t,
            t_increased: false,
            approx_kl: 0.0,
            value_loss: 0.0,
            barrier_fallbacks: 0,
            projected_frac: projected as f64 / slots,
            infeasible_projections: infeasible,
        };
        Ok((batch, stats))
    }

    fn objective(
        &self,
        mode: UpdateMode,
        new: &[f64],
        old: &[f64],
        adv_r: &[f64],
        streams: &[CostStream],
    ) -> (Surrogate, bool) {
        let eps = self.cfg.clip_eps;
        let t = self.schedule.t;
        let reduce = |i: usize| {
            let mut s = cost_surrogate(new, old, streams[i].adv, eps);
            s.value = -s.value;
            s.dlogp.iter_mut().for_each(|d| *d = -*d);
            s
        };
        let fallback = |r: std::result::Result<Surrogate, BarrierViolation>, offset: usize| match r
        {
            Ok(s) => (s, false),
            Err(v) => (reduce(offset + v.index), true),
        };
        match mode {
            UpdateMode::Unconstrained => (clip_surrogate(new, old, adv_r, eps), false),
            UpdateMode::Ipo => fallback(ipo_objective(new, old, adv_r, streams, t, eps), 0),
            UpdateMode::Feasibility(i) => fallback(
                phase1_objective(new, old, &streams[i], &streams[..i], t, eps),
                0,
            ),
            UpdateMode::Recovery(i) => (reduce(i), false),
        }
    }

    /// Returns (minibatches that fell back to a cost-reduction step, last value loss).
    fn update(&mut self, batch: &Batch, mode: UpdateMode) -> (usize, f64) {
        let n = batch.obs.len();
        let m = batch.j_bar.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut caches: Vec<Cache> = Vec::new();
        let mut fallbacks = 0;
        let mut value_loss = 0.0;
        let mb = self.cfg.minibatch_size.min(n);
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                if caches.len() < chunk.len() {
                    caches.resize_with(chunk.len(), Cache::default);
                }
                let new: Vec<f64> = chunk
                    .iter()
                    .zip(caches.iter_mut())
                    .map(|(&k, c)| self.policy.log_prob_cached(&batch.obs[k], &batch.raw[k], c))
                    .collect();
                let old: Vec<f64> = chunk.iter().map(|&k| batch.logp[k]).collect();
                let adv_r: Vec<f64> = chunk.iter().map(|&k| batch.adv_r[k]).collect();
                let adv_c: Vec<Vec<f64>> = (0..m)
                    .map(|i| chunk.iter().map(|&k| batch.adv_c[i][k]).collect())
                    .collect();
                let streams: Vec<CostStream> = (0..m)
                    .map(|i| CostStream {
                        j_old: batch.j_bar[i],
                        omega: self.constraints.cumulative[i].omega,
                        adv: &adv_c[i],
                    })
                    .collect();
                let (obj, fell_back) = self.objective(mode, &new, &old, &adv_r, &streams);
                fallbacks += usize::from(fell_back);

                let mut grad = vec![0.0; self.policy.num_params()];
                for (j, &k) in chunk.iter().enumerate() {
                    if obj.dlogp[j] != 0.0 {
                        self.policy.backward_log_prob(
                            &caches[j],
                            &batch.raw[k],
                            -obj.dlogp[j],
                            &mut grad,
                        );
                    }
                }
                clip_grad_norm(&mut grad, self.cfg.max_grad_norm);
                let mut params = self.policy.flat_params();
                self.policy_opt.step(&mut params, &grad);
                self.policy.set_flat_params(&params);

                let obs: Vec<&[f64]> = chunk.iter().map(|&k| &batch.obs[k][..]).collect();
                value_loss = 0.0;
                for (v, (net, opt)) in self
                    .values
                    .iter_mut()
                    .zip(self.value_opts.iter_mut())
                    .enumerate()
                {
                    let targets: Vec<f64> = if v == 0 {
                        chunk.iter().map(|&k| batch.ret_r[k]).collect()
                    } else {
                        chunk.iter().map(|&k| batch.ret_c[v - 1][k]).collect()
                    };
                    let mut g = vec![0.0; net.net.num_params()];
                    value_loss += net.regression_grad(&obs, &targets, &mut g);
                    clip_grad_norm(&mut g, self.cfg.max_grad_norm);
                    opt.step(&mut net.net.params, &g);
                }
            }
        }
        (fallbacks, value_loss)
    }

    fn approx_kl(&self, batch: &Batch) -> f64 {
        let mut cache = Cache::default();
        let n = batch.obs.len() as f64;
        batch
            .obs
            .iter()
            .zip(&batch.raw)
            .zip(&batch.logp)
            .map(|((o, r), lp)| lp - self.policy.log_prob_cached(o, r, &mut cache))
            .sum::<f64>()
            / n
    }
}
