//! Slot-synchronous network-slicing environment.
//!
//! Three slices share a bandwidth budget `B` (kilobits per slot). Each slot:
//!
//! 1. every user emits its fresh packets for the slot,
//! 2. demand `t_i` = queued backlog + fresh traffic,
//! 3. each slice queue is served FIFO at fluid rate `b_i`,
//! 4. reward, dissatisfaction and latency are computed,
//! 5. the arrival rates adapt to the slot's satisfaction,
//! 6. users depart (early when dissatisfied, or naturally) and new users arrive,
//! 7. the clock advances.
//!
//! The agent observes only the user counts; traffic, queues and arrival rates
//! stay hidden. Fresh packets for the upcoming slot are generated as soon as
//! the previous slot closes, which lets privileged baselines peek at the
//! demand without perturbing the rng stream.

mod queue;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use queue::{serve_queue, slot_latency, Completion, QueuedPacket, ServeOutcome};

use crate::error::{Error, Result};
use crate::traffic::{extend_user_packets, CompiledProfile, Packet, Slice, TrafficProfile};

pub const NUM_SLICES: usize = 3;

/// Per-slice traffic profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceTraffic {
    #[serde(default = "TrafficProfile::video")]
    pub video: TrafficProfile,
    #[serde(default = "TrafficProfile::volte")]
    pub volte: TrafficProfile,
    #[serde(default = "TrafficProfile::urllc")]
    pub urllc: TrafficProfile,
}

impl Default for SliceTraffic {
    fn default() -> Self {
        SliceTraffic {
            video: TrafficProfile::video(),
            volte: TrafficProfile::volte(),
            urllc: TrafficProfile::urllc(),
        }
    }
}

impl SliceTraffic {
    pub fn get(&self, slice: Slice) -> &TrafficProfile {
        match slice {
            Slice::Video => &self.video,
            Slice::Volte => &self.volte,
            Slice::Urllc => &self.urllc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Bandwidth budget per slot, kilobits.
    pub total_bandwidth_kb: f64,
    pub slot_seconds: f64,
    /// Initial Poisson mean of users per slice (Video, VoLTE, URLLC).
    pub initial_arrival_rate: [f64; NUM_SLICES],
    pub user_cap: usize,
    /// Per-user per-slot probability of a natural departure.
    pub natural_departure_prob: f64,
    pub traffic: SliceTraffic,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            total_bandwidth_kb: 102_400.0,
            slot_seconds: 1.0,
            initial_arrival_rate: [50.0, 50.0, 10.0],
            user_cap: 100,
            natural_departure_prob: 1.0,
            traffic: SliceTraffic::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_bandwidth_kb.is_finite() && self.total_bandwidth_kb > 0.0) {
            return Err(Error::config("env.total_bandwidth_kb must be > 0"));
        }
        if !(self.slot_seconds.is_finite() && self.slot_seconds > 0.0) {
            return Err(Error::config("env.slot_seconds must be > 0"));
        }
        if self
            .initial_arrival_rate
            .iter()
            .any(|&l| !(l.is_finite() && l > 0.0))
        {
            return Err(Error::config(
                "env.initial_arrival_rate entries must be > 0",
            ));
        }
        if self.user_cap == 0 {
            return Err(Error::config("env.user_cap must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.natural_departure_prob) {
            return Err(Error::config(
                "env.natural_departure_prob must lie in [0, 1]",
            ));
        }
        for s in Slice::ALL {
            let p = self.traffic.get(s);
            p.inter_arrival.validate()?;
            p.packet_size.validate()?;
        }
        Ok(())
    }
}

/// Agent-visible state: active users per slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub counts: [u32; NUM_SLICES],
}

impl Observation {
    pub fn new(video: u32, volte: u32, urllc: u32) -> Self {
        Observation {
            counts: [video, volte, urllc],
        }
    }

    /// Counts scaled to `[0, 1]` by the user cap.
    pub fn features(&self, user_cap: usize) -> [f64; NUM_SLICES] {
        let cap = user_cap as f64;
        self.counts.map(|c| f64::from(c) / cap)
    }
}

/// Bandwidth split, kilobits per slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub kb: [f64; NUM_SLICES],
}

impl Action {
    pub fn new(kb: [f64; NUM_SLICES]) -> Self {
        Action { kb }
    }

    pub fn total(&self) -> f64 {
        self.kb.iter().sum()
    }

    /// Checks `b_i >= 0` and `sum b_i <= B` (relative slack 1e-9).
    pub fn check(&self, total_bandwidth: f64) -> Result<()> {
        if self.kb.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::contract(format!(
                "action has negative or non-finite entries: {:?}",
                self.kb
            )));
        }
        if self.total() > total_bandwidth * (1.0 + 1e-9) {
            return Err(Error::contract(format!(
                "action uses {} kb, budget is {total_bandwidth} kb",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Privileged view of the upcoming slot's traffic (backlog + fresh).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldPeek {
    pub demand_kb: [f64; NUM_SLICES],
    pub packets: [u64; NUM_SLICES],
}

/// Per-slot bookkeeping that is not part of the CMDP signal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepDiagnostics {
    pub demand_kb: [f64; NUM_SLICES],
    pub fresh_kb: [f64; NUM_SLICES],
    pub backlog_kb: [f64; NUM_SLICES],
    pub fresh_packets: [u64; NUM_SLICES],
    pub backlog_packets: [u64; NUM_SLICES],
    pub completed_packets: [u64; NUM_SLICES],
    pub fresh_bits: [u64; NUM_SLICES],
    pub backlog_bits_before: [u64; NUM_SLICES],
    pub transmitted_bits: [u64; NUM_SLICES],
    pub backlog_bits_after: [u64; NUM_SLICES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Throughput, kilobits.
    pub reward: f64,
    /// Dissatisfaction ratio per slice, in `[0, 1]`.
    pub cum_costs: [f64; NUM_SLICES],
    /// Average latency per slice, seconds.
    pub inst_costs: [f64; NUM_SLICES],
    /// Observation that was current when the action was taken.
    pub obs: Observation,
    pub next_obs: Observation,
    pub diagnostics: StepDiagnostics,
}

/// `sum_i min(b_i, t_i)`.
pub fn throughput(b: &[f64; NUM_SLICES], t: &[f64; NUM_SLICES]) -> f64 {
    b.iter().zip(t).map(|(b, t)| b.min(*t)).sum()
}

/// `1 - min(b, t) / t`, defined as 0 when there is no demand.
pub fn dissatisfaction(b: f64, t: f64) -> f64 {
    if t <= 0.0 || b >= t {
        0.0
    } else {
        (1.0 - b / t).clamp(0.0, 1.0)
    }
}

/// `lambda' = 0.99 lambda + 0.01 lambda min(b/t, 1)`; satisfaction is 1 with no demand.
pub fn update_arrival_rate(lambda: f64, b: f64, t: f64) -> f64 {
    let sat = if t <= 0.0 { 1.0 } else { (b / t).min(1.0) };
    0.99 * lambda + 0.01 * lambda * sat
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRecord {
    pub slice: Slice,
    /// Time from the next slot's start until this user's next packet, seconds.
    pub carry_clock: f64,
}

#[derive(Debug, Clone, Default)]
struct SliceState {
    users: Vec<UserRecord>,
    queue: VecDeque<QueuedPacket>,
    pending: Vec<Packet>,
    lambda: f64,
}

/// Full hidden simulator state.
#[derive(Debug, Clone)]
pub struct SliceWorld {
    cfg: EnvConfig,
    profiles: [CompiledProfile; NUM_SLICES],
    slices: [SliceState; NUM_SLICES],
    clock: u64,
    rng: ChaCha8Rng,
}

impl SliceWorld {
    /// Builds and resets a world.
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let profiles = [
            cfg.traffic.video.compile()?,
            cfg.traffic.volte.compile()?,
            cfg.traffic.urllc.compile()?,
        ];
        let mut world = SliceWorld {
            cfg,
            profiles,
            slices: Default::default(),
            clock: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        world.reset(seed)?;
        Ok(world)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn arrival_rates(&self) -> [f64; NUM_SLICES] {
        [0, 1, 2].map(|i| self.slices[i].lambda)
    }

    pub fn set_arrival_rate(&mut self, slice: Slice, lambda: f64) {
        self.slices[slice.index()].lambda = lambda;
    }

    pub fn observation(&self) -> Observation {
        Observation {
            counts: [0, 1, 2].map(|i| self.slices[i].users.len() as u32),
        }
    }

    pub fn backlog_kb(&self) -> [f64; NUM_SLICES] {
        [0, 1, 2].map(|i| queue_bits(&self.slices[i].queue) as f64 / 1000.0)
    }

    /// Empties queues, restores the initial arrival rates and draws initial
    /// user counts from Poisson(lambda), clipped to the cap.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.clock = 0;
        for s in Slice::ALL {
            let i = s.index();
            self.slices[i] = SliceState {
                lambda: self.cfg.initial_arrival_rate[i],
                ..Default::default()
            };
            let n = poisson(&mut self.rng, self.slices[i].lambda).min(self.cfg.user_cap as u64);
            self.add_users(s, n as usize)?;
        }
        self.generate_pending()?;
        Ok(self.observation())
    }

    /// Replaces a slice's users with `n` fresh users (bypasses the cap).
    pub fn populate(&mut self, slice: Slice, n: usize) -> Result<()> {
        self.slices[slice.index()].users.clear();
        self.add_users(slice, n)?;
        self.regenerate_pending()
    }

    fn add_users(&mut self, slice: Slice, n: usize) -> Result<()> {
        let profile = &self.profiles[slice.index()];
        let users = &mut self.slices[slice.index()].users;
        users.reserve(n);
        for _ in 0..n {
            let carry_clock = profile.initial_carry(&mut self.rng)?;
            users.push(UserRecord { slice, carry_clock });
        }
        Ok(())
    }

    fn regenerate_pending(&mut self) -> Result<()> {
        for s in &mut self.slices {
            s.pending.clear();
        }
        self.generate_pending()
    }

    fn generate_pending(&mut self) -> Result<()> {
        let slot_len = self.cfg.slot_seconds;
        let slot_start = self.clock as f64 * slot_len;
        for i in 0..NUM_SLICES {
            let profile = &self.profiles[i];
            let state = &mut self.slices[i];
            if !state.pending.is_empty() {
                continue;
            }
            for user in &mut state.users {
                user.carry_clock = extend_user_packets(
                    profile,
                    user.slice,
                    slot_start,
                    slot_len,
                    user.carry_clock,
                    &mut self.rng,
                    &mut state.pending,
                )?;
            }
            state
                .pending
                .sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
        }
        Ok(())
    }

    /// Backlog plus fresh traffic of the upcoming slot.
    pub fn peek(&self) -> WorldPeek {
        let mut peek = WorldPeek::default();
        for (i, s) in self.slices.iter().enumerate() {
            let bits = queue_bits(&s.queue) + s.pending.iter().map(|p| p.bits).sum::<u64>();
            peek.demand_kb[i] = bits as f64 / 1000.0;
            peek.packets[i] = (s.queue.len() + s.pending.len()) as u64;
        }
        peek
    }

    /// Advances one slot under `action`.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        action.check(self.cfg.total_bandwidth_kb)?;
        let obs = self.observation();
        let slot_len = self.cfg.slot_seconds;
        let slot_start = self.clock as f64 * slot_len;
        let slot_end = slot_start + slot_len;

        let mut diag = StepDiagnostics::default();
        let mut latency = [0.0; NUM_SLICES];
        for (i, state) in self.slices.iter_mut().enumerate() {
            let backlog_bits = queue_bits(&state.queue);
            let fresh_bits: u64 = state.pending.iter().map(|p| p.bits).sum();
            diag.backlog_bits_before[i] = backlog_bits;
            diag.fresh_bits[i] = fresh_bits;
            diag.backlog_kb[i] = backlog_bits as f64 / 1000.0;
            diag.fresh_kb[i] = fresh_bits as f64 / 1000.0;
            diag.demand_kb[i] = (backlog_bits + fresh_bits) as f64 / 1000.0;
            diag.backlog_packets[i] = state.queue.len() as u64;
            diag.fresh_packets[i] = state.pending.len() as u64;

            state
                .queue
                .extend(state.pending.drain(..).map(QueuedPacket::from));
            let (mut lat_sum, mut done) = (0.0, 0u64);
            let sent =
                queue::serve_fifo(&mut state.queue, action.kb[i], slot_start, slot_len, |c| {
                    lat_sum += c.latency;
                    done += 1;
                });
            diag.transmitted_bits[i] = sent;
            diag.backlog_bits_after[i] = queue_bits(&state.queue);
            diag.completed_packets[i] = done;
            latency[i] = if done > 0 {
                lat_sum / done as f64
            } else {
                queue::head_of_line_age(&state.queue, slot_end)
            };
        }

        let reward = throughput(&action.kb, &diag.demand_kb);
        let costs = [0, 1, 2].map(|i| dissatisfaction(action.kb[i], diag.demand_kb[i]));
        for i in 0..NUM_SLICES {
            let s = &mut self.slices[i];
            s.lambda = update_arrival_rate(s.lambda, action.kb[i], diag.demand_kb[i]);
        }
        self.apply_dynamics(costs)?;
        self.clock += 1;
        self.generate_pending()?;

        Ok(StepOutcome {
            reward,
            cum_costs: costs,
            inst_costs: latency,
            obs,
            next_obs: self.observation(),
            diagnostics: diag,
        })
    }

    /// Early departures (probability = dissatisfaction), natural departures
    /// (probability `natural_departure_prob`), then Poisson(lambda) arrivals up
    /// to the user cap.
    pub fn apply_dynamics(&mut self, dissatisfaction: [f64; NUM_SLICES]) -> Result<()> {
        let p_nat = self.cfg.natural_departure_prob;
        for s in Slice::ALL {
            let i = s.index();
            let d = dissatisfaction[i];
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::contract(format!(
                    "dissatisfaction {d} outside [0, 1]"
                )));
            }
            let rng = &mut self.rng;
            self.slices[i].users.retain(|_| {
                let early: f64 = rng.random();
                let natural: f64 = rng.random();
                !(early < d || natural < p_nat)
            });
            let room = self.cfg.user_cap.saturating_sub(self.slices[i].users.len()) as u64;
            let arrivals = poisson(&mut self.rng, self.slices[i].lambda).min(room);
            self.add_users(s, arrivals as usize)?;
        }
        Ok(())
    }
}

fn queue_bits(q: &VecDeque<QueuedPacket>) -> u64 {
    q.iter().map(|p| p.remaining_bits).sum()
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    match Poisson::new(lambda) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}
