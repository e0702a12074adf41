//! Diagonal-Gaussian policy over raw logits, and scalar value networks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{Cache, Mlp};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal-Gaussian log density.
pub fn log_prob(mean: &[f64], std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(x)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * LOG_2PI
        })
        .sum()
}

/// Mean from an MLP, state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        act_dim: usize,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        // small output layer: the initial mean is close to the zero logit (equal shares)
        GaussianPolicy {
            net: Mlp::init(&sizes, 0.01, rng),
            log_std: vec![init_log_std; act_dim],
        }
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std.len()
    }

    /// Network parameters followed by the log standard deviations.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.net.params.clone();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.net.num_params();
        self.net.params.copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn forward(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.net.forward(obs), self.std())
    }

    /// Draws a raw action; returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let (mean, std) = self.forward(obs);
        let raw: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect();
        let lp = log_prob(&mean, &std, &raw);
        (raw, lp)
    }

    /// Log-probability of `raw`, keeping the activations in `cache` for
    /// [`GaussianPolicy::backward_log_prob`].
    pub fn log_prob_cached(&self, obs: &[f64], raw: &[f64], cache: &mut Cache) -> f64 {
        let mean = self.net.forward_cached(obs, cache);
        log_prob(mean, &self.std(), raw)
    }

    /// Adds `weight * d log pi(raw | obs) / d params` to `grad` (flat layout).
    pub fn backward_log_prob(&self, cache: &Cache, raw: &[f64], weight: f64, grad: &mut [f64]) {
        let n = self.net.num_params();
        let mean = cache.output();
        let mut dmean = vec![0.0; raw.len()];
        for k in 0..raw.len() {
            let s = self.log_std[k].exp();
            let z = (raw[k] - mean[k]) / s;
            dmean[k] = weight * z / s;
            grad[n + k] += weight * (z * z - 1.0);
        }
        self.net.backward(cache, &dmean, &mut grad[..n]);
    }
}

/// Scalar value network; predictions are `scale * net(obs)` so targets of
/// order `1 / (1 - gamma)` stay O(1) inside the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub net: Mlp,
    pub scale: f64,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        ValueNet {
            net: Mlp::init(&sizes, 1.0, rng),
            scale,
        }
    }

    pub fn predict(&self, obs: &[f64]) -> f64 {
        self.scale * self.net.forward(obs)[0]
    }

    /// Accumulates the gradient of `mean (V(obs) - target)^2 / scale^2` over
    /// the given samples into `grad`; returns that loss.
    pub fn regression_grad(&self, obs: &[&[f64]], targets: &[f64], grad: &mut [f64]) -> f64 {
        let n = obs.len() as f64;
        let mut cache = Cache::default();
        let mut loss = 0.0;
        for (o, &y) in obs.iter().zip(targets) {
            let v = self.net.forward_cached(o, &mut cache)[0];
            let err = v - y / self.scale;
            loss += err * err / n;
            self.net.backward(&cache, &[2.0 * err / n], grad);
        }
        loss
    }
}
