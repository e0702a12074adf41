//! Finite-difference checks of the surrogate gradients on tiny policies.

use clara::nn::Cache;
use clara::rl::objective::{
    clip_surrogate, ipo_objective, phase1_objective, CostStream, Surrogate,
};
use clara::rl::GaussianPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_policy(hidden: &[usize], act_dim: usize, rng: &mut ChaCha8Rng) -> GaussianPolicy {
    let mut p = GaussianPolicy::new(1, hidden, act_dim, -0.5, rng);
    let theta: Vec<f64> = (0..p.num_params())
        .map(|_| rng.random_range(-0.8..0.8))
        .collect();
    p.set_flat_params(&theta);
    p
}

pub struct FrozenBatch {
    obs: Vec<[f64; 1]>,
    raw: Vec<Vec<f64>>,
    logp_old: Vec<f64>,
}

pub fn logps(p: &GaussianPolicy, b: &FrozenBatch) -> Vec<f64> {
    let mut cache = Cache::default();
    b.obs
        .iter()
        .zip(&b.raw)
        .map(|(o, r)| p.log_prob_cached(o, r, &mut cache))
        .collect()
}

/// Chains `dlogp` through the network exactly as the trainer does.
pub fn analytic_grad(p: &GaussianPolicy, b: &FrozenBatch, s: &Surrogate) -> Vec<f64> {
    let mut grad = vec![0.0; p.num_params()];
    let mut cache = Cache::default();
    for ((o, r), w) in b.obs.iter().zip(&b.raw).zip(&s.dlogp) {
        p.log_prob_cached(o, r, &mut cache);
        p.backward_log_prob(&cache, r, *w, &mut grad);
    }
    grad
}

pub fn central_diff(p: &GaussianPolicy, b: &FrozenBatch, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let theta = p.flat_params();
    let h = 1e-6;
    (0..theta.len())
        .map(|i| {
            let mut q = p.clone();
            let mut t = theta.clone();
            t[i] += h;
            q.set_flat_params(&t);
            let up = f(&logps(&q, b));
            t[i] -= 2.0 * h;
            q.set_flat_params(&t);
            let down = f(&logps(&q, b));
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

/// Old policy, a batch drawn from it, and a nearby new policy whose ratios
/// stay clear of the clip kinks so central differences are smooth.
pub fn setup(
    seed: u64,
    hidden: &[usize],
    act_dim: usize,
    eps: f64,
) -> (GaussianPolicy, FrozenBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old = toy_policy(hidden, act_dim, &mut rng);
    let n = 12;
    let obs: Vec<[f64; 1]> = (0..n).map(|_| [rng.random_range(-1.0..1.0)]).collect();
    let mut raw = Vec::new();
    let mut logp_old = Vec::new();
    for o in &obs {
        let (r, lp) = old.sample(o, &mut rng);
        raw.push(r);
        logp_old.push(lp);
    }
    let batch = FrozenBatch { obs, raw, logp_old };
    loop {
        let mut new = old.clone();
        let theta: Vec<f64> = old
            .flat_params()
            .iter()
            .map(|t| t + rng.random_range(-0.08..0.08))
            .collect();
        new.set_flat_params(&theta);
        let lp = logps(&new, &batch);
        let near_kink = lp.iter().zip(&batch.logp_old).any(|(a, b)| {
            let r = (a - b).exp();
            (r - 1.0 - eps).abs() < 1e-3 || (r - 1.0 + eps).abs() < 1e-3
        });
        if !near_kink {
            return (new, batch);
        }
    }
}

/// Largest relative gradient error over 50 seeds for the clipped, IPO and
/// Phase I surrogates, with the largest parameter count seen.
pub fn max_errors(hidden: &[usize], act_dim: usize) -> ([f64; 3], usize) {
    let eps = 0.2;
    let mut worst = [0.0f64; 3];
    let mut params = 0;
    for seed in 0..50u64 {
        let (policy, batch) = setup(seed, hidden, act_dim, eps);
        params = params.max(policy.num_params());
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = batch.obs.len();
        let adv_r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let adv_c: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let streams: Vec<CostStream> = adv_c
            .iter()
            .map(|a| CostStream {
                j_old: rng.random_range(0.0..3.0),
                omega: 6.0,
                adv: a,
            })
            .collect();
        let t = rng.random_range(1.0..50.0);
        let lp = logps(&policy, &batch);
        let old = &batch.logp_old;

        let clip = |l: &[f64]| clip_surrogate(l, old, &adv_r, eps);
        let ipo = |l: &[f64]| ipo_objective(l, old, &adv_r, &streams, t, eps).unwrap();
        let ph1 = |l: &[f64]| phase1_objective(l, old, &streams[1], &streams[..1], t, eps).unwrap();
        #[allow(clippy::type_complexity)]
        let objectives: [&dyn Fn(&[f64]) -> Surrogate; 3] = [&clip, &ipo, &ph1];
        for (w, f) in worst.iter_mut().zip(objectives) {
            let g = analytic_grad(&policy, &batch, &f(&lp));
            let fd = central_diff(&policy, &batch, &|l| f(l).value);
            *w = w.max(rel_err(&g, &fd));
        }
    }
    (worst, params)
}
