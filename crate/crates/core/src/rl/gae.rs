//! Generalised advantage estimation.

/// Backward recursion `A_t = delta_t + gamma lambda A_{t+1}` with
/// `delta_t = r_t + gamma V_{t+1} - V_t` and `V_T = bootstrap`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    adv
}

/// Discounted sum of `x` plus `gamma^len * bootstrap`.
pub fn discounted_sum(x: &[f64], bootstrap: f64, gamma: f64) -> f64 {
    x.iter().rev().fold(bootstrap, |acc, v| v + gamma * acc)
}

/// Zero mean, unit variance (no-op scaling for near-constant input).
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
}
