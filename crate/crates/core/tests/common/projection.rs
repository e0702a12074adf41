//! Random projection instances and a grid oracle for the nearest feasible point.

use clara::safety::Halfspace;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const B: f64 = 102_400.0;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A point on the budget simplex that violates two random halfspaces whose
/// intersection with the simplex is non-empty.
pub fn instance(rng: &mut ChaCha8Rng) -> Option<(Vec<f64>, Vec<Halfspace>)> {
    let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0f64)).collect();
    let s: f64 = w.iter().sum();
    let a: Vec<f64> = w.iter().map(|x| B * x / s).collect();
    let mut hs = Vec::new();
    for _ in 0..2 {
        let normal: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bound =
            dot(&normal, &a) - rng.random_range(0.02..0.3) * B * dot(&normal, &normal).sqrt();
        hs.push(Halfspace { normal, bound });
    }
    grid_nearest(&a, &hs, 200).map(|_| (a, hs))
}

/// Nearest feasible point to `a` on the row `x0 = u * B`: the remaining
/// coordinate is solved exactly on the feasible interval of the row.
pub fn best_on_row(a: &[f64], hs: &[Halfspace], u: f64) -> Option<(f64, [f64; 3])> {
    // x = (u, v, 1 - u - v) * B with v in [lo, hi]
    let (mut lo, mut hi) = (0.0, 1.0 - u);
    for h in hs {
        let (n, b) = (&h.normal, h.bound / B);
        let coef = n[1] - n[2];
        let rhs = b - n[0] * u - n[2] * (1.0 - u);
        if coef > 0.0 {
            hi = f64::min(hi, rhs / coef);
        } else if coef < 0.0 {
            lo = f64::max(lo, rhs / coef);
        } else if rhs < 0.0 {
            return None;
        }
    }
    if lo > hi {
        return None;
    }
    let v = (((a[1] - a[2]) / B + 1.0 - u) / 2.0).clamp(lo, hi);
    let x = [u * B, v * B, (1.0 - u - v) * B];
    Some((x.iter().zip(a).map(|(p, q)| (p - q).powi(2)).sum(), x))
}

/// Grid search over `x0` in `[from, to]`. Minimising out the other
/// coordinate keeps the profile convex, so the winner is within one step of
/// the true optimum.
pub fn grid_search(a: &[f64], hs: &[Halfspace], from: f64, to: f64, step: f64) -> Option<[f64; 3]> {
    let n = ((to - from) / step).round() as usize;
    (0..=n)
        .map(|i| (from + i as f64 * step).clamp(0.0, 1.0))
        .filter_map(|u| best_on_row(a, hs, u))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, x)| x)
}

pub fn grid_nearest(a: &[f64], hs: &[Halfspace], steps: usize) -> Option<[f64; 3]> {
    grid_search(a, hs, 0.0, 1.0, 1.0 / steps as f64)
}

/// 1e-3 grid, then a 1e-7 grid around the winner.
pub fn fine_grid_nearest(a: &[f64], hs: &[Halfspace]) -> Option<[f64; 3]> {
    let coarse = grid_nearest(a, hs, 1000)?;
    let u = coarse[0] / B;
    grid_search(a, hs, (u - 2e-3).max(0.0), (u + 2e-3).min(1.0), 1e-7)
}
