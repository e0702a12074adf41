//! Two-state, two-action CMDP with closed-form values, and the policy
//! enumeration used to find constrained and barrier optima.

use clara::rl::discounted_sum;
use clara::rl::objective::log_barrier;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Cmdp {
    /// `p_next0[s][a]`: probability that the next state is 0.
    pub p_next0: [[f64; 2]; 2],
    pub reward: [[f64; 2]; 2],
    pub cost: [[f64; 2]; 2],
    pub gamma: f64,
    pub start: [f64; 2],
}

impl Cmdp {
    pub fn example() -> Self {
        Cmdp {
            p_next0: [[0.9, 0.2], [0.7, 0.1]],
            reward: [[0.1, 1.0], [0.0, 0.6]],
            cost: [[0.0, 1.0], [0.1, 0.8]],
            gamma: 0.9,
            start: [1.0, 0.0],
        }
    }

    /// Discounted (reward, cost) of the policy taking action 0 with
    /// probability `pi0[s]` in state `s`: solves `(I - gamma P) v = x` in closed form.
    pub fn values(&self, pi0: [f64; 2]) -> (f64, f64) {
        let mix = |m: &[[f64; 2]; 2], s: usize| pi0[s] * m[s][0] + (1.0 - pi0[s]) * m[s][1];
        let p0 = [mix(&self.p_next0, 0), mix(&self.p_next0, 1)];
        // transition matrix rows: [p0, 1 - p0]
        let g = self.gamma;
        let (a, b, c, d) = (
            1.0 - g * p0[0],
            -g * (1.0 - p0[0]),
            -g * p0[1],
            1.0 - g * (1.0 - p0[1]),
        );
        let det = a * d - b * c;
        let solve = |x: [f64; 2]| [(d * x[0] - b * x[1]) / det, (a * x[1] - c * x[0]) / det];
        let vr = solve([mix(&self.reward, 0), mix(&self.reward, 1)]);
        let vc = solve([mix(&self.cost, 0), mix(&self.cost, 1)]);
        (
            self.start[0] * vr[0] + self.start[1] * vr[1],
            self.start[0] * vc[0] + self.start[1] * vc[1],
        )
    }

    /// Monte Carlo estimate, for cross-checking `values`.
    pub fn rollout_mean(
        &self,
        pi0: [f64; 2],
        episodes: usize,
        horizon: usize,
        seed: u64,
    ) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut jr, mut jc) = (0.0, 0.0);
        for _ in 0..episodes {
            let mut s = usize::from(!rng.random_bool(self.start[0]));
            let (mut r, mut c) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
            for _ in 0..horizon {
                let a = usize::from(!rng.random_bool(pi0[s]));
                r.push(self.reward[s][a]);
                c.push(self.cost[s][a]);
                s = usize::from(!rng.random_bool(self.p_next0[s][a]));
            }
            jr += discounted_sum(&r, 0.0, self.gamma);
            jc += discounted_sum(&c, 0.0, self.gamma);
        }
        (jr / episodes as f64, jc / episodes as f64)
    }
}

pub const GRID: usize = 200; // 0.005 resolution

/// Maximiser of `score` (None = excluded) over the 0.005 policy grid, then
/// refined by nested zoom grids around the winner. The bound is nearly tight
/// here, and near its optimum the barrier objective is flat while `J_R` is
/// not, so the raw grid's discretisation error alone can exceed the slack.
pub fn enumerate(score: &dyn Fn([f64; 2]) -> Option<f64>) -> [f64; 2] {
    let best_in = |lo: [f64; 2], step: f64, n: usize| -> Option<(f64, [f64; 2])> {
        (0..=n)
            .flat_map(|i| (0..=n).map(move |j| [lo[0] + i as f64 * step, lo[1] + j as f64 * step]))
            .filter(|p| p.iter().all(|x| (0.0..=1.0).contains(x)))
            .filter_map(|p| score(p).map(|v| (v, p)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
    };
    let mut step = 1.0 / GRID as f64;
    let (_, mut p) = best_in([0.0, 0.0], step, GRID).expect("some policy qualifies");
    for _ in 0..5 {
        // +-4 steps of the previous grid at 1/20 of its spacing
        let fine = step / 20.0;
        let lo = [p[0] - 4.0 * step, p[1] - 4.0 * step];
        if let Some((_, q)) = best_in(lo, fine, 160) {
            p = q;
        }
        step = fine;
    }
    p
}

/// Best reward subject to `J_C <= omega`.
pub fn constrained_optimum(m: &Cmdp, omega: f64) -> f64 {
    let p = enumerate(&|p| {
        let (r, c) = m.values(p);
        (c <= omega).then_some(r)
    });
    m.values(p).0
}

/// Reward of the policy maximising `J_R + log(omega - J_C) / t`.
pub fn barrier_optimum(m: &Cmdp, omega: f64, t: f64) -> f64 {
    let p = enumerate(&|p| {
        let (r, c) = m.values(p);
        let v = r + log_barrier(c - omega, t);
        v.is_finite().then_some(v)
    });
    m.values(p).0
}
