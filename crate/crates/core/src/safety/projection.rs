//! Feasibility layers over bandwidth allocations.
//!
//! `softmax_project` enforces the explicit budget (`b >= 0`, `sum b = B`);
//! `project_action` additionally enforces linear halfspaces by Dykstra's
//! alternating projections, always ending on the simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Softmax of `logits`, scaled to sum to `total`.
///
/// Logit gaps are clamped at -700 so every entry stays strictly positive in
/// double precision.
pub fn softmax_project(logits: &[f64], total: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits
        .iter()
        .map(|&z| (z - max).max(-700.0).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| total * x / sum).collect()
}

/// Euclidean projection onto `{x >= 0, sum x = total}` (sort-and-threshold).
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let th = (cum - total) / (j + 1) as f64;
        if uj - th > 0.0 {
            theta = th;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `normal . x <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

impl Halfspace {
    /// Euclidean distance from `x` to the halfspace (0 inside). A zero normal
    /// gives 0 when the bound holds and infinity otherwise.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let nn = dot(&self.normal, &self.normal);
        let excess = dot(&self.normal, x) - self.bound;
        if excess <= 0.0 {
            0.0
        } else if nn == 0.0 {
            f64::INFINITY
        } else {
            excess / nn.sqrt()
        }
    }

    fn project(&self, x: &mut [f64]) {
        let nn = dot(&self.normal, &self.normal);
        let excess = dot(&self.normal, x) - self.bound;
        if excess > 0.0 && nn > 0.0 {
            let s = excess / nn;
            for (xi, ni) in x.iter_mut().zip(&self.normal) {
                *xi -= s * ni;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DykstraConfig {
    pub max_iters: usize,
    /// Absolute tolerance in action units.
    pub tol: f64,
}

impl DykstraConfig {
    pub fn for_budget(total: f64) -> Self {
        DykstraConfig {
            max_iters: 200,
            tol: 1e-6 * total,
        }
    }
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self::for_budget(102_400.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub action: Vec<f64>,
    /// False when no point satisfying every halfspace was found within the cap;
    /// `action` is then the iterate with the smallest worst-case violation.
    pub feasible: bool,
    pub iterations: usize,
}

fn max_violation(halfspaces: &[Halfspace], x: &[f64]) -> f64 {
    halfspaces.iter().map(|h| h.distance(x)).fold(0.0, f64::max)
}

fn simplex_gap(x: &[f64], total: f64) -> f64 {
    let neg = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    neg.max((x.iter().sum::<f64>() - total).abs())
}

/// Nearest point (l2) to `a` on the `total`-simplex that satisfies every halfspace.
pub fn project_action(
    a: &[f64],
    total: f64,
    halfspaces: &[Halfspace],
    cfg: &DykstraConfig,
) -> Projection {
    if simplex_gap(a, total) <= cfg.tol && max_violation(halfspaces, a) <= cfg.tol {
        return Projection {
            action: within_budget(a.to_vec(), total),
            feasible: true,
            iterations: 0,
        };
    }
    let n = a.len();
    let mut x = a.to_vec();
    let sets = halfspaces.len() + 1;
    let mut incr = vec![vec![0.0; n]; sets];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut done = None;
    for it in 1..=cfg.max_iters {
        let mut moved: f64 = 0.0;
        for (k, p) in incr.iter_mut().enumerate() {
            let shifted: Vec<f64> = x.iter().zip(p.iter()).map(|(xi, pi)| xi + pi).collect();
            let y = if k < halfspaces.len() {
                let mut y = shifted.clone();
                halfspaces[k].project(&mut y);
                y
            } else {
                project_simplex(&shifted, total)
            };
            for ((pi, s), yi) in p.iter_mut().zip(&shifted).zip(&y) {
                let next = s - yi;
                moved = moved.max((next - *pi).abs());
                *pi = next;
            }
            for (xi, yi) in x.iter().zip(&y) {
                moved = moved.max((xi - yi).abs());
            }
            x = y;
        }
        let viol = max_violation(halfspaces, &x);
        if viol <= cfg.tol && moved <= cfg.tol {
            done = Some(it);
            break;
        }
        if best.as_ref().is_none_or(|(v, _)| viol < *v) {
            best = Some((viol, x.clone()));
        }
    }
    let (viol, action, iterations) = match (done, best) {
        (Some(it), _) => (0.0, x, it),
        (None, Some((v, b))) => (v, b, cfg.max_iters),
        (None, None) => unreachable!("at least one iteration"),
    };
    match polish(a, total, halfspaces, &action, cfg.tol) {
        Some(exact) => Projection {
            action: within_budget(exact, total),
            feasible: true,
            iterations,
        },
        None => Projection {
            action: within_budget(action, total),
            feasible: viol <= cfg.tol,
            iterations,
        },
    }
}

/// The polish accepts `x_i >= -tol`; clamping those to zero pushes the sum
/// over `total` by up to `tol`, which the simulator rejects. Scale back.
fn within_budget(mut x: Vec<f64>, total: f64) -> Vec<f64> {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let sum: f64 = x.iter().sum();
    if sum > total {
        x.iter_mut().for_each(|v| *v *= total / sum);
    }
    x
}

/// Dykstra crawls when constraints meet at a sharp angle, and a slow crawl
/// can pass the stopping test early. Its last iterate still points at the
/// active set: try every small subset of the (at most ten) least slack
/// constraints and solve the equality-constrained problem exactly. A
/// candidate that meets the optimality conditions is the unique solution.
fn polish(
    a: &[f64],
    total: f64,
    halfspaces: &[Halfspace],
    near: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    const MAX_NEAR: usize = 10;
    let n = a.len();
    // rows g.x <= b: the halfspaces, then -x_i <= 0
    let mut rows: Vec<(Vec<f64>, f64)> = halfspaces
        .iter()
        .map(|h| (h.normal.clone(), h.bound))
        .collect();
    for i in 0..n {
        let mut g = vec![0.0; n];
        g[i] = -1.0;
        rows.push((g, 0.0));
    }
    let slack = |j: usize| {
        let (g, b) = &rows[j];
        let norm = dot(g, g).sqrt();
        if norm == 0.0 {
            f64::INFINITY
        } else {
            (b - dot(g, near)) / norm
        }
    };
    let mut cand: Vec<usize> = (0..rows.len()).collect();
    cand.sort_by(|&i, &j| slack(i).total_cmp(&slack(j)));
    cand.truncate(MAX_NEAR);

    let solve = |active: &[usize]| -> Option<Vec<f64>> {
        // x = a - A^T lambda with A x = b on the active rows plus the budget row
        let k = active.len() + 1;
        let mut am = DMatrix::zeros(k, n);
        let mut rhs = DVector::zeros(k);
        for (r, &j) in active.iter().enumerate() {
            for c in 0..n {
                am[(r, c)] = rows[j].0[c];
            }
            rhs[r] = dot(&rows[j].0, a) - rows[j].1;
        }
        for c in 0..n {
            am[(k - 1, c)] = 1.0;
        }
        rhs[k - 1] = a.iter().sum::<f64>() - total;
        let lambda = (&am * am.transpose()).lu().solve(&rhs)?;
        if lambda.iter().take(k - 1).any(|&l| l < -1e-12 * total) {
            return None;
        }
        let shift = am.transpose() * &lambda;
        let x: Vec<f64> = a.iter().zip(shift.iter()).map(|(ai, si)| ai - si).collect();
        rows.iter()
            // distance, not raw excess: learned normals can be ~1e-6 per kb
            .all(|(g, b)| dot(g, &x) - b <= tol * dot(g, g).sqrt())
            .then(|| x.into_iter().map(|v| v.max(0.0)).collect())
    };

    // subsets in order of size, as bitmasks over `cand`
    let max_size = (n - 1).min(cand.len());
    for size in 0..=max_size {
        for mask in 0u32..(1 << cand.len()) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let active: Vec<usize> = (0..cand.len())
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| cand[b])
                .collect();
            if let Some(x) = solve(&active) {
                return Some(x);
            }
        }
    }
    None
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
