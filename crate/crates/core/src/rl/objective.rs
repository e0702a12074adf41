//! Surrogate objectives as functions of the per-sample log-probabilities
//! under the new policy.
//!
//! Every function returns the objective value together with its derivative
//! with respect to each `logp_new[i]`; the trainer chains that through the
//! policy network.

/// An objective value and `d value / d logp_new`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub value: f64,
    pub dlogp: Vec<f64>,
}

impl Surrogate {
    fn zero(n: usize) -> Self {
        Surrogate {
            value: 0.0,
            dlogp: vec![0.0; n],
        }
    }

    fn add_scaled(&mut self, other: &Surrogate, s: f64) {
        self.value += s * other.value;
        for (d, o) in self.dlogp.iter_mut().zip(&other.dlogp) {
            *d += s * o;
        }
    }
}

fn clip(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

/// `mean_i min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i)`, `r_i = exp(logp_new_i - logp_old_i)`.
pub fn clip_surrogate(logp_new: &[f64], logp_old: &[f64], adv: &[f64], eps: f64) -> Surrogate {
    clipped(logp_new, logp_old, adv, eps, false)
}

/// Pessimistic clipped surrogate for a cost stream:
/// `mean_i max(r_i A_i, clip(r_i) A_i)`, i.e. `-clip_surrogate(-A)`.
///
/// The plain min-form would let the estimated cost fall without bound as a
/// cost-reducing action's ratio grows; the max-form keeps the trust region
/// on the side that matters for a quantity being minimised.
pub fn cost_surrogate(logp_new: &[f64], logp_old: &[f64], adv: &[f64], eps: f64) -> Surrogate {
    clipped(logp_new, logp_old, adv, eps, true)
}

fn clipped(
    logp_new: &[f64],
    logp_old: &[f64],
    adv: &[f64],
    eps: f64,
    pessimistic: bool,
) -> Surrogate {
    let n = logp_new.len();
    let mut out = Surrogate::zero(n);
    if n == 0 {
        return out;
    }
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let r = (logp_new[i] - logp_old[i]).exp();
        let a = adv[i];
        let (raw, clipped) = (r * a, clip(r, eps) * a);
        let take_raw = if pessimistic {
            raw >= clipped
        } else {
            raw <= clipped
        };
        if take_raw {
            out.value += raw * inv;
            out.dlogp[i] = raw * inv;
        } else {
            out.value += clipped * inv;
        }
    }
    out
}

/// `log(-j) / t`; negative infinity outside the barrier's domain (`j >= 0`).
pub fn log_barrier(j: f64, t: f64) -> f64 {
    if j < 0.0 {
        (-j).ln() / t
    } else {
        f64::NEG_INFINITY
    }
}

/// Inputs for one cumulative-constraint surrogate.
#[derive(Debug, Clone, Copy)]
pub struct CostStream<'a> {
    /// Mean discounted cost of the batch under the old policy.
    pub j_old: f64,
    pub omega: f64,
    pub adv: &'a [f64],
}

/// `J_old + L_C(theta) - omega` with its gradient.
pub fn cost_estimate(
    logp_new: &[f64],
    logp_old: &[f64],
    stream: &CostStream,
    eps: f64,
) -> Surrogate {
    let mut s = cost_surrogate(logp_new, logp_old, stream.adv, eps);
    s.value += stream.j_old - stream.omega;
    s
}

/// The barrier of a stream left its domain; carries the stream's index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierViolation {
    pub index: usize,
    pub estimate: f64,
}

/// `primary + sum_i log(-J_i(theta)) / t` over `barriers`.
pub fn with_barriers(
    mut primary: Surrogate,
    logp_new: &[f64],
    logp_old: &[f64],
    barriers: &[CostStream],
    t: f64,
    eps: f64,
) -> Result<Surrogate, BarrierViolation> {
    for (index, stream) in barriers.iter().enumerate() {
        let est = cost_estimate(logp_new, logp_old, stream, eps);
        if est.value >= 0.0 {
            return Err(BarrierViolation {
                index,
                estimate: est.value,
            });
        }
        primary.value += log_barrier(est.value, t);
        // d/dJ log(-J)/t = 1 / (t J)
        let s = 1.0 / (t * est.value);
        for (d, g) in primary.dlogp.iter_mut().zip(&est.dlogp) {
            *d += s * g;
        }
    }
    Ok(primary)
}

/// `L_R(theta) + sum_i phi(J_i(theta))`.
pub fn ipo_objective(
    logp_new: &[f64],
    logp_old: &[f64],
    adv_reward: &[f64],
    costs: &[CostStream],
    t: f64,
    eps: f64,
) -> Result<Surrogate, BarrierViolation> {
    let primary = clip_surrogate(logp_new, logp_old, adv_reward, eps);
    with_barriers(primary, logp_new, logp_old, costs, t, eps)
}

/// Feasibility-seeking objective: `-L_C(theta)` for `target`, plus barriers
/// of the constraints already satisfied.
pub fn phase1_objective(
    logp_new: &[f64],
    logp_old: &[f64],
    target: &CostStream,
    satisfied: &[CostStream],
    t: f64,
    eps: f64,
) -> Result<Surrogate, BarrierViolation> {
    let mut primary = Surrogate::zero(logp_new.len());
    primary.add_scaled(&cost_surrogate(logp_new, logp_old, target.adv, eps), -1.0);
    with_barriers(primary, logp_new, logp_old, satisfied, t, eps)
}
