//! Barrier sharpness schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True iff the last `window` entries of `history` span at most
/// `delta * |mean|`. Needs at least `window` entries.
pub fn convergence_check(history: &[f64], window: usize, delta: f64) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mean = tail.iter().sum::<f64>() / window as f64;
    hi - lo <= delta * mean.abs()
}

/// State of the barrier parameter `t` and its convergence test.
///
/// Returns are smoothed with an exponential moving average before the test;
/// the history restarts after every increase of `t` so each `t` gets its own
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSchedule {
    pub t: f64,
    pub mu_t: f64,
    pub window: usize,
    pub delta_conv: f64,
    pub smoothing: f64,
    pub adaptive: bool,
    pub history: Vec<f64>,
    ema: Option<f64>,
}

impl BarrierSchedule {
    pub fn new(
        t0: f64,
        mu_t: f64,
        window: usize,
        delta_conv: f64,
        smoothing: f64,
        adaptive: bool,
    ) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::config("rl.t0 must be > 0"));
        }
        if !(mu_t.is_finite() && mu_t > 1.0) {
            return Err(Error::config("rl.mu_t must be > 1"));
        }
        if window == 0 {
            return Err(Error::config("rl.window must be >= 1"));
        }
        if !(0.0..=1.0).contains(&smoothing) || smoothing == 0.0 {
            return Err(Error::config("rl.smoothing must lie in (0, 1]"));
        }
        Ok(BarrierSchedule {
            t: t0,
            mu_t,
            window,
            delta_conv,
            smoothing,
            adaptive,
            history: Vec::new(),
            ema: None,
        })
    }

    /// Records one iteration's mean return; grows `t` when converged.
    /// Returns whether `t` changed.
    pub fn observe(&mut self, mean_return: f64) -> bool {
        let s = match self.ema {
            None => mean_return,
            Some(prev) => prev + self.smoothing * (mean_return - prev),
        };
        self.ema = Some(s);
        self.history.push(s);
        if self.adaptive && convergence_check(&self.history, self.window, self.delta_conv) {
            self.t *= self.mu_t;
            self.history.clear();
            return true;
        }
        false
    }
}
