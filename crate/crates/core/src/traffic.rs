//! Per-slice packet arrival and size distributions.
//!
//! Distribution parameters are written in the units of the user-type table
//! (inter-arrival times in milliseconds, packet sizes in bytes). Compiled
//! samplers convert to simulator units: seconds and bits.
//!
//! Truncated kinds are sampled by rejection. For the Pareto kinds (and for a
//! truncated exponential that carries a `max`) the stated mean is the mean
//! *after* truncation; the untruncated scale (or rate) is solved numerically
//! once, when the sampler is compiled.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Pareto, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rejection sampling gives up after this many draws.
pub const REJECTION_CAP: usize = 1_000_000;

/// The three service classes sharing the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Video,
    Volte,
    Urllc,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::Video, Slice::Volte, Slice::Urllc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slice::Video => "video",
            Slice::Volte => "volte",
            Slice::Urllc => "urllc",
        }
    }

    pub fn from_name(name: &str) -> Option<Slice> {
        Slice::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl std::fmt::Display for Slice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar distribution as written in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistSpec {
    Constant {
        value: f64,
    },
    Uniform {
        min: f64,
        max: f64,
    },
    TruncatedPareto {
        shape: f64,
        mean: f64,
        max: f64,
    },
    /// Without `max` this is a plain exponential.
    TruncatedExponential {
        mean: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    TruncatedLognormal {
        mean: f64,
        std: f64,
        max: f64,
    },
}

impl DistSpec {
    /// Mean the spec promises, in its own units.
    pub fn stated_mean(&self) -> f64 {
        match *self {
            DistSpec::Constant { value } => value,
            DistSpec::Uniform { min, max } => 0.5 * (min + max),
            DistSpec::TruncatedPareto { mean, .. }
            | DistSpec::TruncatedExponential { mean, .. }
            | DistSpec::TruncatedLognormal { mean, .. } => mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        match *self {
            DistSpec::Constant { value } => finite_pos("constant value", value),
            DistSpec::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite() && min >= 0.0 && max > min) {
                    return Err(Error::config(format!(
                        "uniform bounds invalid: [{min}, {max}]"
                    )));
                }
                Ok(())
            }
            DistSpec::TruncatedPareto { shape, mean, max } => {
                finite_pos("pareto mean", mean)?;
                finite_pos("pareto max", max)?;
                if !(shape.is_finite() && shape > 1.0) {
                    return Err(Error::config(format!(
                        "pareto shape must be > 1, got {shape}"
                    )));
                }
                if max <= mean {
                    return Err(Error::config(format!(
                        "pareto max {max} must exceed mean {mean}"
                    )));
                }
                Ok(())
            }
            DistSpec::TruncatedExponential { mean, max } => {
                finite_pos("exponential mean", mean)?;
                if let Some(max) = max {
                    finite_pos("exponential max", max)?;
                    if max <= 2.0 * mean {
                        return Err(Error::config(format!(
                            "truncated exponential with max {max} cannot reach mean {mean}"
                        )));
                    }
                }
                Ok(())
            }
            DistSpec::TruncatedLognormal { mean, std, max } => {
                finite_pos("lognormal mean", mean)?;
                finite_pos("lognormal std", std)?;
                finite_pos("lognormal max", max)?;
                if max <= mean {
                    return Err(Error::config(format!(
                        "lognormal max {max} must exceed mean {mean}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Mean of a Pareto(shape, scale) conditioned on `x <= max`.
pub fn truncated_pareto_mean(shape: f64, scale: f64, max: f64) -> f64 {
    let ln_r = (scale / max).ln();
    if (shape - 1.0).abs() < 1e-12 {
        // x ln(M/x) / (1 - x/M)
        return scale * (-ln_r) / (-ln_r.exp_m1());
    }
    // alpha x (1 - r^(alpha-1)) / ((alpha-1)(1 - r^alpha)), r = x/M
    let num = -((shape - 1.0) * ln_r).exp_m1();
    let den = -(shape * ln_r).exp_m1();
    shape * scale * num / ((shape - 1.0) * den)
}

/// Solves the Pareto scale whose max-truncated mean equals `target_mean`.
///
/// The truncated mean increases monotonically from 0 (scale -> 0) to `max`
/// (scale -> max), so bisection over `(0, max)` always brackets the root.
pub fn fit_truncated_pareto_scale(shape: f64, target_mean: f64, max: f64) -> Result<f64> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(Error::config(format!(
            "pareto shape must be > 0, got {shape}"
        )));
    }
    if !(target_mean > 0.0 && target_mean < max && max.is_finite()) {
        return Err(Error::config(format!(
            "no pareto scale reaches mean {target_mean} below max {max}"
        )));
    }
    let mut lo = 0.0_f64;
    let mut hi = max;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if truncated_pareto_mean(shape, mid, max) < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = 0.5 * (lo + hi);
    let got = truncated_pareto_mean(shape, scale, max);
    if !got.is_finite() || ((got - target_mean) / target_mean).abs() > 1e-9 {
        return Err(Error::config(format!(
            "pareto scale fit failed: mean {got} vs target {target_mean}"
        )));
    }
    Ok(scale)
}

/// Mean of an exponential with `rate` conditioned on `x <= max`.
pub fn truncated_exponential_mean(rate: f64, max: f64) -> f64 {
    let rm = rate * max;
    1.0 / rate - max / rm.exp_m1()
}

fn fit_truncated_exponential_rate(target_mean: f64, max: f64) -> Result<f64> {
    // mean decreases from max/2 (rate -> 0) towards 0
    let mut lo = 1e-12 / max;
    let mut hi = 1.0 / target_mean;
    while truncated_exponential_mean(hi, max) > target_mean {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if truncated_exponential_mean(mid, max) > target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rate = 0.5 * (lo + hi);
    let got = truncated_exponential_mean(rate, max);
    if ((got - target_mean) / target_mean).abs() > 1e-9 {
        return Err(Error::config(format!(
            "exponential rate fit failed: mean {got} vs target {target_mean}"
        )));
    }
    Ok(rate)
}

/// Moment-matched parameters `(mu, sigma)` of the underlying normal.
pub fn lognormal_params(mean: f64, std: f64) -> (f64, f64) {
    let var_ratio = (std / mean).powi(2);
    let sigma2 = var_ratio.ln_1p();
    (mean.ln() - 0.5 * sigma2, sigma2.sqrt())
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Constant(f64),
    Uniform(Uniform<f64>),
    Pareto {
        dist: Pareto<f64>,
        scale: f64,
        max: f64,
    },
    Exponential {
        dist: Exp<f64>,
        max: Option<f64>,
    },
    LogNormal {
        dist: LogNormal<f64>,
        max: f64,
    },
}

/// A compiled, validated [`DistSpec`]; cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
    /// Multiplier applied to every draw (unit conversion).
    unit: f64,
}

impl Sampler {
    pub fn new(spec: &DistSpec) -> Result<Self> {
        Self::with_unit(spec, 1.0)
    }

    /// Compiles `spec`; every draw is multiplied by `unit`.
    pub fn with_unit(spec: &DistSpec, unit: f64) -> Result<Self> {
        spec.validate()?;
        let bad = |e: &dyn std::fmt::Display| Error::config(format!("{spec:?}: {e}"));
        let kind = match *spec {
            DistSpec::Constant { value } => SamplerKind::Constant(value),
            DistSpec::Uniform { min, max } => {
                SamplerKind::Uniform(Uniform::new(min, max).map_err(|e| bad(&e))?)
            }
            DistSpec::TruncatedPareto { shape, mean, max } => {
                let scale = fit_truncated_pareto_scale(shape, mean, max)?;
                SamplerKind::Pareto {
                    dist: Pareto::new(scale, shape).map_err(|e| bad(&e))?,
                    scale,
                    max,
                }
            }
            DistSpec::TruncatedExponential { mean, max } => {
                let rate = match max {
                    Some(m) => fit_truncated_exponential_rate(mean, m)?,
                    None => 1.0 / mean,
                };
                SamplerKind::Exponential {
                    dist: Exp::new(rate).map_err(|e| bad(&e))?,
                    max,
                }
            }
            DistSpec::TruncatedLognormal { mean, std, max } => {
                let (mu, sigma) = lognormal_params(mean, std);
                SamplerKind::LogNormal {
                    dist: LogNormal::new(mu, sigma).map_err(|e| bad(&e))?,
                    max,
                }
            }
        };
        Ok(Sampler { kind, unit })
    }

    /// Fitted scale, in spec units, if this is a Pareto sampler.
    pub fn pareto_scale(&self) -> Option<f64> {
        match self.kind {
            SamplerKind::Pareto { scale, .. } => Some(scale),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let raw = match &self.kind {
            SamplerKind::Constant(v) => *v,
            SamplerKind::Uniform(u) => u.sample(rng),
            SamplerKind::Pareto { dist, max, .. } => rejection(rng, dist, *max)?,
            SamplerKind::Exponential { dist, max: None } => dist.sample(rng),
            SamplerKind::Exponential { dist, max: Some(m) } => rejection(rng, dist, *m)?,
            SamplerKind::LogNormal { dist, max } => rejection(rng, dist, *max)?,
        };
        Ok(raw * self.unit)
    }
}

fn rejection<R: Rng + ?Sized, D: Distribution<f64>>(
    rng: &mut R,
    dist: &D,
    max: f64,
) -> Result<f64> {
    for _ in 0..REJECTION_CAP {
        let x = dist.sample(rng);
        if x <= max {
            return Ok(x);
        }
    }
    Err(Error::Internal(format!(
        "rejection sampler exceeded {REJECTION_CAP} draws; truncation bound {max} is mis-fit"
    )))
}

/// Traffic parameters for one user type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    /// Packet inter-arrival time, milliseconds.
    pub inter_arrival: DistSpec,
    /// Packet size, bytes.
    pub packet_size: DistSpec,
}

impl TrafficProfile {
    pub fn video() -> Self {
        TrafficProfile {
            inter_arrival: DistSpec::TruncatedPareto {
                shape: 1.2,
                mean: 6.0,
                max: 12.5,
            },
            packet_size: DistSpec::TruncatedPareto {
                shape: 1.2,
                mean: 100.0,
                max: 250.0,
            },
        }
    }

    pub fn volte() -> Self {
        TrafficProfile {
            inter_arrival: DistSpec::Uniform {
                min: 0.0,
                max: 160.0,
            },
            packet_size: DistSpec::Constant { value: 40.0 },
        }
    }

    pub fn urllc() -> Self {
        TrafficProfile {
            inter_arrival: DistSpec::TruncatedExponential {
                mean: 180.0,
                max: None,
            },
            packet_size: DistSpec::TruncatedLognormal {
                mean: 2_000_000.0,
                std: 722_000.0,
                max: 5_000_000.0,
            },
        }
    }

    pub fn default_for(slice: Slice) -> Self {
        match slice {
            Slice::Video => Self::video(),
            Slice::Volte => Self::volte(),
            Slice::Urllc => Self::urllc(),
        }
    }

    /// Expected fresh traffic per user per second, kilobits, from the stated means.
    pub fn nominal_kb_per_second(&self) -> f64 {
        let pkts_per_s = 1000.0 / self.inter_arrival.stated_mean();
        pkts_per_s * self.packet_size.stated_mean() * 8.0 / 1000.0
    }

    pub fn compile(&self) -> Result<CompiledProfile> {
        Ok(CompiledProfile {
            inter_arrival_s: Sampler::with_unit(&self.inter_arrival, 1e-3)?,
            size_bits: Sampler::with_unit(&self.packet_size, 8.0)?,
        })
    }
}

/// Samplers in simulator units: seconds and bits.
#[derive(Debug, Clone)]
pub struct CompiledProfile {
    pub inter_arrival_s: Sampler,
    pub size_bits: Sampler,
}

impl CompiledProfile {
    pub fn sample_size_bits<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        let bits = self.size_bits.sample(rng)?.round();
        Ok(bits.max(1.0) as u64)
    }

    /// Residual time until a newly arrived user's first packet.
    pub fn initial_carry<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let gap = self.inter_arrival_s.sample(rng)?;
        Ok(gap * rng.random::<f64>())
    }
}

/// One packet of traffic demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    /// Absolute simulation time, seconds.
    pub arrival_time: f64,
    /// Size in bits (1 kb = 1000 bits).
    pub bits: u64,
    pub slice: Slice,
}

impl Packet {
    pub fn size_kb(&self) -> f64 {
        self.bits as f64 / 1000.0
    }
}

/// Emits every packet of one user whose renewal clock fires inside
/// `[slot_start, slot_start + slot_len)`, appending to `out`.
///
/// `carry_clock` is the time from `slot_start` until the user's next packet;
/// the returned value is the residual for the following slot. For each packet
/// the size is drawn first, then the next inter-arrival gap, so splitting a
/// slot in two consumes the rng stream identically.
pub fn extend_user_packets<R: Rng + ?Sized>(
    profile: &CompiledProfile,
    slice: Slice,
    slot_start: f64,
    slot_len: f64,
    carry_clock: f64,
    rng: &mut R,
    out: &mut Vec<Packet>,
) -> Result<f64> {
    let mut clock = carry_clock;
    while clock < slot_len {
        out.push(Packet {
            arrival_time: slot_start + clock,
            bits: profile.sample_size_bits(rng)?,
            slice,
        });
        clock += profile.inter_arrival_s.sample(rng)?;
    }
    Ok(clock - slot_len)
}

pub fn generate_user_packets<R: Rng + ?Sized>(
    profile: &CompiledProfile,
    slice: Slice,
    slot_start: f64,
    slot_len: f64,
    carry_clock: f64,
    rng: &mut R,
) -> Result<(Vec<Packet>, f64)> {
    let mut out = Vec::new();
    let carry = extend_user_packets(
        profile,
        slice,
        slot_start,
        slot_len,
        carry_clock,
        rng,
        &mut out,
    )?;
    Ok((out, carry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Trapezoid-rule mean of the truncated Pareto density on a log grid.
    fn quadrature_truncated_mean(shape: f64, scale: f64, max: f64) -> f64 {
        let n = 200_000;
        let (a, b) = (scale.ln(), max.ln());
        let h = (b - a) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let u = a + h * i as f64;
            let x = u.exp();
            // density ∝ x^(-shape-1); dx = x du
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let f = x.powf(-shape - 1.0) * x;
            num += w * f * x;
            den += w * f;
        }
        num / den
    }

    #[test]
    fn pareto_fit_matches_quadrature() {
        let scale = fit_truncated_pareto_scale(2.0, 100.0, 250.0).unwrap();
        let q = quadrature_truncated_mean(2.0, scale, 250.0);
        assert!((q - 100.0).abs() / 100.0 < 1e-6, "quadrature mean {q}");
    }

    #[test]
    fn pareto_fit_video_interarrival_monte_carlo() {
        let scale = fit_truncated_pareto_scale(1.2, 6.0, 12.5).unwrap();
        assert!(scale > 0.0 && scale < 6.0);
        let s = Sampler::new(&TrafficProfile::video().inter_arrival).unwrap();
        let mut r = rng(11);
        let n = 2_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = s.sample(&mut r).unwrap();
            assert!(x >= scale && x <= 12.5);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 6.0).abs() / 6.0 < 0.005, "mean {mean}");
    }

    #[test]
    fn pareto_fit_degenerate_limit_approaches_max() {
        let max = 12.5;
        let scale = fit_truncated_pareto_scale(1.2, max * (1.0 - 1e-7), max).unwrap();
        assert!((max - scale) / max < 1e-5, "scale {scale}");
    }

    #[test]
    fn pareto_fit_rejects_unreachable_mean() {
        assert!(matches!(
            fit_truncated_pareto_scale(1.2, 13.0, 12.5),
            Err(Error::Config(_))
        ));
        assert!(fit_truncated_pareto_scale(1.2, 0.0, 12.5).is_err());
    }

    #[test]
    fn shape_one_mean_is_continuous() {
        let a = truncated_pareto_mean(1.0, 2.0, 10.0);
        let b = truncated_pareto_mean(1.0 + 1e-9, 2.0, 10.0);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn constant_is_constant() {
        let s = Sampler::new(&DistSpec::Constant { value: 40.0 }).unwrap();
        let mut r = rng(1);
        for _ in 0..1000 {
            assert_eq!(s.sample(&mut r).unwrap(), 40.0);
        }
    }

    #[test]
    fn uniform_mean() {
        let s = Sampler::new(&DistSpec::Uniform {
            min: 0.0,
            max: 160.0,
        })
        .unwrap();
        let mut r = rng(2);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample(&mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 80.0).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn truncated_exponential_with_max_hits_mean() {
        let spec = DistSpec::TruncatedExponential {
            mean: 180.0,
            max: Some(600.0),
        };
        let s = Sampler::new(&spec).unwrap();
        let mut r = rng(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = s.sample(&mut r).unwrap();
            assert!(x <= 600.0);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 180.0).abs() / 180.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn validation_errors() {
        assert!(DistSpec::TruncatedPareto {
            shape: 1.0,
            mean: 1.0,
            max: 2.0
        }
        .validate()
        .is_err());
        assert!(DistSpec::TruncatedPareto {
            shape: 1.2,
            mean: 3.0,
            max: 2.0
        }
        .validate()
        .is_err());
        assert!(DistSpec::Constant { value: -1.0 }.validate().is_err());
        assert!(DistSpec::Uniform { min: 5.0, max: 1.0 }.validate().is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: DistSpec =
            toml::from_str("kind = \"truncated-pareto\"\nshape = 1.2\nmean = 6.0\nmax = 12.5")
                .unwrap();
        assert_eq!(spec, TrafficProfile::video().inter_arrival);
        let bad: std::result::Result<DistSpec, _> =
            toml::from_str("kind = \"constant\"\nvalue = 1.0\nextra = 2");
        assert!(bad.is_err());
    }

    #[test]
    fn carry_clock_that_does_not_fire() {
        let p = TrafficProfile::volte().compile().unwrap();
        let (pkts, carry) =
            generate_user_packets(&p, Slice::Volte, 0.0, 1.0, 2.0, &mut rng(4)).unwrap();
        assert!(pkts.is_empty());
        assert!((carry - 1.0).abs() < 1e-15);
    }

    #[test]
    fn volte_renewal_rate() {
        let p = TrafficProfile::volte().compile().unwrap();
        let mut r = rng(5);
        let mut carry = 0.0;
        let mut count = 0usize;
        let slots = 20_000;
        for k in 0..slots {
            let (pkts, c) =
                generate_user_packets(&p, Slice::Volte, k as f64, 1.0, carry, &mut r).unwrap();
            count += pkts.len();
            carry = c;
        }
        let rate = count as f64 / slots as f64;
        assert!((rate - 12.5).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn renewal_continuity_across_split_slot() {
        let p = TrafficProfile::video().compile().unwrap();
        let (full, c_full) =
            generate_user_packets(&p, Slice::Video, 3.0, 1.0, 0.001, &mut rng(9)).unwrap();
        let mut r = rng(9);
        let (mut a, c_half) =
            generate_user_packets(&p, Slice::Video, 3.0, 0.5, 0.001, &mut r).unwrap();
        let (b, c_split) =
            generate_user_packets(&p, Slice::Video, 3.5, 0.5, c_half, &mut r).unwrap();
        a.extend(b);
        assert_eq!(full.len(), a.len());
        for (x, y) in full.iter().zip(&a) {
            assert_eq!(x.bits, y.bits);
            assert!((x.arrival_time - y.arrival_time).abs() < 1e-12);
        }
        assert!((c_full - c_split).abs() < 1e-12);
    }
}
