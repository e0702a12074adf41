//! Run configuration: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, WarmStartConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::rl::{ConstraintSpec, CumulativeConstraint, RlConfig, Variant};
use crate::safety::LatencyLimit;
use crate::traffic::Slice;

/// Output directories resolve against this variable when it is set.
pub const OUTPUT_ROOT_VAR: &str = "CLARA_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Clara,
    IpoFixedT,
    AdaptiveIpoNoSafelayer,
    Ppo,
    PpoSafelayer,
    Baseline(BaselineKind),
}

impl Method {
    pub const LEARNED: [Method; 5] = [
        Method::Clara,
        Method::IpoFixedT,
        Method::AdaptiveIpoNoSafelayer,
        Method::Ppo,
        Method::PpoSafelayer,
    ];

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Clara => Some(Variant::CLARA),
            Method::IpoFixedT => Some(Variant::IPO_FIXED_T),
            Method::AdaptiveIpoNoSafelayer => Some(Variant::ADAPTIVE_IPO),
            Method::Ppo => Some(Variant::PPO),
            Method::PpoSafelayer => Some(Variant::PPO_SAFELAYER),
            Method::Baseline(_) => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Clara => f.write_str("clara"),
            Method::IpoFixedT => f.write_str("ipo_fixed_t"),
            Method::AdaptiveIpoNoSafelayer => f.write_str("adaptive_ipo_no_safelayer"),
            Method::Ppo => f.write_str("ppo"),
            Method::PpoSafelayer => f.write_str("ppo_safelayer"),
            Method::Baseline(k) => write!(f, "baseline:{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(m) = Method::LEARNED.into_iter().find(|m| m.to_string() == s) {
            return Ok(m);
        }
        s.strip_prefix("baseline:")
            .and_then(BaselineKind::from_name)
            .map(Method::Baseline)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub slots: usize,
    /// Also write the per-slot trajectory of every evaluation episode.
    pub trajectory: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            slots: 500,
            trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub iterations: u64,
    /// Write a checkpoint every this many iterations (0: final only).
    pub checkpoint_every: u64,
    pub warm_start: bool,
    /// Relative paths resolve against `CLARA_OUTPUT_ROOT`, else the working
    /// directory. Defaults to `runs/<method>-seed<seed>`.
    pub output_dir: Option<PathBuf>,
    pub warmstart: WarmStartConfig,
    pub eval: EvalConfig,
    pub env: EnvConfig,
    pub rl: RlConfig,
    pub constraints: ConstraintSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Clara,
            seed: 0,
            iterations: 150,
            checkpoint_every: 0,
            warm_start: false,
            output_dir: None,
            warmstart: WarmStartConfig::default(),
            eval: EvalConfig::default(),
            env: EnvConfig::default(),
            rl: RlConfig::default(),
            constraints: ConstraintSpec {
                cumulative: vec![CumulativeConstraint {
                    slice: Slice::Video,
                    omega: 5.0,
                }],
                latency: vec![
                    LatencyLimit {
                        slice: Slice::Video,
                        epsilon: 0.1,
                    },
                    LatencyLimit {
                        slice: Slice::Volte,
                        epsilon: 0.1,
                    },
                ],
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        // overrides may index into default arrays, so start from the defaults
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Internal(e.to_string()))?;
        merge(&mut table, file);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.rl.validate()?;
        self.constraints.validate()?;
        if self.iterations == 0 && self.method.variant().is_some() {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.eval.episodes == 0 || self.eval.slots == 0 {
            return Err(Error::config("eval.episodes and eval.slots must be >= 1"));
        }
        if self.warm_start && self.method.variant().is_none() {
            return Err(Error::config("warm_start only applies to learned methods"));
        }
        Ok(())
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        let dir = self.output_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(format!(
                "{}-seed{}",
                self.method.to_string().replace(':', "-"),
                self.seed
            ))
        });
        resolve_output(&dir)
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Tables merge recursively; anything else (arrays included) is replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; numeric segments index into arrays (`constraints.latency.0.epsilon`).
/// The value is read as a TOML literal, or as a bare string when it does not
/// parse as one.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override {spec:?} has an empty key")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let bad = |what: String| Error::config(format!("override {spec:?}: {what}"));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    let mut iter = path.iter().peekable();
    while let Some(p) = iter.next() {
        let mut slot = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        // array elements, possibly nested
        while let toml::Value::Array(items) = slot {
            let Some(idx) = iter.next() else {
                return Err(bad(format!("{p} is an array; give an index")));
            };
            let i: usize = idx
                .parse()
                .map_err(|_| bad(format!("{idx} is not an index")))?;
            let len = items.len();
            slot = items
                .get_mut(i)
                .ok_or_else(|| bad(format!("index {i} out of range (len {len})")))?;
        }
        cur = slot
            .as_table_mut()
            .ok_or_else(|| bad(format!("{p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            RunConfig::from_toml_str("", &[]).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn overrides_nest_and_parse() {
        let cfg = RunConfig::from_toml_str(
            "seed = 3\n[rl]\nlr = 0.001\n",
            &[
                "rl.epochs=4".into(),
                "method=baseline:one_third".into(),
                "env.user_cap = 50".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rl.lr, 0.001);
        assert_eq!(cfg.rl.epochs, 4);
        assert_eq!(cfg.env.user_cap, 50);
        assert_eq!(cfg.method, Method::Baseline(BaselineKind::OneThird));
    }

    #[test]
    fn overrides_index_arrays() {
        let cfg =
            RunConfig::from_toml_str("", &["constraints.latency.1.epsilon=0.25".into()]).unwrap();
        assert_eq!(cfg.constraints.latency[1].epsilon, 0.25);
        assert!(RunConfig::from_toml_str("", &["constraints.latency.5.epsilon=1".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["constraints.latency.x=1".into()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("sed = 1", &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("", &["rl.lrr=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("", &["nokey".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("", &["rl.mu_t=0.5".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("method = \"sac\"", &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn method_names_round_trip() {
        let mut all: Vec<Method> = Method::LEARNED.to_vec();
        all.extend(BaselineKind::ALL.map(Method::Baseline));
        for m in all {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(
            RunConfig::from_toml_str(&cfg.to_toml().unwrap(), &[]).unwrap(),
            cfg
        );
    }
}
