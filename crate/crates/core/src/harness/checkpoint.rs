//! JSON checkpoints: named parameter tensors plus the optimiser, schedule,
//! rng and replay state needed to resume bit-for-bit.
//!
//! Serialisation is deterministic (fields in declaration order, shortest
//! round-trip floats), so load-then-save reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::rl::{BarrierSchedule, GaussianPolicy, Phase, RngState, TrainerSnapshot, ValueNet};
use crate::safety::{CostModel, ReplayBuffer};

pub const FORMAT: &str = "clara-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOptimizer {
    pub name: String,
    pub state: Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub iteration: u64,
    pub phase: Phase,
    pub phase1_iters: usize,
    pub tensors: Vec<Tensor>,
    pub optimizers: Vec<NamedOptimizer>,
    pub schedule: BarrierSchedule,
    pub rng: RngState,
    pub buffer: ReplayBuffer,
    pub cost_model: Option<CostModel>,
}

fn value_prefix(config: &RunConfig, i: usize) -> String {
    match i {
        0 => "value.reward".to_string(),
        _ => format!("value.cost.{}", config.constraints.cumulative[i - 1].slice),
    }
}

fn push_mlp(out: &mut Vec<Tensor>, prefix: &str, net: &Mlp) {
    for (name, shape, range) in net.tensor_layout() {
        out.push(Tensor {
            name: format!("{prefix}.{name}"),
            shape,
            data: net.params[range].to_vec(),
        });
    }
}

struct TensorSet<'a> {
    tensors: &'a [Tensor],
}

impl TensorSet<'_> {
    fn get(&self, name: &str) -> Result<&Tensor> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| malformed(format!("missing tensor {name}")))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(malformed(format!(
                "tensor {name} has shape {:?} but {} values",
                t.shape,
                t.data.len()
            )));
        }
        Ok(t)
    }

    /// Widths are read off the `layers.{l}.weight` shapes.
    fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let mut sizes = Vec::new();
        for l in 0.. {
            let Some(w) = self
                .tensors
                .iter()
                .find(|t| t.name == format!("{prefix}.layers.{l}.weight"))
            else {
                break;
            };
            let [out, inp] = w.shape[..] else {
                return Err(malformed(format!("{} must be 2-d", w.name)));
            };
            if sizes.is_empty() {
                sizes.push(inp);
            } else if sizes.last() != Some(&inp) {
                return Err(malformed(format!(
                    "{} does not chain with the previous layer",
                    w.name
                )));
            }
            sizes.push(out);
        }
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(malformed(format!("network {prefix} has no usable layers")));
        }
        let mut net = Mlp::zeros(&sizes);
        for (name, shape, range) in net.tensor_layout() {
            let t = self.get(&format!("{prefix}.{name}"))?;
            if t.shape != shape {
                return Err(malformed(format!(
                    "{} has shape {:?}, expected {shape:?}",
                    t.name, t.shape
                )));
            }
            net.params[range].copy_from_slice(&t.data);
        }
        Ok(net)
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        match t.data[..] {
            [x] => Ok(x),
            _ => Err(malformed(format!("{name} must hold one value"))),
        }
    }
}

fn malformed(reason: String) -> Error {
    Error::Malformed {
        path: "<checkpoint>".into(),
        reason,
    }
}

impl Checkpoint {
    pub fn from_snapshot(config: &RunConfig, snap: &TrainerSnapshot) -> Self {
        let mut tensors = Vec::new();
        push_mlp(&mut tensors, "policy", &snap.policy.net);
        tensors.push(Tensor {
            name: "policy.log_std".into(),
            shape: vec![snap.policy.log_std.len()],
            data: snap.policy.log_std.clone(),
        });
        for (i, v) in snap.values.iter().enumerate() {
            let prefix = value_prefix(config, i);
            push_mlp(&mut tensors, &prefix, &v.net);
            tensors.push(Tensor {
                name: format!("{prefix}.scale"),
                shape: vec![1],
                data: vec![v.scale],
            });
        }
        let mut optimizers = vec![NamedOptimizer {
            name: "policy".into(),
            state: snap.policy_opt.clone(),
        }];
        optimizers.extend(
            snap.value_opts
                .iter()
                .enumerate()
                .map(|(i, o)| NamedOptimizer {
                    name: value_prefix(config, i),
                    state: o.clone(),
                }),
        );
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: config.clone(),
            iteration: snap.iteration,
            phase: snap.phase,
            phase1_iters: snap.phase1_iters,
            tensors,
            optimizers,
            schedule: snap.schedule.clone(),
            rng: snap.rng.clone(),
            buffer: snap.buffer.clone(),
            cost_model: snap.cost_model.clone(),
        }
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        let set = TensorSet {
            tensors: &self.tensors,
        };
        let net = set.mlp("policy")?;
        let log_std = set.get("policy.log_std")?.data.clone();
        if log_std.len() != net.output_dim() {
            return Err(malformed(
                "policy.log_std does not match the policy output".into(),
            ));
        }
        Ok(GaussianPolicy { net, log_std })
    }

    pub fn to_snapshot(&self) -> Result<TrainerSnapshot> {
        let set = TensorSet {
            tensors: &self.tensors,
        };
        let m = self.config.constraints.cumulative.len();
        let mut values = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let prefix = value_prefix(&self.config, i);
            values.push(ValueNet {
                net: set.mlp(&prefix)?,
                scale: set.scalar(&format!("{prefix}.scale"))?,
            });
        }
        let opt = |name: &str| {
            self.optimizers
                .iter()
                .find(|o| o.name == name)
                .map(|o| o.state.clone())
                .ok_or_else(|| malformed(format!("missing optimizer {name}")))
        };
        Ok(TrainerSnapshot {
            iteration: self.iteration,
            phase: self.phase,
            phase1_iters: self.phase1_iters,
            policy: self.policy()?,
            values,
            policy_opt: opt("policy")?,
            value_opts: (0..=m)
                .map(|i| opt(&value_prefix(&self.config, i)))
                .collect::<Result<_>>()?,
            schedule: self.schedule.clone(),
            rng: self.rng.clone(),
            buffer: self.buffer.clone(),
            cost_model: self.cost_model.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(malformed(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Malformed {
                path: path.display().to_string(),
                reason: j.to_string(),
            },
            Error::Malformed { reason, .. } => Error::Malformed {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}
