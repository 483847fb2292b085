//! Experiment configuration: a human-editable TOML file that round-trips
//! losslessly. Arm indices in config files are 1-based.

use batchmem::instances::{
    make_hard_instance, perturb, sample_good_set, BanditInstance, GoodArmSet, PerturbationSpec,
};
use batchmem::runtime::GridMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub policy: PolicySpec,
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lab: Option<LabSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InstanceSpec {
    /// Explicit Bernoulli means.
    Bernoulli { means: Vec<f64> },
    /// The half-good/half-bad family; the good set is sampled per
    /// replication when not given. Indices are 1-based.
    Hard {
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        good_set: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturb: Option<PerturbSpec>,
    },
    /// Means i.i.d. uniform on `[0,1]`, redrawn per replication.
    Random { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    /// 1-based arm.
    pub arm: usize,
    pub gap: f64,
}

impl InstanceSpec {
    pub fn arm_count(&self) -> usize {
        match self {
            InstanceSpec::Bernoulli { means } => means.len(),
            InstanceSpec::Hard { k, .. } | InstanceSpec::Random { k } => *k,
        }
    }

    /// True when the instance is redrawn per replication seed.
    pub fn is_seeded(&self) -> bool {
        match self {
            InstanceSpec::Bernoulli { .. } => false,
            InstanceSpec::Hard { good_set, .. } => good_set.is_none(),
            InstanceSpec::Random { .. } => true,
        }
    }

    /// Build the instance (and its good set, when one exists) for one
    /// replication seed.
    pub fn materialize(&self, seed: u64) -> Result<(BanditInstance, Option<GoodArmSet>), CliError> {
        match self {
            InstanceSpec::Bernoulli { means } => {
                let inst =
                    BanditInstance::bernoulli(means.clone()).map_err(CliError::usage_from)?;
                Ok((inst, None))
            }
            InstanceSpec::Random { k } => Ok((BanditInstance::random_uniform(*k, seed), None)),
            InstanceSpec::Hard {
                k,
                good_set,
                perturb: p,
            } => {
                let good = match good_set {
                    Some(arms) => {
                        if arms.iter().any(|&a| a == 0 || a > *k) {
                            return Err(CliError::usage(
                                "InvalidHardFamily",
                                "good_set uses 1-based arm indices in 1..=k",
                            ));
                        }
                        GoodArmSet::new(*k, arms.iter().map(|&a| a - 1).collect())
                            .map_err(CliError::usage_from)?
                    }
                    None => sample_good_set(*k, seed).map_err(CliError::usage_from)?,
                };
                let mut inst = make_hard_instance(&good);
                if let Some(p) = p {
                    if p.arm == 0 {
                        return Err(CliError::usage(
                            "InvalidPerturbation",
                            "perturb.arm is 1-based",
                        ));
                    }
                    inst = perturb(
                        &inst,
                        PerturbationSpec {
                            arm: p.arm - 1,
                            gap: p.gap,
                        },
                    )
                    .map_err(CliError::usage_from)?;
                }
                Ok((inst, Some(good)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    Algorithm1 {
        block_size: u32,
        /// Failure probability; defaults to `T^-4`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Ucb,
    Elimination {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Constant {
        /// 1-based arm; defaults to arm 1.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arm: Option<usize>,
    },
}

impl PolicySpec {
    /// Elimination chooses its boundaries from the surviving set, so it runs
    /// under an adaptive grid; everything else is static.
    pub fn natural_grid_mode(&self) -> GridMode {
        match self {
            PolicySpec::Elimination { .. } => GridMode::Adaptive,
            _ => GridMode::Static,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: u64,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub replications: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_bits: Option<u64>,
    /// Overrides the policy's natural grid mode when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_mode: Option<GridMode>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub horizons: Vec<u64>,
    pub arm_counts: Vec<usize>,
    /// Block sizes for the block-scanning policy; leave empty for baselines.
    #[serde(default)]
    pub block_sizes: Vec<u32>,
    /// Bit budgets; 0 means unbounded. Defaults to a single unbounded cell.
    #[serde(default)]
    pub budgets: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabSpec {
    /// Explicit exploration threshold `n`; mutually exclusive with
    /// `threshold_from`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u64>,
    /// "t1" uses the first grid level; "lb" derives `n` from the regret
    /// guarantee below (and fails with diagnostics outside the regime).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_from: Option<String>,
    #[serde(default = "one_f64")]
    pub regret_constant: f64,
}

fn one_f64() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage("ConfigParse", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("ConfigRead", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[instance]
kind = "hard"
k = 8

[policy]
kind = "algorithm1"
block_size = 2

[run]
horizon = 100000
master_seed = 7
replications = 50

[lab]
threshold = 36
"#;

    #[test]
    fn roundtrip_is_lossless() {
        let config = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let text = config.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = EXAMPLE.replace("threshold = 36", "thresold = 36");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn hard_instance_materializes_per_seed() {
        let config = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert!(config.instance.is_seeded());
        let (a, good_a) = config.instance.materialize(1).unwrap();
        let (b, _) = config.instance.materialize(2).unwrap();
        assert_eq!(a.arm_count(), 8);
        assert!(good_a.is_some());
        assert_ne!(a.means(), b.means()); // different hidden sets
    }

    #[test]
    fn one_based_indices_validated() {
        let spec = InstanceSpec::Hard {
            k: 4,
            good_set: Some(vec![0, 2]),
            perturb: None,
        };
        assert!(spec.materialize(1).is_err());
        let spec = InstanceSpec::Hard {
            k: 4,
            good_set: Some(vec![1, 3]),
            perturb: Some(PerturbSpec { arm: 1, gap: 0.1 }),
        };
        let (inst, good) = spec.materialize(1).unwrap();
        assert_eq!(inst.means(), &[0.6, 0.0, 0.5, 0.0]);
        assert!(good.unwrap().contains(0));
    }
}
