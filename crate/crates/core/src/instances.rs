//! Bandit instances and deterministic reward streams.
//!
//! The hard family places mean 1/2 on a hidden half `S` of the arms and 0 on
//! the rest; a one-arm perturbation lifts a single good arm to `1/2 + gap`,
//! making it uniquely optimal. Rewards are indexed by `(arm, pull_index)`
//! rather than by time: the cell `X_{i,l}` is a pure function of the master
//! seed, so two instances that differ only at arm `j` share every reward of
//! every other arm under the same seed. That coupling is what the
//! change-of-measure experiments rely on.
//!
//! Arm indices are 0-based throughout the API; serialized descriptions and
//! CLI formats use 1-based indices.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, keyed_u64, to_unit_interval};

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("invalid hard family: {0}")]
    InvalidHardFamily(String),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("arm index {arm} out of range for {arm_count} arms")]
    IndexError { arm: usize, arm_count: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

impl InstanceError {
    pub fn code(&self) -> &'static str {
        match self {
            InstanceError::InvalidHardFamily(_) => "InvalidHardFamily",
            InstanceError::InvalidPerturbation(_) => "InvalidPerturbation",
            InstanceError::IndexError { .. } => "IndexError",
            InstanceError::InvalidInstance(_) => "InvalidInstance",
        }
    }
}

/// Reward distribution family. Only Bernoulli arms are implemented; the enum
/// exists so descriptions stay forward-compatible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Bernoulli,
}

/// A `K`-armed stochastic bandit instance: one mean per arm, all in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    means: Vec<f64>,
    kind: RewardKind,
}

impl BanditInstance {
    pub fn bernoulli(means: Vec<f64>) -> Result<Self, InstanceError> {
        if means.is_empty() {
            return Err(InstanceError::InvalidInstance(
                "need at least one arm".into(),
            ));
        }
        if let Some(bad) = means
            .iter()
            .find(|m| !(0.0..=1.0).contains(*m) || m.is_nan())
        {
            return Err(InstanceError::InvalidInstance(format!(
                "mean {bad} outside [0,1]"
            )));
        }
        Ok(Self {
            means,
            kind: RewardKind::Bernoulli,
        })
    }

    /// Means i.i.d. uniform on `[0,1]`, derived from the seed.
    pub fn random_uniform(arm_count: usize, seed: u64) -> Self {
        let means = (0..arm_count)
            .map(|i| to_unit_interval(keyed_u64(seed, rng::tag::INSTANCE, i as u64)))
            .collect();
        Self {
            means,
            kind: RewardKind::Bernoulli,
        }
    }

    pub fn arm_count(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, arm: usize) -> f64 {
        self.means[arm]
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    /// Largest mean.
    pub fn best_mean(&self) -> f64 {
        self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The hidden half of good arms: a subset of `[K]` of size exactly `K/2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodArmSet {
    arm_count: usize,
    members: BTreeSet<usize>,
}

impl GoodArmSet {
    pub fn new(arm_count: usize, members: BTreeSet<usize>) -> Result<Self, InstanceError> {
        if arm_count == 0 || !arm_count.is_multiple_of(2) {
            return Err(InstanceError::InvalidHardFamily(format!(
                "arm count {arm_count} must be even and positive"
            )));
        }
        if members.len() != arm_count / 2 {
            return Err(InstanceError::InvalidHardFamily(format!(
                "good set has {} members, want {}",
                members.len(),
                arm_count / 2
            )));
        }
        if let Some(&arm) = members.iter().find(|&&a| a >= arm_count) {
            return Err(InstanceError::IndexError { arm, arm_count });
        }
        Ok(Self { arm_count, members })
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.members.contains(&arm)
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }
}

/// Uniformly random size-`K/2` subset of `[K]`, deterministic given the seed.
pub fn sample_good_set(arm_count: usize, seed: u64) -> Result<GoodArmSet, InstanceError> {
    if arm_count == 0 || !arm_count.is_multiple_of(2) {
        return Err(InstanceError::InvalidHardFamily(format!(
            "arm count {arm_count} must be even and positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_u64(seed, rng::tag::GOOD_SET, 0));
    let mut arms: Vec<usize> = (0..arm_count).collect();
    arms.shuffle(&mut rng);
    let members: BTreeSet<usize> = arms[..arm_count / 2].iter().copied().collect();
    GoodArmSet::new(arm_count, members)
}

/// Means 1/2 on the good set, 0 elsewhere.
pub fn make_hard_instance(good_set: &GoodArmSet) -> BanditInstance {
    let means = (0..good_set.arm_count())
        .map(|i| if good_set.contains(i) { 0.5 } else { 0.0 })
        .collect();
    BanditInstance {
        means,
        kind: RewardKind::Bernoulli,
    }
}

/// Lift one good arm of a hard instance to `1/2 + gap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// 0-based arm to perturb; must currently have mean 1/2.
    pub arm: usize,
    /// Added gap; the perturbed mean is `1/2 + gap <= 1`.
    pub gap: f64,
}

/// Replace arm `spec.arm`'s law with mean `1/2 + spec.gap`, all others
/// unchanged. The perturbed arm becomes the unique maximizer.
pub fn perturb(
    instance: &BanditInstance,
    spec: PerturbationSpec,
) -> Result<BanditInstance, InstanceError> {
    if spec.arm >= instance.arm_count() {
        return Err(InstanceError::IndexError {
            arm: spec.arm,
            arm_count: instance.arm_count(),
        });
    }
    if instance.mean(spec.arm) != 0.5 {
        return Err(InstanceError::InvalidPerturbation(format!(
            "arm {} has mean {}, only good arms (mean 1/2) can be perturbed",
            spec.arm,
            instance.mean(spec.arm)
        )));
    }
    if !spec.gap.is_finite() || spec.gap <= 0.0 || 0.5 + spec.gap > 1.0 {
        return Err(InstanceError::InvalidPerturbation(format!(
            "gap {} outside (0, 1/2]",
            spec.gap
        )));
    }
    let mut means = instance.means.clone();
    means[spec.arm] = 0.5 + spec.gap;
    Ok(BanditInstance {
        means,
        kind: instance.kind,
    })
}

// ---------------------------------------------------------------------------
// Reward streams
// ---------------------------------------------------------------------------

/// Pull-indexed pre-committed reward table, realized lazily.
///
/// `draw(i, l)` is the reward of the `l`-th pull of arm `i` (1-based pull
/// index). The underlying uniform depends only on `(master_seed, i, l)`, so:
///
/// - instances that differ only at arm `j` produce bitwise-identical draws on
///   every other arm for the same seed, and
/// - raising the mean of arm `j` can only flip its draws 0 -> 1.
#[derive(Debug, Clone)]
pub struct RewardStream {
    master_seed: u64,
    instance: BanditInstance,
}

impl RewardStream {
    pub fn new(master_seed: u64, instance: BanditInstance) -> Self {
        Self {
            master_seed,
            instance,
        }
    }

    pub fn instance(&self) -> &BanditInstance {
        &self.instance
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Reward of the `pull_index`-th pull of `arm` (`pull_index >= 1`).
    pub fn draw(&self, arm: usize, pull_index: u64) -> Result<u8, InstanceError> {
        if arm >= self.instance.arm_count() {
            return Err(InstanceError::IndexError {
                arm,
                arm_count: self.instance.arm_count(),
            });
        }
        debug_assert!(pull_index >= 1, "pull indices are 1-based");
        let u = to_unit_interval(keyed_u64(
            self.master_seed ^ rng::tag::REWARD,
            arm as u64,
            pull_index,
        ));
        Ok(u8::from(u < self.instance.mean(arm)))
    }
}

// ---------------------------------------------------------------------------
// Serializable description
// ---------------------------------------------------------------------------

/// Structured text form of an instance, as consumed by the CLI config.
/// Arm indices here are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDescription {
    pub k: usize,
    pub means: Vec<f64>,
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub good_set: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<DescribedPerturbation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescribedPerturbation {
    /// 1-based arm index.
    pub arm: usize,
    pub gap: f64,
}

impl InstanceDescription {
    pub fn plain(instance: &BanditInstance) -> Self {
        Self {
            k: instance.arm_count(),
            means: instance.means.clone(),
            kind: instance.kind,
            good_set: None,
            perturbation: None,
        }
    }

    pub fn hard(good_set: &GoodArmSet, perturbation: Option<PerturbationSpec>) -> Self {
        let base = make_hard_instance(good_set);
        let instance = match perturbation {
            Some(spec) => perturb(&base, spec).expect("perturbation validated by caller"),
            None => base,
        };
        Self {
            k: instance.arm_count(),
            means: instance.means.clone(),
            kind: instance.kind,
            good_set: Some(good_set.members().map(|a| a + 1).collect()),
            perturbation: perturbation.map(|s| DescribedPerturbation {
                arm: s.arm + 1,
                gap: s.gap,
            }),
        }
    }

    pub fn build(&self) -> Result<BanditInstance, InstanceError> {
        if self.means.len() != self.k {
            return Err(InstanceError::InvalidInstance(format!(
                "k={} but {} means given",
                self.k,
                self.means.len()
            )));
        }
        BanditInstance::bernoulli(self.means.clone())
    }

    /// The good set with indices shifted back to 0-based.
    pub fn good_set(&self) -> Result<Option<GoodArmSet>, InstanceError> {
        match &self.good_set {
            None => Ok(None),
            Some(arms) => {
                if arms.contains(&0) {
                    return Err(InstanceError::InvalidInstance(
                        "serialized arm indices are 1-based".into(),
                    ));
                }
                let members: BTreeSet<usize> = arms.iter().map(|&a| a - 1).collect();
                GoodArmSet::new(self.k, members).map(Some)
            }
        }
    }
}
