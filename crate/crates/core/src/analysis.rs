//! Transcript analysis: regret, sampling profiles, and information accounting.
//!
//! The lower-bound lab reduces a run to a thresholded sampling profile
//! `Y_i = 1{N_i(T) >= n}`, treats it as a coordinatewise predictor of the
//! hidden good-arm membership bits, and reports the two sides of the
//! information chain: the information forced by the observed error rate,
//! `K (1 - H_b(P_e)) - log2(2K)/2` bits, against the boundary-memory
//! capacity `(B - 1) W`. The asymptotic comparison between the two is out of
//! reach at desk scale and is reported, never asserted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::instances::{BanditInstance, GoodArmSet};
use crate::runtime::Transcript;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("transcript has {transcript} arms, argument has {other}")]
    ArityMismatch { transcript: usize, other: usize },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("empty run set")]
    EmptyRunSet,
    #[error("regime invalid: {0}")]
    RegimeInvalid(RegimeDiagnostics),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::ArityMismatch { .. } => "ArityMismatch",
            AnalysisError::DomainError(_) => "DomainError",
            AnalysisError::EmptyRunSet => "EmptyRunSet",
            AnalysisError::RegimeInvalid(_) => "RegimeInvalid",
        }
    }
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

/// Pseudo-regret `sum_i N_i(T) (mu_star - mu_i)`.
pub fn regret(transcript: &Transcript, instance: &BanditInstance) -> Result<f64, AnalysisError> {
    if transcript.arm_count != instance.arm_count() {
        return Err(AnalysisError::ArityMismatch {
            transcript: transcript.arm_count,
            other: instance.arm_count(),
        });
    }
    let best = instance.best_mean();
    Ok(transcript
        .pull_counts
        .iter()
        .zip(instance.means())
        .map(|(&n, &mu)| n as f64 * (best - mu))
        .sum())
}

// ---------------------------------------------------------------------------
// Thresholded sampling profile
// ---------------------------------------------------------------------------

/// `Y_i = 1{N_i(T) >= n}`: which arms received a nontrivial share of the
/// exploration budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub threshold: u64,
    pub bits: Vec<bool>,
}

/// Threshold the final pull counts at `n >= 1`.
pub fn profile(transcript: &Transcript, threshold: u64) -> Profile {
    Profile {
        threshold,
        bits: transcript
            .pull_counts
            .iter()
            .map(|&n| n >= threshold)
            .collect(),
    }
}

/// Profile classification errors against the hidden good set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCounts {
    /// Bad arms crossing the threshold.
    pub false_positives: u32,
    /// Good arms missing it.
    pub false_negatives: u32,
    /// `(FP + FN) / K`.
    pub error_rate: f64,
}

pub fn error_counts(
    profile: &Profile,
    good_set: &GoodArmSet,
) -> Result<ErrorCounts, AnalysisError> {
    if profile.bits.len() != good_set.arm_count() {
        return Err(AnalysisError::ArityMismatch {
            transcript: profile.bits.len(),
            other: good_set.arm_count(),
        });
    }
    let mut fp = 0u32;
    let mut missed = 0u32;
    for (arm, &crossed) in profile.bits.iter().enumerate() {
        match (good_set.contains(arm), crossed) {
            (false, true) => fp += 1,
            (true, false) => missed += 1,
            _ => {}
        }
    }
    Ok(ErrorCounts {
        false_positives: fp,
        false_negatives: missed,
        error_rate: (fp + missed) as f64 / good_set.arm_count() as f64,
    })
}

// ---------------------------------------------------------------------------
// Entropy and the information chain
// ---------------------------------------------------------------------------

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(AnalysisError::DomainError(format!(
            "probability {p} outside [0,1]"
        )));
    }
    let term = |x: f64| if x == 0.0 { 0.0 } else { -x * x.log2() };
    Ok(term(p) + term(1.0 - p))
}

/// Lower bound on `I(S_star; Y)` implied by error rate `p_e`:
/// `K (1 - H_b(p_e)) - log2(2K) / 2` bits.
///
/// For `p_e > 1/2` the thresholding estimator is worse than a coin flip and
/// the entropy factor is clipped to 1, making the bound vacuous (it may be
/// negative; it is reported as-is).
pub fn info_lower_bound(arm_count: usize, error_rate: f64) -> f64 {
    let hb = if error_rate <= 0.5 {
        binary_entropy(error_rate).expect("rate in [0, 1/2]")
    } else {
        1.0
    };
    arm_count as f64 * (1.0 - hb) - 0.5 * (2.0 * arm_count as f64).log2()
}

/// Capacity of the boundary-memory channel: `(B - 1) W` bits.
pub fn capacity_bound(transcript: &Transcript, budget_bits: u64) -> u64 {
    (transcript.batch_count() as u64 - 1) * budget_bits
}

// ---------------------------------------------------------------------------
// Lower-bound regime configuration
// ---------------------------------------------------------------------------

/// Constants of the hard-instance construction. The admissible default is
/// `c_delta = 8`, `alpha = ln(1.8)/512`, `beta = 0.1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConstants {
    pub c_delta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LowerBoundConstants {
    fn default() -> Self {
        Self {
            c_delta: 8.0,
            alpha: 1.8f64.ln() / 512.0,
            beta: 0.1,
        }
    }
}

/// Which regime requirements hold, with the offending values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeDiagnostics {
    pub gap: f64,
    pub threshold: u64,
    /// `Delta_0 <= 1/4`.
    pub gap_small_enough: bool,
    /// `n >= 1`.
    pub threshold_at_least_one: bool,
    /// `n <= T/2`.
    pub threshold_at_most_half: bool,
}

impl RegimeDiagnostics {
    pub fn valid(&self) -> bool {
        self.gap_small_enough && self.threshold_at_least_one && self.threshold_at_most_half
    }
}

impl std::fmt::Display for RegimeDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gap {:.4} {} 1/4, n = {} ({}, {})",
            self.gap,
            if self.gap_small_enough { "<=" } else { ">" },
            self.threshold,
            if self.threshold_at_least_one {
                ">= 1"
            } else {
                "< 1"
            },
            if self.threshold_at_most_half {
                "<= T/2"
            } else {
                "> T/2"
            },
        )
    }
}

/// Derived parameters of the hard construction for a regret guarantee with
/// constant `C`: the perturbation gap `Delta_0` and exploration threshold `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundConfig {
    pub horizon: u64,
    pub arm_count: usize,
    pub regret_constant: f64,
    pub constants: LowerBoundConstants,
    /// `Delta_0 = c_delta * C * ln T * ln K * sqrt(K/T)`.
    pub gap: f64,
    /// `n = floor(alpha * T / (C^2 K ln^2 T ln^2 K))`.
    pub threshold: u64,
    pub diagnostics: RegimeDiagnostics,
}

/// Evaluate the construction without rejecting invalid regimes.
pub fn evaluate_lb_config(
    horizon: u64,
    arm_count: usize,
    regret_constant: f64,
    constants: LowerBoundConstants,
) -> LowerBoundConfig {
    let t = horizon as f64;
    let k = arm_count as f64;
    let log_t = t.ln();
    let log_k = k.ln();
    let gap = constants.c_delta * regret_constant * log_t * log_k * (k / t).sqrt();
    let threshold = (constants.alpha * t
        / (regret_constant * regret_constant * k * log_t * log_t * log_k * log_k))
        .floor()
        .max(0.0) as u64;
    let diagnostics = RegimeDiagnostics {
        gap,
        threshold,
        gap_small_enough: gap <= 0.25,
        threshold_at_least_one: threshold >= 1,
        threshold_at_most_half: threshold <= horizon / 2,
    };
    LowerBoundConfig {
        horizon,
        arm_count,
        regret_constant,
        constants,
        gap,
        threshold,
        diagnostics,
    }
}

/// The hard-construction parameters with the default constants; refuses
/// regimes where the construction is invalid (`Delta_0 > 1/4` or `n`
/// outside `[1, T/2]`).
pub fn lb_config(
    horizon: u64,
    arm_count: usize,
    regret_constant: f64,
) -> Result<LowerBoundConfig, AnalysisError> {
    if horizon < 2 || arm_count < 2 {
        return Err(AnalysisError::DomainError("need T >= 2 and K >= 2".into()));
    }
    let config = evaluate_lb_config(
        horizon,
        arm_count,
        regret_constant,
        LowerBoundConstants::default(),
    );
    if !config.diagnostics.valid() {
        return Err(AnalysisError::RegimeInvalid(config.diagnostics));
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Replication aggregates
// ---------------------------------------------------------------------------

/// Empirical frequency with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// 95% Wilson interval for `successes / trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> RateEstimate {
    if trials == 0 {
        return RateEstimate {
            successes,
            trials,
            rate: 0.0,
            wilson_low: 0.0,
            wilson_high: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = 1.959963984540054_f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    RateEstimate {
        successes,
        trials,
        rate: p,
        wilson_low: ((center - spread) / denom).max(0.0),
        wilson_high: ((center + spread) / denom).min(1.0),
    }
}

/// Empirical `P(N_j(T) >= n)` over replicated runs of one instance.
pub fn exploration_rate(
    runs: &[Transcript],
    arm: usize,
    threshold: u64,
) -> Result<RateEstimate, AnalysisError> {
    if runs.is_empty() {
        return Err(AnalysisError::EmptyRunSet);
    }
    if arm >= runs[0].arm_count {
        return Err(AnalysisError::ArityMismatch {
            transcript: runs[0].arm_count,
            other: arm + 1,
        });
    }
    let successes = runs
        .iter()
        .filter(|t| t.pull_counts[arm] >= threshold)
        .count() as u64;
    Ok(wilson_interval(successes, runs.len() as u64))
}

/// Plug-in entropy (bits) of the empirical distribution of encoded
/// boundary-state tuples. Biased downward like any plug-in estimate; it can
/// never exceed the structural `(B-1) W` capacity.
pub fn boundary_entropy_estimate(runs: &[Transcript]) -> f64 {
    if runs.len() < 2 {
        return 0.0;
    }
    let mut counts: std::collections::HashMap<&[BitString], u64> = std::collections::HashMap::new();
    for t in runs {
        *counts.entry(t.boundary_states.as_slice()).or_default() += 1;
    }
    let n = runs.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{make_hard_instance, BanditInstance, GoodArmSet};
    use crate::runtime::{run, RunConfig};
    use crate::scheduler::ConstantPolicy;
    use proptest::prelude::*;

    fn transcript_with_counts(counts: Vec<u64>) -> Transcript {
        // Assemble a minimal transcript via a constant policy and substitute
        // the pull counts under test.
        let k = counts.len();
        let inst = BanditInstance::bernoulli(vec![0.5; k]).unwrap();
        let policy = ConstantPolicy {
            arm: 0,
            horizon: 10,
        };
        let mut t = run(&policy, &inst, &RunConfig::new(10, 1)).unwrap();
        t.arm_count = k;
        t.pull_counts = counts;
        t
    }

    #[test]
    fn regret_examples() {
        let inst = BanditInstance::bernoulli(vec![0.5, 0.0]).unwrap();
        let t = transcript_with_counts(vec![90, 10]);
        assert_eq!(regret(&t, &inst).unwrap(), 5.0);

        let all_best = transcript_with_counts(vec![100, 0]);
        assert_eq!(regret(&all_best, &inst).unwrap(), 0.0);

        let wrong_arity = BanditInstance::bernoulli(vec![0.5]).unwrap();
        assert!(matches!(
            regret(&t, &wrong_arity),
            Err(AnalysisError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn hard_instance_regret_identity() {
        // regret = 1/2 * sum of bad-arm pulls, exactly, per transcript
        let good = GoodArmSet::new(4, [0, 2].into()).unwrap();
        let inst = make_hard_instance(&good);
        let t = transcript_with_counts(vec![40, 7, 50, 3]);
        assert_eq!(regret(&t, &inst).unwrap(), 0.5 * (7 + 3) as f64);
    }

    #[test]
    fn profile_examples() {
        let t = transcript_with_counts(vec![5, 0, 3]);
        assert_eq!(profile(&t, 3).bits, vec![true, false, true]);
        assert_eq!(profile(&t, 1).bits, vec![true, false, true]);
        assert_eq!(profile(&t, 100).bits, vec![false, false, false]);
    }

    #[test]
    fn error_count_examples() {
        let good = GoodArmSet::new(4, [0, 1].into()).unwrap();
        let exact = Profile {
            threshold: 1,
            bits: vec![true, true, false, false],
        };
        let e = error_counts(&exact, &good).unwrap();
        assert_eq!((e.false_positives, e.false_negatives), (0, 0));
        assert_eq!(e.error_rate, 0.0);

        let complement = Profile {
            threshold: 1,
            bits: vec![false, false, true, true],
        };
        let e = error_counts(&complement, &good).unwrap();
        assert_eq!(e.error_rate, 1.0);

        let half = Profile {
            threshold: 1,
            bits: vec![true, false, true, false],
        };
        let e = error_counts(&half, &good).unwrap();
        assert_eq!((e.false_positives, e.false_negatives), (1, 1));
        assert_eq!(e.error_rate, 0.5);
    }

    #[test]
    fn binary_entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // high-precision series value for H_b(0.475)
        assert!((binary_entropy(0.475).unwrap() - 0.998195879042810).abs() < 1e-10);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn info_bound_examples() {
        // P_e = 0, K = 4: 4 - log2(8)/2 = 2.5, below the exact prior entropy
        let bound = info_lower_bound(4, 0.0);
        assert!((bound - 2.5).abs() < 1e-12);
        let exact_prior = 6f64.log2(); // log2 C(4,2)
        assert!(bound <= exact_prior);

        // P_e = 1/2 is vacuous: -log2(2K)/2
        let vac = info_lower_bound(4, 0.5);
        assert!((vac + 0.5 * 8f64.log2()).abs() < 1e-12);

        // the per-arm coefficient at the hard prior's error level
        let coeff = 1.0 - binary_entropy(0.475).unwrap();
        assert!((coeff - 0.00180412).abs() < 1e-7);
    }

    #[test]
    fn info_bound_below_exact_binomial_entropy() {
        // K (1 - H_b(0)) - log2(2K)/2 <= log2 C(K, K/2) for even K <= 30
        let mut row = vec![1u128];
        for k in 1..=30usize {
            let mut next = vec![1u128; k + 1];
            for i in 1..k {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
            if k % 2 == 0 {
                let exact = (row[k / 2] as f64).log2();
                assert!(
                    info_lower_bound(k, 0.0) <= exact + 1e-12,
                    "K = {k}: {} vs {exact}",
                    info_lower_bound(k, 0.0)
                );
            }
        }
    }

    #[test]
    fn capacity_examples() {
        let t = transcript_with_counts(vec![10]);
        assert_eq!(t.batch_count(), 1);
        assert_eq!(capacity_bound(&t, 2400), 0);
        // B = 22, W = 2400 -> 50400 bits; minimal B for a target I is
        // ceil(I/W) + 1
        assert_eq!(21 * 2400, 50_400);
        let target_bits = 50_000u64;
        assert_eq!(target_bits.div_ceil(2400) + 1, 22);
    }

    #[test]
    fn lb_config_examples() {
        let defaults = LowerBoundConstants::default();
        assert_eq!(defaults.c_delta, 8.0);
        assert!((defaults.alpha - 0.001148020829886951).abs() < 1e-15);
        assert_eq!(defaults.beta, 0.1);

        // T = 10^6, K = 10, C = 1: Delta_0 ~ 0.805 > 1/4 and n = 0.
        let err = lb_config(1_000_000, 10, 1.0).unwrap_err();
        let AnalysisError::RegimeInvalid(diag) = err else {
            panic!("expected RegimeInvalid");
        };
        assert!((diag.gap - 0.80477).abs() < 1e-4);
        assert_eq!(diag.threshold, 0);
        assert!(!diag.gap_small_enough);
        assert!(!diag.threshold_at_least_one);
    }

    #[test]
    fn exploration_rate_degenerate() {
        let always = vec![transcript_with_counts(vec![10, 0]); 5];
        let rate = exploration_rate(&always, 0, 3).unwrap();
        assert_eq!(rate.rate, 1.0);
        let rate = exploration_rate(&always, 1, 3).unwrap();
        assert_eq!(rate.rate, 0.0);
        assert!(matches!(
            exploration_rate(&[], 0, 1),
            Err(AnalysisError::EmptyRunSet)
        ));
    }

    #[test]
    fn boundary_entropy_degenerate_cases() {
        let t = transcript_with_counts(vec![10]);
        assert_eq!(boundary_entropy_estimate(&[t.clone(), t.clone()]), 0.0);
        // two equiprobable distinct tuples -> 1 bit
        let mut other = t.clone();
        let mut w = crate::bits::BitWriter::new();
        crate::bits::BitSink::put(&mut w, 1, 1);
        other.boundary_states = vec![w.finish()];
        let h = boundary_entropy_estimate(&[t, other]);
        assert!((h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_concavity_on_grid() {
        // midpoint test: H((p+q)/2) >= (H(p) + H(q))/2
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        for &p in &grid {
            for &q in &grid {
                let lhs = binary_entropy((p + q) / 2.0).unwrap();
                let rhs = 0.5 * (binary_entropy(p).unwrap() + binary_entropy(q).unwrap());
                assert!(lhs + 1e-12 >= rhs, "p={p} q={q}");
            }
        }
    }

    proptest! {
        #[test]
        fn entropy_symmetry_and_monotonicity(p in 0.0f64..=0.5) {
            let h = binary_entropy(p).unwrap();
            let h_sym = binary_entropy(1.0 - p).unwrap();
            prop_assert!((h - h_sym).abs() < 1e-12);
            // monotone on [0, 1/2]
            let h2 = binary_entropy((p + 0.01).min(0.5)).unwrap();
            prop_assert!(h2 + 1e-12 >= h);
        }

        #[test]
        fn lb_threshold_gap_consistency(
            horizon in 1_000_000u64..1_000_000_000_000,
            arm_count in 2usize..1000,
            c in 1.0f64..10.0,
        ) {
            // n * Delta_0^2 <= ln(1.8)/8 whenever the regime is valid
            let config = evaluate_lb_config(
                horizon, arm_count, c, LowerBoundConstants::default());
            if config.diagnostics.valid() {
                let product = config.threshold as f64 * config.gap * config.gap;
                prop_assert!(product <= 1.8f64.ln() / 8.0 + 1e-9);
            }
        }
    }
}
