//! Brute-force verification of the event-restricted change of measure.
//!
//! On tiny instances (`K * T <= 24`) every reward table `X in {0,1}^(K x T)`
//! can be enumerated, each with its exact product-Bernoulli mass and the
//! transcript a deterministic policy produces on it. That makes the
//! following quantities exact rather than sampled:
//!
//! - event probabilities under a pair of environments that differ at one arm;
//! - the localized comparison
//!   `P0(E n {N_j <= n}) <= sqrt(P1(E n {N_j <= n})) (1 + chi2)^(n/2)`
//!   and its exponential relaxation, checked for whole event families;
//! - the prefix-truncation argument behind it: replacing arm `j`'s rewards
//!   beyond index `n` with a fill value changes neither the time of the
//!   `(n+1)`-st pull of `j` nor, on `{N_j <= n}`, the transcript at all.
//!
//! The default path uses `f64` with Neumaier summation (tolerance 1e-12);
//! [`exact`] re-runs the same checks in exact rational arithmetic for
//! `K * T <= 16` as the gold path; the comparison is done in squared form,
//! so no square root ever leaves the rationals.

use serde::Serialize;
use thiserror::Error;

use crate::instances::{BanditInstance, GoodArmSet};
use crate::rng::keyed_u64;

/// Enumeration ceiling: `2^(K T)` tables with `K T <= 24`.
pub const MAX_ENUM_CELLS: usize = 24;
/// Decision-table ceiling for tiny policies.
pub const MAX_TINY_HORIZON: usize = 10;
pub const MAX_TINY_ARMS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("enumeration too large: {cells} cells exceed {MAX_ENUM_CELLS}")]
    EnumerationTooLarge { cells: usize },
    #[error("infinite divergence: q = {q} has smaller support than p = {p}")]
    InfiniteDivergence { p: f64, q: f64 },
    #[error("invalid tiny policy: {0}")]
    InvalidPolicy(String),
    #[error("instances must differ only at arm {arm}: {detail}")]
    BadPerturbationPair { arm: usize, detail: String },
}

impl OracleError {
    pub fn code(&self) -> &'static str {
        match self {
            OracleError::EnumerationTooLarge { .. } => "EnumerationTooLarge",
            OracleError::InfiniteDivergence { .. } => "InfiniteDivergence",
            OracleError::InvalidPolicy(_) => "InvalidPolicy",
            OracleError::BadPerturbationPair { .. } => "BadPerturbationPair",
        }
    }
}

// ---------------------------------------------------------------------------
// Two-point divergences
// ---------------------------------------------------------------------------

/// `chi2(Ber(p) || Ber(q)) = (p - q)^2 / (q (1 - q))`.
///
/// At `p = 1/2`, `q = 1/2 + d` this is the closed form `4 d^2 / (1 - 4 d^2)`.
pub fn chi_square_bernoulli(p: f64, q: f64) -> Result<f64, OracleError> {
    if p == q {
        return Ok(0.0);
    }
    if q <= 0.0 || q >= 1.0 {
        return Err(OracleError::InfiniteDivergence { p, q });
    }
    Ok((p - q) * (p - q) / (q * (1.0 - q)))
}

/// `KL(Ber(p) || Ber(q))` in nats, with `0 ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64, OracleError> {
    if p == q {
        return Ok(0.0);
    }
    if (q <= 0.0 && p > 0.0) || (q >= 1.0 && p < 1.0) {
        return Err(OracleError::InfiniteDivergence { p, q });
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok(term(p, q) + term(1.0 - p, 1.0 - q))
}

// ---------------------------------------------------------------------------
// Tiny deterministic policies
// ---------------------------------------------------------------------------

/// A deterministic decision table over full reward histories.
///
/// Because the policy is deterministic, its actions are a function of the
/// observed rewards alone, so the table is indexed by the reward prefix
/// `r_1..r_t` (as bits, `r_1` least significant).
#[derive(Debug, Clone, PartialEq)]
pub struct TinyPolicy {
    arm_count: usize,
    horizon: usize,
    table: Vec<u8>,
}

impl TinyPolicy {
    fn table_index(round: usize, reward_bits: u32) -> usize {
        (1usize << round) - 1 + reward_bits as usize
    }

    fn validate(arm_count: usize, horizon: usize) -> Result<(), OracleError> {
        if !(1..=MAX_TINY_ARMS).contains(&arm_count) {
            return Err(OracleError::InvalidPolicy(format!(
                "arm count {arm_count} outside 1..={MAX_TINY_ARMS}"
            )));
        }
        if !(1..=MAX_TINY_HORIZON).contains(&horizon) {
            return Err(OracleError::InvalidPolicy(format!(
                "horizon {horizon} outside 1..={MAX_TINY_HORIZON}"
            )));
        }
        Ok(())
    }

    /// Materialize a policy from any non-anticipating decision rule. The
    /// closure sees the realized `(actions, rewards)` prefix; prefixes are
    /// visited in order of length, so the action history handed to the
    /// closure is always consistent with the table built so far.
    pub fn from_history_fn(
        arm_count: usize,
        horizon: usize,
        rule: impl Fn(&[u8], &[u8]) -> usize,
    ) -> Result<Self, OracleError> {
        Self::validate(arm_count, horizon)?;
        let mut table = vec![0u8; (1usize << horizon) - 1];
        let mut actions = vec![0u8; horizon];
        let mut rewards = vec![0u8; horizon];
        for len in 0..horizon {
            for bits in 0..(1u32 << len) {
                for s in 0..len {
                    rewards[s] = ((bits >> s) & 1) as u8;
                    actions[s] = table[Self::table_index(s, bits & ((1 << s) - 1))];
                }
                let a = rule(&actions[..len], &rewards[..len]);
                assert!(a < arm_count, "rule returned arm {a} of {arm_count}");
                table[Self::table_index(len, bits)] = a as u8;
            }
        }
        Ok(Self {
            arm_count,
            horizon,
            table,
        })
    }

    /// Uniformly random decision table.
    pub fn random(arm_count: usize, horizon: usize, seed: u64) -> Result<Self, OracleError> {
        Self::validate(arm_count, horizon)?;
        let table = (0..(1usize << horizon) - 1)
            .map(|i| (keyed_u64(seed, 0x7469_6e79, i as u64) % arm_count as u64) as u8)
            .collect();
        Ok(Self {
            arm_count,
            horizon,
            table,
        })
    }

    /// Always plays `arm`.
    pub fn constant(arm_count: usize, horizon: usize, arm: usize) -> Result<Self, OracleError> {
        Self::from_history_fn(arm_count, horizon, |_, _| arm)
    }

    /// Round-robin once, then empirical-mean greedy with lowest-index ties.
    pub fn greedy(arm_count: usize, horizon: usize) -> Result<Self, OracleError> {
        Self::from_history_fn(arm_count, horizon, move |actions, rewards| {
            let t = actions.len();
            if t < arm_count {
                return t;
            }
            let mut sums = vec![0.0; arm_count];
            let mut counts = vec![0.0; arm_count];
            for (a, r) in actions.iter().zip(rewards) {
                sums[*a as usize] += *r as f64;
                counts[*a as usize] += 1.0;
            }
            let mut best = 0;
            let mut best_mean = f64::NEG_INFINITY;
            for a in 0..arm_count {
                let mean = sums[a] / counts[a];
                if mean > best_mean {
                    best_mean = mean;
                    best = a;
                }
            }
            best
        })
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Next action after observing `past_rewards`.
    pub fn action(&self, past_rewards: &[u8]) -> usize {
        let bits = past_rewards
            .iter()
            .enumerate()
            .fold(0u32, |acc, (s, &r)| acc | ((r as u32) << s));
        self.table[Self::table_index(past_rewards.len(), bits)] as usize
    }
}

/// Transcript of one policy run on one explicit reward table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TinyTranscript {
    pub actions: Vec<u8>,
    pub rewards: Vec<u8>,
    pub pull_counts: Vec<u8>,
}

/// Bit position of cell `(arm, pull l)` (0-based pull) in a table mask.
fn cell(arm: usize, pull: usize, horizon: usize) -> u32 {
    (arm * horizon + pull) as u32
}

/// Run the policy on the table encoded in `mask`, reusing `out`'s buffers.
fn run_on_table(policy: &TinyPolicy, mask: u32, out: &mut TinyTranscript) {
    let t = policy.horizon;
    out.actions.clear();
    out.rewards.clear();
    out.pull_counts.clear();
    out.pull_counts.resize(policy.arm_count, 0);
    for _ in 0..t {
        let a = policy.action(&out.rewards);
        let l = out.pull_counts[a] as usize;
        let r = ((mask >> cell(a, l, t)) & 1) as u8;
        out.pull_counts[a] += 1;
        out.actions.push(a as u8);
        out.rewards.push(r);
    }
}

/// Neumaier-compensated accumulator; enumeration sums 2^24 masses and still
/// has to land within 1e-12.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    compensation: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Per-arm table masses: `weight[arm][ones] = mu^ones (1-mu)^(T-ones)`.
struct CellWeights {
    weights: Vec<Vec<f64>>,
    horizon: usize,
}

impl CellWeights {
    fn new(means: &[f64], horizon: usize) -> Self {
        let weights = means
            .iter()
            .map(|&mu| {
                (0..=horizon)
                    .map(|ones| mu.powi(ones as i32) * (1.0 - mu).powi((horizon - ones) as i32))
                    .collect()
            })
            .collect();
        Self { weights, horizon }
    }

    fn mass(&self, mask: u32) -> f64 {
        let t = self.horizon;
        let arm_mask = if t == 32 { u32::MAX } else { (1u32 << t) - 1 };
        self.weights
            .iter()
            .enumerate()
            .map(|(arm, w)| w[((mask >> (arm * t)) & arm_mask).count_ones() as usize])
            .product()
    }
}

fn check_enumerable(arm_count: usize, horizon: usize) -> Result<(), OracleError> {
    let cells = arm_count * horizon;
    if cells > MAX_ENUM_CELLS {
        return Err(OracleError::EnumerationTooLarge { cells });
    }
    Ok(())
}

/// Exact probability of `event` under `instance`, by full enumeration.
pub fn exact_event_prob(
    policy: &TinyPolicy,
    instance: &BanditInstance,
    event: impl Fn(&TinyTranscript) -> bool,
) -> Result<f64, OracleError> {
    check_enumerable(policy.arm_count, policy.horizon)?;
    assert_eq!(instance.arm_count(), policy.arm_count);
    let weights = CellWeights::new(instance.means(), policy.horizon);
    let cells = policy.arm_count * policy.horizon;
    let mut acc = Kahan::default();
    let mut tr = TinyTranscript::default();
    for mask in 0..(1u64 << cells) as u32 {
        run_on_table(policy, mask, &mut tr);
        if event(&tr) {
            acc.add(weights.mass(mask));
        }
    }
    Ok(acc.value())
}

// ---------------------------------------------------------------------------
// Event families and the localized change-of-measure verifier
// ---------------------------------------------------------------------------

/// A named transcript predicate.
pub struct NamedEvent {
    pub name: String,
    pub pred: Box<dyn Fn(&TinyTranscript) -> bool + Send + Sync>,
}

impl NamedEvent {
    pub fn new(
        name: impl Into<String>,
        pred: impl Fn(&TinyTranscript) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            pred: Box::new(pred),
        }
    }
}

/// The default family: every pull-budget event `{N_j <= m}` and every
/// first-action cylinder `{A_1 = a}`.
pub fn default_event_family(arm_count: usize, horizon: usize, arm: usize) -> Vec<NamedEvent> {
    let mut events = Vec::new();
    for m in 0..=horizon {
        events.push(NamedEvent::new(
            format!("N_{}<={}", arm + 1, m),
            move |tr: &TinyTranscript| (tr.pull_counts[arm] as usize) <= m,
        ));
    }
    for a in 0..arm_count {
        events.push(NamedEvent::new(format!("A_1={}", a + 1), move |tr| {
            tr.actions[0] as usize == a
        }));
    }
    events
}

/// One `(event, n)` line of the change-of-measure report.
#[derive(Debug, Clone, Serialize)]
pub struct ComRow {
    pub event: String,
    pub budget: usize,
    /// `P0(E n {N_j <= n})`.
    pub p0_joint: f64,
    /// `P1(E n {N_j <= n})`.
    pub p1_joint: f64,
    /// `P1(E)`.
    pub p1_event: f64,
    /// `sqrt(P1(E n {N_j <= n})) (1 + chi2)^{n/2}`.
    pub bound_factorized: f64,
    /// `sqrt(P1(E)) exp(n chi2 / 2)`.
    pub bound_exponential: f64,
    /// `p0_joint / bound_factorized` (0 when both vanish).
    pub slack_ratio: f64,
    pub ok: bool,
}

/// Full report for one `(policy, instance pair, n)` verification.
#[derive(Debug, Clone, Serialize)]
pub struct ComReport {
    pub arm: usize,
    pub budget: usize,
    pub chi_square: f64,
    /// Mass totals; both must be 1 within tolerance.
    pub mass_total_base: f64,
    pub mass_total_perturbed: f64,
    /// `E_0[N_j] * KL(P || Q)`: the transcript-level comparison cost, shown
    /// next to the localized `n * chi2` cost. Reported, never asserted.
    pub kl_transcript_cost: f64,
    pub chi2_localized_cost: f64,
    pub rows: Vec<ComRow>,
    pub violations: usize,
}

impl ComReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }

    pub fn max_slack_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.slack_ratio).fold(0.0, f64::max)
    }
}

/// Precomputed joint distribution of `(event, N_j)` under both environments,
/// reusable across budgets `n`.
pub struct ComVerifier {
    arm: usize,
    horizon: usize,
    chi_square: f64,
    kl: f64,
    event_names: Vec<String>,
    /// `joint[e][v] = P(E_e n {N_j = v})` under each environment.
    joint_base: Vec<Vec<f64>>,
    joint_perturbed: Vec<Vec<f64>>,
    mass_total_base: f64,
    mass_total_perturbed: f64,
    expected_pulls_base: f64,
}

impl ComVerifier {
    /// Enumerate once for a pair of instances differing only at `arm`.
    pub fn new(
        policy: &TinyPolicy,
        base: &BanditInstance,
        perturbed: &BanditInstance,
        arm: usize,
        extra_events: Vec<NamedEvent>,
    ) -> Result<Self, OracleError> {
        check_enumerable(policy.arm_count, policy.horizon)?;
        if base.arm_count() != policy.arm_count || perturbed.arm_count() != policy.arm_count {
            return Err(OracleError::BadPerturbationPair {
                arm,
                detail: "arm count mismatch".into(),
            });
        }
        for i in 0..base.arm_count() {
            if i != arm && base.mean(i) != perturbed.mean(i) {
                return Err(OracleError::BadPerturbationPair {
                    arm,
                    detail: format!("means differ at arm {i}"),
                });
            }
        }
        let chi_square = chi_square_bernoulli(base.mean(arm), perturbed.mean(arm))?;
        let kl = kl_bernoulli(base.mean(arm), perturbed.mean(arm))?;

        let mut events = default_event_family(policy.arm_count, policy.horizon, arm);
        events.extend(extra_events);

        let t = policy.horizon;
        let w0 = CellWeights::new(base.means(), t);
        let w1 = CellWeights::new(perturbed.means(), t);
        let mut joint_base = vec![vec![Kahan::default(); t + 1]; events.len()];
        let mut joint_perturbed = vec![vec![Kahan::default(); t + 1]; events.len()];
        let mut total0 = Kahan::default();
        let mut total1 = Kahan::default();
        let mut pulls0 = Kahan::default();
        let mut tr = TinyTranscript::default();
        let cells = policy.arm_count * t;
        for mask in 0..(1u64 << cells) as u32 {
            run_on_table(policy, mask, &mut tr);
            let m0 = w0.mass(mask);
            let m1 = w1.mass(mask);
            total0.add(m0);
            total1.add(m1);
            let nj = tr.pull_counts[arm] as usize;
            pulls0.add(m0 * nj as f64);
            for (e, ev) in events.iter().enumerate() {
                if (ev.pred)(&tr) {
                    joint_base[e][nj].add(m0);
                    joint_perturbed[e][nj].add(m1);
                }
            }
        }
        Ok(Self {
            arm,
            horizon: t,
            chi_square,
            kl,
            event_names: events.into_iter().map(|e| e.name).collect(),
            joint_base: joint_base
                .into_iter()
                .map(|row| row.into_iter().map(|k| k.value()).collect())
                .collect(),
            joint_perturbed: joint_perturbed
                .into_iter()
                .map(|row| row.into_iter().map(|k| k.value()).collect())
                .collect(),
            mass_total_base: total0.value(),
            mass_total_perturbed: total1.value(),
            expected_pulls_base: pulls0.value(),
        })
    }

    /// Check both inequality forms for every event at budget `n`.
    pub fn check(&self, budget: usize, tolerance: f64) -> ComReport {
        let n = budget.min(self.horizon);
        let factor = (1.0 + self.chi_square).powf(budget as f64 / 2.0);
        let exp_factor = (budget as f64 / 2.0 * self.chi_square).exp();
        let mut rows = Vec::with_capacity(self.event_names.len());
        let mut violations = 0;
        for (e, name) in self.event_names.iter().enumerate() {
            let p0_joint: f64 = self.joint_base[e][..=n].iter().sum();
            let p1_joint: f64 = self.joint_perturbed[e][..=n].iter().sum();
            let p1_event: f64 = self.joint_perturbed[e].iter().sum();
            let bound_factorized = p1_joint.max(0.0).sqrt() * factor;
            let bound_exponential = p1_event.max(0.0).sqrt() * exp_factor;
            let ok = p0_joint <= bound_factorized + tolerance
                && p0_joint <= bound_exponential + tolerance;
            if !ok {
                violations += 1;
            }
            let slack_ratio = if p0_joint <= tolerance {
                0.0
            } else {
                p0_joint / bound_factorized
            };
            rows.push(ComRow {
                event: name.clone(),
                budget,
                p0_joint,
                p1_joint,
                p1_event,
                bound_factorized,
                bound_exponential,
                slack_ratio,
                ok,
            });
        }
        ComReport {
            arm: self.arm,
            budget,
            chi_square: self.chi_square,
            mass_total_base: self.mass_total_base,
            mass_total_perturbed: self.mass_total_perturbed,
            kl_transcript_cost: self.expected_pulls_base * self.kl,
            chi2_localized_cost: budget as f64 * self.chi_square,
            rows,
            violations,
        }
    }
}

/// One-shot form: verify the full default family (plus extras) at budget `n`.
pub fn verify_localized_com(
    policy: &TinyPolicy,
    base: &BanditInstance,
    perturbed: &BanditInstance,
    arm: usize,
    budget: usize,
    extra_events: Vec<NamedEvent>,
) -> Result<ComReport, OracleError> {
    Ok(ComVerifier::new(policy, base, perturbed, arm, extra_events)?.check(budget, 1e-12))
}

// ---------------------------------------------------------------------------
// Prefix truncation
// ---------------------------------------------------------------------------

/// Outcome of the truncated-replay check.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationReport {
    pub arm: usize,
    pub budget: usize,
    pub tables_checked: u64,
    /// Tables where the `(n+1)`-st-pull times disagreed.
    pub stopping_time_mismatches: u64,
    /// Tables on `{N_j <= n}` whose transcripts diverged.
    pub transcript_mismatches: u64,
    /// Probability of `{N_j <= n}` under the supplied instance.
    pub budget_event_prob: f64,
}

impl TruncationReport {
    pub fn pass(&self) -> bool {
        self.stopping_time_mismatches == 0 && self.transcript_mismatches == 0
    }
}

/// For every reward table, replace arm `arm`'s rewards beyond pull `n` with
/// the fill value 0, rerun, and check: the first time of the `(n+1)`-st pull
/// of `arm` is unchanged, and on `{N_j <= n}` the whole transcript is.
pub fn verify_prefix_truncation(
    policy: &TinyPolicy,
    instance: &BanditInstance,
    arm: usize,
    budget: usize,
) -> Result<TruncationReport, OracleError> {
    check_enumerable(policy.arm_count, policy.horizon)?;
    let t = policy.horizon;
    let cells = policy.arm_count * t;
    // Mask keeping arm cells 0..budget and everything of other arms.
    let mut keep = !0u32;
    for l in budget.min(t)..t {
        keep &= !(1u32 << cell(arm, l, t));
    }
    let weights = CellWeights::new(instance.means(), t);
    let mut report = TruncationReport {
        arm,
        budget,
        tables_checked: 0,
        stopping_time_mismatches: 0,
        transcript_mismatches: 0,
        budget_event_prob: 0.0,
    };
    let mut budget_mass = Kahan::default();
    let mut original = TinyTranscript::default();
    let mut truncated = TinyTranscript::default();
    for mask in 0..(1u64 << cells) as u32 {
        run_on_table(policy, mask, &mut original);
        run_on_table(policy, mask & keep, &mut truncated);
        report.tables_checked += 1;

        let stop = |tr: &TinyTranscript| {
            let mut pulls = 0usize;
            for (round, &a) in tr.actions.iter().enumerate() {
                if a as usize == arm {
                    pulls += 1;
                    if pulls == budget + 1 {
                        return Some(round + 1);
                    }
                }
            }
            None
        };
        if stop(&original) != stop(&truncated) {
            report.stopping_time_mismatches += 1;
        }
        if (original.pull_counts[arm] as usize) <= budget {
            budget_mass.add(weights.mass(mask));
            if original != truncated {
                report.transcript_mismatches += 1;
            }
        }
    }
    report.budget_event_prob = budget_mass.value();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Per-good-arm exploration template
// ---------------------------------------------------------------------------

/// Exact instantiation of the exploration-transfer argument on a tiny hard
/// instance, with the gap and threshold supplied directly.
#[derive(Debug, Clone, Serialize)]
pub struct PerGoodArmReport {
    pub arm: usize,
    pub gap: f64,
    pub threshold: usize,
    /// `P(N_j < n)` under the base instance.
    pub under_sampling_base: f64,
    /// `P(N_j < n)` under the one-arm perturbation.
    pub under_sampling_perturbed: f64,
    pub chi_square: f64,
    /// `sqrt(P1(E_j)) (1 + chi2)^{n/2}`.
    pub transfer_bound: f64,
    pub transfer_holds: bool,
    /// `Delta_0 (T - n) P1(E_j)`: the regret the perturbed environment must
    /// pay if it under-samples its unique best arm.
    pub regret_witness: f64,
    /// Exact expected pseudo-regret under the perturbed instance.
    pub exact_regret_perturbed: f64,
}

/// Enumerate the base hard instance and its one-arm perturbation, compute
/// both under-sampling probabilities exactly, and check the transfer
/// inequality plus the regret-side witness.
pub fn verify_per_good_arm_template(
    policy: &TinyPolicy,
    good_set: &GoodArmSet,
    arm: usize,
    gap: f64,
    threshold: usize,
) -> Result<PerGoodArmReport, OracleError> {
    let base = crate::instances::make_hard_instance(good_set);
    let perturbed =
        crate::instances::perturb(&base, crate::instances::PerturbationSpec { arm, gap }).map_err(
            |e| OracleError::BadPerturbationPair {
                arm,
                detail: e.to_string(),
            },
        )?;
    check_enumerable(policy.arm_count, policy.horizon)?;

    let t = policy.horizon;
    let w0 = CellWeights::new(base.means(), t);
    let w1 = CellWeights::new(perturbed.means(), t);
    let best1 = perturbed.best_mean();
    let cells = policy.arm_count * t;
    let mut p0 = Kahan::default();
    let mut p1 = Kahan::default();
    let mut reg1 = Kahan::default();
    let mut tr = TinyTranscript::default();
    for mask in 0..(1u64 << cells) as u32 {
        run_on_table(policy, mask, &mut tr);
        let m1 = w1.mass(mask);
        if (tr.pull_counts[arm] as usize) < threshold {
            p0.add(w0.mass(mask));
            p1.add(m1);
        }
        let regret: f64 = tr
            .pull_counts
            .iter()
            .zip(perturbed.means())
            .map(|(&n, &mu)| n as f64 * (best1 - mu))
            .sum();
        reg1.add(m1 * regret);
    }

    let chi_square = chi_square_bernoulli(base.mean(arm), perturbed.mean(arm))?;
    let transfer_bound =
        p1.value().max(0.0).sqrt() * (1.0 + chi_square).powf(threshold as f64 / 2.0);
    let regret_witness = gap * (t - threshold.min(t)) as f64 * p1.value();
    Ok(PerGoodArmReport {
        arm,
        gap,
        threshold,
        under_sampling_base: p0.value(),
        under_sampling_perturbed: p1.value(),
        chi_square,
        transfer_bound,
        transfer_holds: p0.value() <= transfer_bound + 1e-12,
        regret_witness,
        exact_regret_perturbed: reg1.value(),
    })
}

// ---------------------------------------------------------------------------
// Exact rational gold path
// ---------------------------------------------------------------------------

pub mod exact {
    //! The same enumeration in exact rational arithmetic (`K * T <= 16`).
    //! The localized comparison is checked in squared form,
    //! `P0^2 <= P1 (1 + chi2)^n`, so everything stays in the rationals.

    use num::{BigRational, FromPrimitive, One, Zero};

    use super::{check_enumerable, OracleError, TinyPolicy, TinyTranscript};

    /// Enumeration ceiling for the rational path.
    pub const MAX_EXACT_CELLS: usize = 16;

    /// Shorthand for a small rational.
    pub fn ratio(num: i64, den: i64) -> BigRational {
        BigRational::new(num.into(), den.into())
    }

    fn rat_pow(base: &BigRational, exp: usize) -> BigRational {
        let mut out = BigRational::one();
        for _ in 0..exp {
            out *= base;
        }
        out
    }

    /// `chi2(Ber(p) || Ber(q))` as an exact rational; `q` must be interior.
    pub fn chi_square_rational(
        p: &BigRational,
        q: &BigRational,
    ) -> Result<BigRational, OracleError> {
        if p == q {
            return Ok(BigRational::zero());
        }
        if q <= &BigRational::zero() || q >= &BigRational::one() {
            return Err(OracleError::InfiniteDivergence {
                p: rational_to_f64(p),
                q: rational_to_f64(q),
            });
        }
        let diff = p - q;
        Ok(&diff * &diff / (q * (BigRational::one() - q)))
    }

    pub fn rational_to_f64(r: &BigRational) -> f64 {
        let numer = r.numer().to_string().parse::<f64>().unwrap_or(f64::NAN);
        let denom = r.denom().to_string().parse::<f64>().unwrap_or(f64::NAN);
        numer / denom
    }

    fn check_exact(arm_count: usize, horizon: usize) -> Result<(), OracleError> {
        check_enumerable(arm_count, horizon)?;
        let cells = arm_count * horizon;
        if cells > MAX_EXACT_CELLS {
            return Err(OracleError::EnumerationTooLarge { cells });
        }
        Ok(())
    }

    fn weights(means: &[BigRational], horizon: usize) -> Vec<Vec<BigRational>> {
        means
            .iter()
            .map(|mu| {
                let complement = BigRational::one() - mu;
                (0..=horizon)
                    .map(|ones| rat_pow(mu, ones) * rat_pow(&complement, horizon - ones))
                    .collect()
            })
            .collect()
    }

    fn mass(weights: &[Vec<BigRational>], mask: u32, horizon: usize) -> BigRational {
        let arm_mask = (1u32 << horizon) - 1;
        weights
            .iter()
            .enumerate()
            .map(|(arm, w)| &w[((mask >> (arm * horizon)) & arm_mask).count_ones() as usize])
            .product()
    }

    /// Exact event probability by enumeration over rational masses.
    pub fn event_prob(
        policy: &TinyPolicy,
        means: &[BigRational],
        event: impl Fn(&TinyTranscript) -> bool,
    ) -> Result<BigRational, OracleError> {
        check_exact(policy.arm_count(), policy.horizon())?;
        assert_eq!(means.len(), policy.arm_count());
        let t = policy.horizon();
        let w = weights(means, t);
        let cells = policy.arm_count() * t;
        let mut total = BigRational::zero();
        let mut tr = TinyTranscript::default();
        for mask in 0..(1u64 << cells) as u32 {
            super::run_on_table(policy, mask, &mut tr);
            if event(&tr) {
                total += mass(&w, mask, t);
            }
        }
        Ok(total)
    }

    /// Exact witness for the localized change of measure on one event.
    #[derive(Debug, Clone)]
    pub struct ExactComWitness {
        pub p0_joint: BigRational,
        pub p1_joint: BigRational,
        pub p1_event: BigRational,
        pub one_plus_chi_square: BigRational,
        /// `P0(E n B_n)^2 <= P1(E n B_n) (1 + chi2)^n`, exactly.
        pub holds: bool,
    }

    /// Check `P0(E n {N_j <= n})^2 <= P1(E n {N_j <= n}) (1 + chi2)^n` with
    /// no rounding anywhere.
    pub fn localized_com(
        policy: &TinyPolicy,
        base: &[BigRational],
        perturbed: &[BigRational],
        arm: usize,
        budget: usize,
        event: impl Fn(&TinyTranscript) -> bool,
    ) -> Result<ExactComWitness, OracleError> {
        check_exact(policy.arm_count(), policy.horizon())?;
        let t = policy.horizon();
        let w0 = weights(base, t);
        let w1 = weights(perturbed, t);
        let cells = policy.arm_count() * t;
        let mut p0_joint = BigRational::zero();
        let mut p1_joint = BigRational::zero();
        let mut p1_event = BigRational::zero();
        let mut tr = TinyTranscript::default();
        for mask in 0..(1u64 << cells) as u32 {
            super::run_on_table(policy, mask, &mut tr);
            if !event(&tr) {
                continue;
            }
            let m1 = mass(&w1, mask, t);
            p1_event += &m1;
            if (tr.pull_counts[arm] as usize) <= budget {
                p0_joint += mass(&w0, mask, t);
                p1_joint += m1;
            }
        }
        let chi = chi_square_rational(&base[arm], &perturbed[arm])?;
        let one_plus = BigRational::one() + chi;
        let holds = &p0_joint * &p0_joint <= &p1_joint * rat_pow(&one_plus, budget);
        Ok(ExactComWitness {
            p0_joint,
            p1_joint,
            p1_event,
            one_plus_chi_square: one_plus,
            holds,
        })
    }

    /// `BigRational` from an exactly-representable f64 (dyadic rationals).
    pub fn from_f64(x: f64) -> BigRational {
        BigRational::from_f64(x).expect("finite float")
    }

    /// Exact rational image of a float mean vector.
    pub fn means_from_f64(means: &[f64]) -> Vec<BigRational> {
        means.iter().map(|&m| from_f64(m)).collect()
    }
}
