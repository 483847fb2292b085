//! Batched execution with persistent-memory accounting.
//!
//! A policy interacts with the environment only through committed batch
//! plans: at each boundary it maps `(boundary time, persistent state, seed)`
//! to a [`BatchPlan`], plain data listing every action of the batch, and
//! the executor plays that plan verbatim. Rewards are observed and the state
//! updated within the batch, but the actions of the batch were fixed at its
//! start, so within-batch feedback cannot influence within-batch behavior.
//!
//! The persistent state is the only thing carried across rounds besides the
//! seed and the public clock. Its canonical encoding is measured after every
//! round; a run is rejected with [`RuntimeError::BudgetExceeded`] the moment
//! the encoding exceeds the bit budget. Batch-boundary encodings are kept in
//! the transcript: they are the entire cross-batch information channel, and
//! [`boundary_replay`] checks that the realized pull counts (and, under an
//! adaptive grid, the boundary positions themselves) are recomputable from
//! the seed and those encodings alone.
//!
//! [`commitment_check`] is the belt-and-suspenders test: it replays each
//! batch with counterfactually flipped rewards and requires the batch's
//! realized actions to be bitwise unchanged.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitCounter, BitReader, BitSink, BitString, BitWriter};
use crate::instances::{BanditInstance, InstanceError, RewardStream};
use crate::rng::{self, keyed_u64};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("persistent state budget exceeded at round {round}: {bits} bits > budget {budget}")]
    BudgetExceeded { round: u64, bits: u64, budget: u64 },
    #[error("commitment violation at round {round}: emitted arm {emitted}, committed plan says {planned}")]
    CommitmentViolation {
        round: u64,
        planned: u32,
        emitted: u32,
    },
    #[error("grid error in batch {batch}: {detail}")]
    GridError {
        batch: usize,
        detail: GridErrorDetail,
    },
    #[error("invalid plan in batch {batch}: {reason}")]
    PlanInvalid { batch: usize, reason: String },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

impl RuntimeError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            RuntimeError::BudgetExceeded { .. } => "BudgetExceeded",
            RuntimeError::CommitmentViolation { .. } => "CommitmentViolation",
            RuntimeError::GridError { .. } => "GridError",
            RuntimeError::PlanInvalid { .. } => "PlanInvalid",
            RuntimeError::Instance(_) => "InstanceError",
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum GridErrorDetail {
    /// `t_b <= t_{b-1}`.
    NonMonotone { start: u64, end: u64 },
    /// `t_b > T`.
    BeyondHorizon { end: u64, horizon: u64 },
    /// Static mode: the realized boundary differs from the boundary
    /// recomputed from the seed and initial state alone.
    NotReproducible { realized: u64, replayed: u64 },
}

impl fmt::Display for GridErrorDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridErrorDetail::NonMonotone { start, end } => {
                write!(f, "boundary {end} not past batch start {start}")
            }
            GridErrorDetail::BeyondHorizon { end, horizon } => {
                write!(f, "boundary {end} beyond horizon {horizon}")
            }
            GridErrorDetail::NotReproducible { realized, replayed } => {
                write!(
                    f,
                    "static grid not reproducible: realized {realized}, replayed {replayed}"
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Plans and the policy contract
// ---------------------------------------------------------------------------

/// Grid regime: static grids are fixed before interaction; adaptive grids
/// choose each boundary from the state available at the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Static,
    Adaptive,
}

/// One committed batch: its exclusive-inclusive boundary and the full action
/// schedule as `(arm, repeat)` segments. Plans are data, not callbacks, so a
/// plan cannot react to rewards observed while it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// The batch covers rounds `start+1 ..= end_round`.
    pub end_round: u64,
    /// Ordered `(arm, repeat_count)` segments; lengths must sum to the batch
    /// length.
    pub segments: Vec<(u32, u64)>,
}

impl BatchPlan {
    pub fn total_len(&self) -> u64 {
        self.segments.iter().map(|&(_, n)| n).sum()
    }

    /// Pull-count vector contributed by this plan.
    pub fn pull_counts(&self, arm_count: usize) -> Vec<u64> {
        let mut counts = vec![0u64; arm_count];
        for &(arm, n) in &self.segments {
            counts[arm as usize] += n;
        }
        counts
    }
}

/// The behavioral contract of a batched, space-bounded policy.
///
/// `plan_batch` must be a pure function of its three arguments, and
/// `observe` may read and write only the persistent state (the round index
/// is the public clock and is not charged to the budget). The state encoding
/// must be canonical: field order and widths depend only on public
/// parameters, and `read_state` inverts `write_state`.
pub trait Policy {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Commit the next batch given the boundary time, the boundary state,
    /// and the seed.
    fn plan_batch(&self, start: u64, state: &Self::State, seed: u64) -> BatchPlan;

    /// Per-round persistent update with the observed `(arm, reward)`.
    fn observe(&self, state: &mut Self::State, round: u64, arm: u32, reward: u8);

    /// Canonical bit encoding of the state.
    fn write_state(&self, state: &Self::State, out: &mut dyn BitSink);

    /// Inverse of `write_state`; `None` if the bits are not a valid encoding.
    fn read_state(&self, input: &mut BitReader<'_>) -> Option<Self::State>;

    /// Per-round action override. Honest policies leave this as `None` and
    /// the committed plan is executed; anything else is, by definition, an
    /// attempt to act on information the plan did not commit to.
    fn override_action(&self, _state: &Self::State, _round: u64) -> Option<u32> {
        None
    }
}

/// Length in bits of the canonical encoding of `state`.
pub fn measure_state_bits<P: Policy + ?Sized>(policy: &P, state: &P::State) -> u64 {
    let mut counter = BitCounter::default();
    policy.write_state(state, &mut counter);
    counter.bits
}

/// Materialize the canonical encoding of `state`.
pub fn encode_state<P: Policy + ?Sized>(policy: &P, state: &P::State) -> BitString {
    let mut writer = BitWriter::new();
    policy.write_state(state, &mut writer);
    writer.finish()
}

/// Decode a canonical encoding; requires every bit to be consumed.
pub fn decode_state<P: Policy + ?Sized>(policy: &P, bits: &BitString) -> Option<P::State> {
    let mut reader = BitReader::new(bits);
    let state = policy.read_state(&mut reader)?;
    reader.exhausted().then_some(state)
}

// ---------------------------------------------------------------------------
// Reward sources
// ---------------------------------------------------------------------------

/// Anything that can stand in for the pre-committed reward table.
pub trait RewardSource {
    fn arm_count(&self) -> usize;
    /// Reward of the `pull_index`-th pull of `arm`; `arm` is validated by the
    /// executor before this is called.
    fn draw(&self, arm: usize, pull_index: u64) -> u8;
}

impl RewardSource for RewardStream {
    fn arm_count(&self) -> usize {
        self.instance().arm_count()
    }

    fn draw(&self, arm: usize, pull_index: u64) -> u8 {
        RewardStream::draw(self, arm, pull_index).expect("executor validates arm range")
    }
}

/// Overlay that flips selected `(arm, pull_index)` cells of an inner source.
/// Used by [`commitment_check`] to build counterfactual reward tables.
struct FlipOverlay<'a, R: RewardSource> {
    inner: &'a R,
    flips: HashSet<(u32, u64)>,
}

impl<R: RewardSource> RewardSource for FlipOverlay<'_, R> {
    fn arm_count(&self) -> usize {
        self.inner.arm_count()
    }

    fn draw(&self, arm: usize, pull_index: u64) -> u8 {
        let r = self.inner.draw(arm, pull_index);
        if self.flips.contains(&(arm as u32, pull_index)) {
            1 - r
        } else {
            r
        }
    }
}

// ---------------------------------------------------------------------------
// Transcripts
// ---------------------------------------------------------------------------

/// Full record of one run: actions, rewards, final pull counts, the realized
/// internal grid, the encoded boundary states, and the peak state size.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub horizon: u64,
    pub arm_count: usize,
    pub master_seed: u64,
    pub grid_mode: GridMode,
    /// `A_1..A_T` (0-based arms).
    pub actions: Vec<u32>,
    /// `R_1..R_T`.
    pub rewards: Vec<u8>,
    /// Final `N_i(T)` per arm.
    pub pull_counts: Vec<u64>,
    /// Internal boundaries `t_1 < .. < t_{B-1}` (the final batch ends at T).
    pub grid: Vec<u64>,
    /// Encoded `M_{t_1}, .., M_{t_{B-1}}`.
    pub boundary_states: Vec<BitString>,
    /// Encoded state after the final round (not part of the boundary tuple).
    pub final_state: BitString,
    /// Maximum encoding size observed at any round boundary.
    pub peak_state_bits: u64,
}

impl Transcript {
    pub fn batch_count(&self) -> usize {
        self.grid.len() + 1
    }

    pub fn rounds_executed(&self) -> u64 {
        self.actions.len() as u64
    }

    /// `(t_{b-1}, t_b)` for 0-based batch index `b`.
    pub fn batch_bounds(&self, batch: usize) -> (u64, u64) {
        let start = if batch == 0 { 0 } else { self.grid[batch - 1] };
        let end = if batch < self.grid.len() {
            self.grid[batch]
        } else {
            self.rounds_executed()
        };
        (start, end)
    }

    /// Total bits across the boundary-state tuple; structurally at most
    /// `(B-1) * W` whenever a budget `W` was enforced.
    pub fn boundary_bits_total(&self) -> u64 {
        self.boundary_states.iter().map(|s| s.len()).sum()
    }

    /// Per-batch summary rows (1-based batch index).
    pub fn batch_rows(&self) -> Vec<BatchRow> {
        let b = self.batch_count();
        let mut rows = Vec::with_capacity(b);
        for batch in 0..b {
            let (start, end) = self.batch_bounds(batch);
            let mut counts = vec![0u64; self.arm_count];
            for t in start..end {
                counts[self.actions[t as usize] as usize] += 1;
            }
            let state_bits = if batch + 1 < b {
                self.boundary_states[batch].len()
            } else {
                self.final_state.len()
            };
            rows.push(BatchRow {
                batch: batch + 1,
                start,
                end,
                state_bits,
                pull_counts: counts,
            });
        }
        rows
    }

    /// Per-batch CSV: `batch,start,end,state_bits,n_1,..,n_K`.
    pub fn write_batch_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "batch,start,end,state_bits")?;
        for i in 1..=self.arm_count {
            write!(out, ",n_{i}")?;
        }
        writeln!(out)?;
        for row in self.batch_rows() {
            write!(
                out,
                "{},{},{},{}",
                row.batch, row.start, row.end, row.state_bits
            )?;
            for n in &row.pull_counts {
                write!(out, ",{n}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Compact binary record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"BMT1");
        put_u64(&mut out, self.horizon);
        put_u64(&mut out, self.arm_count as u64);
        put_u64(&mut out, self.master_seed);
        out.push(match self.grid_mode {
            GridMode::Static => 0,
            GridMode::Adaptive => 1,
        });
        put_u64(&mut out, self.peak_state_bits);
        put_u64(&mut out, self.grid.len() as u64);
        for &t in &self.grid {
            put_u64(&mut out, t);
        }
        for &n in &self.pull_counts {
            put_u64(&mut out, n);
        }
        // Actions packed at ceil(log2 K) bits each, rewards at 1 bit.
        put_u64(&mut out, self.rounds_executed());
        let arm_width = crate::bits::width_for_max(self.arm_count.saturating_sub(1) as u64);
        let mut packer = BitWriter::new();
        for (&a, &r) in self.actions.iter().zip(&self.rewards) {
            packer.put(a as u64, arm_width);
            packer.put(r as u64, 1);
        }
        put_bits(&mut out, &packer.finish());
        put_u64(&mut out, self.boundary_states.len() as u64);
        for s in &self.boundary_states {
            put_bits(&mut out, s);
        }
        put_bits(&mut out, &self.final_state);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, TranscriptCodecError> {
        let mut cur = Cursor { data, pos: 0 };
        if cur.bytes(4)? != b"BMT1" {
            return Err(TranscriptCodecError("bad magic".into()));
        }
        let horizon = cur.u64()?;
        let arm_count = cur.u64()? as usize;
        let master_seed = cur.u64()?;
        let grid_mode = match cur.bytes(1)?[0] {
            0 => GridMode::Static,
            1 => GridMode::Adaptive,
            m => return Err(TranscriptCodecError(format!("bad grid mode {m}"))),
        };
        let peak_state_bits = cur.u64()?;
        let grid_len = cur.u64()? as usize;
        let grid = (0..grid_len).map(|_| cur.u64()).collect::<Result<_, _>>()?;
        let pull_counts = (0..arm_count)
            .map(|_| cur.u64())
            .collect::<Result<_, _>>()?;
        let rounds = cur.u64()? as usize;
        let packed = cur.bits()?;
        let arm_width = crate::bits::width_for_max(arm_count.saturating_sub(1) as u64);
        let mut reader = BitReader::new(&packed);
        let mut actions = Vec::with_capacity(rounds);
        let mut rewards = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            actions.push(reader.take(arm_width).ok_or_else(truncated)? as u32);
            rewards.push(reader.take(1).ok_or_else(truncated)? as u8);
        }
        let n_states = cur.u64()? as usize;
        let boundary_states = (0..n_states)
            .map(|_| cur.bits())
            .collect::<Result<_, _>>()?;
        let final_state = cur.bits()?;
        Ok(Self {
            horizon,
            arm_count,
            master_seed,
            grid_mode,
            actions,
            rewards,
            pull_counts,
            grid,
            boundary_states,
            final_state,
            peak_state_bits,
        })
    }
}

/// One row of the per-batch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub batch: usize,
    pub start: u64,
    pub end: u64,
    pub state_bits: u64,
    pub pull_counts: Vec<u64>,
}

#[derive(Debug, Error, PartialEq)]
#[error("transcript decode failed: {0}")]
pub struct TranscriptCodecError(String);

fn truncated() -> TranscriptCodecError {
    TranscriptCodecError("truncated packed section".into())
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bits(out: &mut Vec<u8>, bits: &BitString) {
    put_u64(out, bits.len());
    out.extend_from_slice(bits.as_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], TranscriptCodecError> {
        if self.pos + n > self.data.len() {
            return Err(TranscriptCodecError("truncated record".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TranscriptCodecError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn bits(&mut self) -> Result<BitString, TranscriptCodecError> {
        let len = self.u64()?;
        let bytes = self.bytes(len.div_ceil(8) as usize)?.to_vec();
        Ok(BitString::from_parts(bytes, len))
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Parameters of one run.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub horizon: u64,
    pub master_seed: u64,
    pub grid_mode: GridMode,
    /// Bit budget `W`; `None` means unbounded.
    pub budget_bits: Option<u64>,
    /// In static mode, re-derive the grid from the seed and initial state and
    /// require it to match the realized grid.
    pub verify_static_grid: bool,
    /// Reject per-round action overrides that leave the committed plan.
    pub enforce_commitment: bool,
}

impl RunConfig {
    pub fn new(horizon: u64, master_seed: u64) -> Self {
        Self {
            horizon,
            master_seed,
            grid_mode: GridMode::Static,
            budget_bits: None,
            verify_static_grid: true,
            enforce_commitment: true,
        }
    }

    pub fn adaptive(mut self) -> Self {
        self.grid_mode = GridMode::Adaptive;
        self
    }

    pub fn with_budget(mut self, bits: u64) -> Self {
        self.budget_bits = Some(bits);
        self
    }

    pub fn without_static_check(mut self) -> Self {
        self.verify_static_grid = false;
        self
    }

    fn policy_seed(&self) -> u64 {
        keyed_u64(self.master_seed, rng::tag::POLICY, 0)
    }
}

/// Run `policy` against `instance` for `config.horizon` rounds.
pub fn run<P: Policy>(
    policy: &P,
    instance: &BanditInstance,
    config: &RunConfig,
) -> Result<Transcript, RuntimeError> {
    let stream = RewardStream::new(config.master_seed, instance.clone());
    run_with_source(policy, &stream, config)
}

/// Run against an arbitrary reward source (coupled or counterfactual tables).
pub fn run_with_source<P: Policy, R: RewardSource>(
    policy: &P,
    source: &R,
    config: &RunConfig,
) -> Result<Transcript, RuntimeError> {
    let transcript = exec(policy, source, config, None)?;
    if config.grid_mode == GridMode::Static && config.verify_static_grid {
        verify_static_grid(policy, &transcript, config)?;
    }
    Ok(transcript)
}

fn exec<P: Policy, R: RewardSource>(
    policy: &P,
    source: &R,
    config: &RunConfig,
    stop_after: Option<u64>,
) -> Result<Transcript, RuntimeError> {
    let horizon = config.horizon;
    let arm_count = source.arm_count();
    if horizon == 0 {
        return Err(RuntimeError::PlanInvalid {
            batch: 0,
            reason: "horizon must be at least 1".into(),
        });
    }
    let seed = config.policy_seed();
    let mut state = policy.initial_state();
    let mut peak = measure_state_bits(policy, &state);
    if let Some(budget) = config.budget_bits {
        if peak > budget {
            return Err(RuntimeError::BudgetExceeded {
                round: 0,
                bits: peak,
                budget,
            });
        }
    }

    let cap = stop_after.unwrap_or(horizon).min(horizon) as usize;
    let mut actions: Vec<u32> = Vec::with_capacity(cap);
    let mut rewards: Vec<u8> = Vec::with_capacity(cap);
    let mut pulls = vec![0u64; arm_count];
    let mut grid: Vec<u64> = Vec::new();
    let mut boundary_states: Vec<BitString> = Vec::new();
    let mut final_state = encode_state(policy, &state);
    let mut t: u64 = 0;
    let mut batch_index = 0usize;

    while t < horizon {
        batch_index += 1;
        let plan = policy.plan_batch(t, &state, seed);
        validate_plan(&plan, t, horizon, arm_count, batch_index)?;

        for &(planned_arm, count) in &plan.segments {
            for _ in 0..count {
                t += 1;
                let arm = match policy.override_action(&state, t) {
                    None => planned_arm,
                    Some(a) => {
                        if config.enforce_commitment && a != planned_arm {
                            return Err(RuntimeError::CommitmentViolation {
                                round: t,
                                planned: planned_arm,
                                emitted: a,
                            });
                        }
                        if a as usize >= arm_count {
                            return Err(RuntimeError::PlanInvalid {
                                batch: batch_index,
                                reason: format!("emitted arm {a} out of range"),
                            });
                        }
                        a
                    }
                };
                pulls[arm as usize] += 1;
                let reward = source.draw(arm as usize, pulls[arm as usize]);
                actions.push(arm);
                rewards.push(reward);
                policy.observe(&mut state, t, arm, reward);
                let bits = measure_state_bits(policy, &state);
                if bits > peak {
                    peak = bits;
                }
                if let Some(budget) = config.budget_bits {
                    if bits > budget {
                        return Err(RuntimeError::BudgetExceeded {
                            round: t,
                            bits,
                            budget,
                        });
                    }
                }
            }
        }

        let encoded = encode_state(policy, &state);
        debug_assert_eq!(encoded.len(), measure_state_bits(policy, &state));
        if t < horizon {
            grid.push(t);
            boundary_states.push(encoded);
        } else {
            final_state = encoded;
        }
        if let Some(stop) = stop_after {
            if t >= stop {
                if t < horizon {
                    // Partial run: keep the last encoding as the final state.
                    final_state = boundary_states.last().unwrap().clone();
                }
                break;
            }
        }
    }

    Ok(Transcript {
        horizon,
        arm_count,
        master_seed: config.master_seed,
        grid_mode: config.grid_mode,
        actions,
        rewards,
        pull_counts: pulls,
        grid,
        boundary_states,
        final_state,
        peak_state_bits: peak,
    })
}

fn validate_plan(
    plan: &BatchPlan,
    start: u64,
    horizon: u64,
    arm_count: usize,
    batch: usize,
) -> Result<(), RuntimeError> {
    if plan.end_round <= start {
        return Err(RuntimeError::GridError {
            batch,
            detail: GridErrorDetail::NonMonotone {
                start,
                end: plan.end_round,
            },
        });
    }
    if plan.end_round > horizon {
        return Err(RuntimeError::GridError {
            batch,
            detail: GridErrorDetail::BeyondHorizon {
                end: plan.end_round,
                horizon,
            },
        });
    }
    if plan.total_len() != plan.end_round - start {
        return Err(RuntimeError::PlanInvalid {
            batch,
            reason: format!(
                "segments cover {} rounds, boundary needs {}",
                plan.total_len(),
                plan.end_round - start
            ),
        });
    }
    if let Some(&(arm, _)) = plan
        .segments
        .iter()
        .find(|&&(a, _)| a as usize >= arm_count)
    {
        return Err(RuntimeError::PlanInvalid {
            batch,
            reason: format!("planned arm {arm} out of range"),
        });
    }
    Ok(())
}

/// Replay the boundary recursion with a constant reward fill and require the
/// same grid. A static grid may depend on the seed and initial state but not
/// on observed rewards, so the fill must not move any boundary.
fn verify_static_grid<P: Policy>(
    policy: &P,
    transcript: &Transcript,
    config: &RunConfig,
) -> Result<(), RuntimeError> {
    let seed = config.policy_seed();
    let mut state = policy.initial_state();
    let mut t = 0u64;
    let mut batch = 0usize;
    while t < config.horizon {
        batch += 1;
        let plan = policy.plan_batch(t, &state, seed);
        validate_plan(&plan, t, config.horizon, transcript.arm_count, batch)?;
        let realized_end = if batch <= transcript.grid.len() {
            transcript.grid[batch - 1]
        } else {
            config.horizon
        };
        if plan.end_round != realized_end {
            return Err(RuntimeError::GridError {
                batch,
                detail: GridErrorDetail::NotReproducible {
                    realized: realized_end,
                    replayed: plan.end_round,
                },
            });
        }
        for &(arm, count) in &plan.segments {
            for _ in 0..count {
                t += 1;
                policy.observe(&mut state, t, arm, 0);
            }
        }
    }
    if batch != transcript.batch_count() {
        return Err(RuntimeError::GridError {
            batch,
            detail: GridErrorDetail::NotReproducible {
                realized: transcript.batch_count() as u64,
                replayed: batch as u64,
            },
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commitment check
// ---------------------------------------------------------------------------

/// Outcome of the counterfactual commitment test.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitmentReport {
    pub pass: bool,
    /// First `(batch, round)` where a batch's actions changed under
    /// within-batch reward flips (1-based batch index).
    pub divergence: Option<(usize, u64)>,
    pub batches_checked: usize,
}

/// Re-run every batch with all rewards observed inside that batch flipped,
/// and require the batch's realized action sequence to be unchanged. Later
/// batches may differ; within-batch actions may not.
pub fn commitment_check<P: Policy>(
    policy: &P,
    instance: &BanditInstance,
    config: &RunConfig,
) -> Result<CommitmentReport, RuntimeError> {
    let stream = RewardStream::new(config.master_seed, instance.clone());
    // The negative control intentionally leaves its plan, so the reference
    // run and the counterfactual re-runs execute without enforcement.
    let mut unenforced = *config;
    unenforced.enforce_commitment = false;
    unenforced.verify_static_grid = false;
    let reference = exec(policy, &stream, &unenforced, None)?;

    // Pull index used at each round of the reference run.
    let mut counts = vec![0u64; reference.arm_count];
    let pull_index_at: Vec<u64> = reference
        .actions
        .iter()
        .map(|&a| {
            counts[a as usize] += 1;
            counts[a as usize]
        })
        .collect();

    let b = reference.batch_count();
    for batch in 0..b {
        let (start, end) = reference.batch_bounds(batch);
        let flips: HashSet<(u32, u64)> = (start..end)
            .map(|t| {
                let idx = t as usize;
                (reference.actions[idx], pull_index_at[idx])
            })
            .collect();
        let overlay = FlipOverlay {
            inner: &stream,
            flips,
        };
        let rerun = exec(policy, &overlay, &unenforced, Some(end))?;
        for t in start..end {
            let idx = t as usize;
            if rerun.actions.get(idx) != Some(&reference.actions[idx]) {
                return Ok(CommitmentReport {
                    pass: false,
                    divergence: Some((batch + 1, t + 1)),
                    batches_checked: batch + 1,
                });
            }
        }
    }
    Ok(CommitmentReport {
        pass: true,
        divergence: None,
        batches_checked: b,
    })
}

// ---------------------------------------------------------------------------
// Boundary replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayMismatch {
    /// Could not decode the recorded boundary state.
    StateDecode { batch: usize },
    /// Recomputed boundary disagrees with the realized grid.
    Boundary {
        batch: usize,
        realized: u64,
        replayed: u64,
    },
    /// Summed batch pull counts disagree with the transcript.
    PullCounts {
        arm: usize,
        realized: u64,
        replayed: u64,
    },
}

/// Outcome of recomputing the profile from `(seed, boundary states)` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub pass: bool,
    pub mismatch: Option<ReplayMismatch>,
    pub replayed_pull_counts: Vec<u64>,
    pub replayed_grid: Vec<u64>,
}

/// Recompute every batch's pull-count vector from the boundary time, the
/// *recorded encoded state*, and the seed, then compare against the realized
/// totals. The grid itself is recomputed recursively, which in adaptive mode
/// checks that the boundaries carry no information beyond `(U, M)`.
pub fn boundary_replay<P: Policy>(policy: &P, transcript: &Transcript) -> ReplayReport {
    let seed = keyed_u64(transcript.master_seed, rng::tag::POLICY, 0);
    let b = transcript.batch_count();
    let mut counts = vec![0u64; transcript.arm_count];
    let mut replayed_grid = Vec::new();
    let mut start = 0u64;
    let fail = |mismatch, counts: &Vec<u64>, grid: &Vec<u64>| ReplayReport {
        pass: false,
        mismatch: Some(mismatch),
        replayed_pull_counts: counts.clone(),
        replayed_grid: grid.clone(),
    };

    for batch in 0..b {
        // M_{t_0} is the fixed initial state; later boundaries come from the
        // recorded encodings only.
        let state = if batch == 0 {
            let initial = encode_state(policy, &policy.initial_state());
            decode_state(policy, &initial)
        } else {
            decode_state(policy, &transcript.boundary_states[batch - 1])
        };
        let Some(state) = state else {
            return fail(
                ReplayMismatch::StateDecode { batch: batch + 1 },
                &counts,
                &replayed_grid,
            );
        };
        let plan = policy.plan_batch(start, &state, seed);
        let (_, realized_end) = transcript.batch_bounds(batch);
        if plan.end_round != realized_end {
            return fail(
                ReplayMismatch::Boundary {
                    batch: batch + 1,
                    realized: realized_end,
                    replayed: plan.end_round,
                },
                &counts,
                &replayed_grid,
            );
        }
        for (arm, n) in plan
            .pull_counts(transcript.arm_count)
            .into_iter()
            .enumerate()
        {
            counts[arm] += n;
        }
        if plan.end_round < transcript.horizon {
            replayed_grid.push(plan.end_round);
        }
        start = plan.end_round;
    }

    for arm in 0..transcript.arm_count {
        if counts[arm] != transcript.pull_counts[arm] {
            return fail(
                ReplayMismatch::PullCounts {
                    arm,
                    realized: transcript.pull_counts[arm],
                    replayed: counts[arm],
                },
                &counts,
                &replayed_grid,
            );
        }
    }
    ReplayReport {
        pass: true,
        mismatch: None,
        replayed_pull_counts: counts,
        replayed_grid,
    }
}

// ---------------------------------------------------------------------------
// Negative control
// ---------------------------------------------------------------------------

/// A deliberately dishonest policy: its committed plans always say arm 0,
/// but each round it actually plays greedily on the last observed reward.
/// On a stream where arm 0 always pays it happens to match its plan, so the
/// cheat is invisible until [`commitment_check`] flips rewards.
pub struct CheatingPolicy {
    pub horizon: u64,
    pub batch_len: u64,
}

#[derive(Debug, Clone)]
pub struct CheatState {
    last_reward: u8,
}

impl Policy for CheatingPolicy {
    type State = CheatState;

    fn initial_state(&self) -> CheatState {
        CheatState { last_reward: 1 }
    }

    fn plan_batch(&self, start: u64, _state: &CheatState, _seed: u64) -> BatchPlan {
        let end = (start + self.batch_len).min(self.horizon);
        BatchPlan {
            end_round: end,
            segments: vec![(0, end - start)],
        }
    }

    fn observe(&self, state: &mut CheatState, _round: u64, _arm: u32, reward: u8) {
        state.last_reward = reward;
    }

    fn write_state(&self, state: &CheatState, out: &mut dyn BitSink) {
        out.put(state.last_reward as u64, 1);
    }

    fn read_state(&self, input: &mut BitReader<'_>) -> Option<CheatState> {
        Some(CheatState {
            last_reward: input.take(1)? as u8,
        })
    }

    fn override_action(&self, state: &CheatState, _round: u64) -> Option<u32> {
        Some(if state.last_reward == 1 { 0 } else { 1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::width_for_max;

    /// Fixed single-batch round-robin over all arms.
    struct RoundRobin {
        arms: u32,
        horizon: u64,
    }

    impl Policy for RoundRobin {
        type State = ();

        fn initial_state(&self) {}

        fn plan_batch(&self, start: u64, _state: &(), _seed: u64) -> BatchPlan {
            let segments = (start..self.horizon)
                .map(|t| ((t % self.arms as u64) as u32, 1))
                .collect();
            BatchPlan {
                end_round: self.horizon,
                segments,
            }
        }

        fn observe(&self, _state: &mut (), _round: u64, _arm: u32, _reward: u8) {}

        fn write_state(&self, _state: &(), _out: &mut dyn BitSink) {}

        fn read_state(&self, _input: &mut BitReader<'_>) -> Option<()> {
            Some(())
        }
    }

    /// Adaptive-grid probe: each batch's length is driven by the running
    /// reward sum, so boundaries genuinely depend on the state.
    struct AdaptiveProbe {
        horizon: u64,
    }

    #[derive(Clone)]
    struct ProbeState {
        reward_sum: u64,
    }

    impl Policy for AdaptiveProbe {
        type State = ProbeState;

        fn initial_state(&self) -> ProbeState {
            ProbeState { reward_sum: 0 }
        }

        fn plan_batch(&self, start: u64, state: &ProbeState, _seed: u64) -> BatchPlan {
            let len = 1 + state.reward_sum % 3;
            let end = (start + len).min(self.horizon);
            BatchPlan {
                end_round: end,
                segments: vec![((state.reward_sum % 2) as u32, end - start)],
            }
        }

        fn observe(&self, state: &mut ProbeState, _round: u64, _arm: u32, reward: u8) {
            state.reward_sum += reward as u64;
        }

        fn write_state(&self, state: &ProbeState, out: &mut dyn BitSink) {
            out.put(state.reward_sum, width_for_max(self.horizon));
        }

        fn read_state(&self, input: &mut BitReader<'_>) -> Option<ProbeState> {
            Some(ProbeState {
                reward_sum: input.take(width_for_max(self.horizon))?,
            })
        }
    }

    fn two_arm_instance() -> BanditInstance {
        BanditInstance::bernoulli(vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn single_batch_constant_run() {
        // "always arm 0" over one batch: B = 1, empty grid.
        let policy = RoundRobin {
            arms: 1,
            horizon: 10,
        };
        let inst = BanditInstance::bernoulli(vec![0.5, 0.3]).unwrap();
        let t = run(&policy, &inst, &RunConfig::new(10, 7)).unwrap();
        assert_eq!(t.pull_counts, vec![10, 0]);
        assert_eq!(t.batch_count(), 1);
        assert!(t.grid.is_empty());
        assert!(t.boundary_states.is_empty());
        assert_eq!(t.peak_state_bits, 0); // unit state encodes to nothing
    }

    #[test]
    fn round_robin_actions() {
        let policy = RoundRobin {
            arms: 2,
            horizon: 4,
        };
        let t = run(&policy, &two_arm_instance(), &RunConfig::new(4, 3)).unwrap();
        assert_eq!(t.actions, vec![0, 1, 0, 1]);
        assert_eq!(t.pull_counts, vec![2, 2]);
    }

    #[test]
    fn pull_counts_sum_to_horizon() {
        let policy = AdaptiveProbe { horizon: 101 };
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        let t = run(&policy, &inst, &RunConfig::new(101, 11).adaptive()).unwrap();
        assert_eq!(t.pull_counts.iter().sum::<u64>(), 101);
        assert_eq!(t.boundary_states.len(), t.batch_count() - 1);
    }

    #[test]
    fn budget_enforced_per_round() {
        let policy = AdaptiveProbe { horizon: 50 };
        let inst = BanditInstance::bernoulli(vec![1.0, 1.0]).unwrap();
        // Probe state needs width_for_max(50) = 6 bits; a 5-bit budget fails.
        let err = run(
            &policy,
            &inst,
            &RunConfig::new(50, 1).adaptive().with_budget(5),
        )
        .unwrap_err();
        assert!(matches!(err, RuntimeError::BudgetExceeded { .. }));
        assert_eq!(err.code(), "BudgetExceeded");
        // Generous budget passes and peak respects it.
        let t = run(
            &policy,
            &inst,
            &RunConfig::new(50, 1).adaptive().with_budget(6),
        )
        .unwrap();
        assert!(t.peak_state_bits <= 6);
        assert!(t.boundary_bits_total() <= (t.batch_count() as u64 - 1) * 6);
    }

    #[test]
    fn adaptive_policy_fails_static_check() {
        let policy = AdaptiveProbe { horizon: 60 };
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        let err = run(&policy, &inst, &RunConfig::new(60, 5)).unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::GridError {
                detail: GridErrorDetail::NotReproducible { .. },
                ..
            }
        ));
    }

    #[test]
    fn grid_errors_reported() {
        struct BadPlan {
            end: u64,
        }
        impl Policy for BadPlan {
            type State = ();
            fn initial_state(&self) {}
            fn plan_batch(&self, _s: u64, _st: &(), _seed: u64) -> BatchPlan {
                BatchPlan {
                    end_round: self.end,
                    segments: vec![(0, 1)],
                }
            }
            fn observe(&self, _s: &mut (), _r: u64, _a: u32, _x: u8) {}
            fn write_state(&self, _s: &(), _o: &mut dyn BitSink) {}
            fn read_state(&self, _i: &mut BitReader<'_>) -> Option<()> {
                Some(())
            }
        }
        let inst = two_arm_instance();
        let err = run(&BadPlan { end: 0 }, &inst, &RunConfig::new(5, 1)).unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::GridError {
                detail: GridErrorDetail::NonMonotone { .. },
                ..
            }
        ));
        let err = run(&BadPlan { end: 9 }, &inst, &RunConfig::new(5, 1)).unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::GridError {
                detail: GridErrorDetail::BeyondHorizon { .. },
                ..
            }
        ));
    }

    #[test]
    fn plan_policies_pass_commitment() {
        let policy = RoundRobin {
            arms: 2,
            horizon: 40,
        };
        let report =
            commitment_check(&policy, &two_arm_instance(), &RunConfig::new(40, 9)).unwrap();
        assert!(report.pass, "{report:?}");

        let probe = AdaptiveProbe { horizon: 37 };
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        let report = commitment_check(&probe, &inst, &RunConfig::new(37, 21).adaptive()).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn cheater_fails_commitment_in_batch_one() {
        let cheat = CheatingPolicy {
            horizon: 30,
            batch_len: 10,
        };
        let report =
            commitment_check(&cheat, &two_arm_instance(), &RunConfig::new(30, 13)).unwrap();
        assert!(!report.pass);
        let (batch, round) = report.divergence.unwrap();
        assert_eq!(batch, 1);
        assert_eq!(round, 2);
    }

    #[test]
    fn on_path_cheat_is_a_commitment_violation() {
        // Arm 0 pays nothing, so the cheater leaves its plan immediately and
        // the enforcing executor rejects the run.
        let cheat = CheatingPolicy {
            horizon: 10,
            batch_len: 5,
        };
        let inst = BanditInstance::bernoulli(vec![0.0, 1.0]).unwrap();
        let err = run(&cheat, &inst, &RunConfig::new(10, 2)).unwrap_err();
        assert!(matches!(
            err,
            RuntimeError::CommitmentViolation { round: 2, .. }
        ));
    }

    #[test]
    fn boundary_replay_reproduces_counts_and_grid() {
        let probe = AdaptiveProbe { horizon: 83 };
        let inst = BanditInstance::bernoulli(vec![0.6, 0.4]).unwrap();
        let t = run(&probe, &inst, &RunConfig::new(83, 17).adaptive()).unwrap();
        let report = boundary_replay(&probe, &t);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.replayed_pull_counts, t.pull_counts);
        assert_eq!(report.replayed_grid, t.grid);
    }

    #[test]
    fn state_encoding_is_canonical() {
        let probe = AdaptiveProbe { horizon: 40 };
        let mut state = probe.initial_state();
        probe.observe(&mut state, 1, 0, 1);
        probe.observe(&mut state, 2, 1, 1);
        let enc = encode_state(&probe, &state);
        let decoded = decode_state(&probe, &enc).unwrap();
        assert_eq!(encode_state(&probe, &decoded), enc);
        assert_eq!(measure_state_bits(&probe, &state), enc.len());
    }

    #[test]
    fn transcript_binary_roundtrip() {
        let probe = AdaptiveProbe { horizon: 59 };
        let inst = BanditInstance::bernoulli(vec![0.7, 0.2]).unwrap();
        let t = run(&probe, &inst, &RunConfig::new(59, 23).adaptive()).unwrap();
        let bytes = t.to_bytes();
        let back = Transcript::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn batch_csv_shape() {
        let policy = RoundRobin {
            arms: 2,
            horizon: 6,
        };
        let t = run(&policy, &two_arm_instance(), &RunConfig::new(6, 3)).unwrap();
        let mut buf = Vec::new();
        t.write_batch_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "batch,start,end,state_bits,n_1,n_2");
        assert_eq!(lines.len(), 1 + t.batch_count());
        assert!(lines[1].starts_with("1,0,6,0,3,3"));
    }
}
