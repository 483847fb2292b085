//! Comparison baselines.
//!
//! - [`UcbPolicy`]: fully sequential UCB1 run as `T` single-round batches
//!   with unbounded memory: the "no constraints" reference point.
//! - [`EliminationPolicy`]: batched successive elimination that keeps the
//!   whole active set (`Theta(K log T)` bits of state) on the same doubling
//!   grid; its batch lengths shrink with the active set, so it runs under an
//!   adaptive grid.
//! - [`ConstantPolicy`]: one batch, one arm; the small-horizon fallback.

use crate::bits::{width_for_max, BitReader, BitSink};
use crate::runtime::{BatchPlan, Policy};

use super::{build_schedule, ConfidenceParams, Schedule, SchedulerError};

// ---------------------------------------------------------------------------
// Constant policy
// ---------------------------------------------------------------------------

/// Pulls a single arm for the whole horizon in one batch. Carries no state.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub arm: u32,
    pub horizon: u64,
}

impl Policy for ConstantPolicy {
    type State = ();

    fn initial_state(&self) {}

    fn plan_batch(&self, start: u64, _state: &(), _seed: u64) -> BatchPlan {
        BatchPlan {
            end_round: self.horizon,
            segments: vec![(self.arm, self.horizon - start)],
        }
    }

    fn observe(&self, _state: &mut (), _round: u64, _arm: u32, _reward: u8) {}

    fn write_state(&self, _state: &(), _out: &mut dyn BitSink) {}

    fn read_state(&self, _input: &mut BitReader<'_>) -> Option<()> {
        Some(())
    }
}

// ---------------------------------------------------------------------------
// UCB
// ---------------------------------------------------------------------------

/// UCB1 with the classic `sqrt(2 ln t / n)` bonus, one round per batch.
#[derive(Debug, Clone)]
pub struct UcbPolicy {
    arm_count: u32,
    horizon: u64,
    counter_width: u32,
}

/// Fully sequential UCB baseline: `B = T` batches, unbounded state.
pub fn baseline_ucb(arm_count: u32, horizon: u64) -> UcbPolicy {
    UcbPolicy {
        arm_count,
        horizon,
        counter_width: width_for_max(horizon),
    }
}

/// Per-arm exact `(reward sum, pull count)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbState {
    sums: Vec<u64>,
    counts: Vec<u64>,
}

impl UcbPolicy {
    fn choose(&self, state: &UcbState, now: u64) -> u32 {
        if let Some(arm) = state.counts.iter().position(|&n| n == 0) {
            return arm as u32;
        }
        let log_t = (now.max(1) as f64).ln();
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for arm in 0..self.arm_count as usize {
            let n = state.counts[arm] as f64;
            let score = state.sums[arm] as f64 / n + (2.0 * log_t / n).sqrt();
            if score > best_score {
                best_score = score;
                best = arm;
            }
        }
        best as u32
    }
}

impl Policy for UcbPolicy {
    type State = UcbState;

    fn initial_state(&self) -> UcbState {
        UcbState {
            sums: vec![0; self.arm_count as usize],
            counts: vec![0; self.arm_count as usize],
        }
    }

    fn plan_batch(&self, start: u64, state: &UcbState, _seed: u64) -> BatchPlan {
        debug_assert!(start < self.horizon);
        BatchPlan {
            end_round: start + 1,
            segments: vec![(self.choose(state, start), 1)],
        }
    }

    fn observe(&self, state: &mut UcbState, _round: u64, arm: u32, reward: u8) {
        state.sums[arm as usize] += reward as u64;
        state.counts[arm as usize] += 1;
    }

    fn write_state(&self, state: &UcbState, out: &mut dyn BitSink) {
        for arm in 0..self.arm_count as usize {
            out.put(state.sums[arm], self.counter_width);
            out.put(state.counts[arm], self.counter_width);
        }
    }

    fn read_state(&self, input: &mut BitReader<'_>) -> Option<UcbState> {
        let mut sums = Vec::with_capacity(self.arm_count as usize);
        let mut counts = Vec::with_capacity(self.arm_count as usize);
        for _ in 0..self.arm_count {
            sums.push(input.take(self.counter_width)?);
            counts.push(input.take(self.counter_width)?);
        }
        Some(UcbState { sums, counts })
    }
}

// ---------------------------------------------------------------------------
// Batched successive elimination
// ---------------------------------------------------------------------------

/// Keeps every surviving arm: stage `i` pulls each active arm `t_i` fresh
/// times in one batch, then drops arms confidently below the empirical
/// leader. After the last stage the empirical best plays out the horizon.
#[derive(Debug, Clone)]
pub struct EliminationPolicy {
    arm_count: u32,
    horizon: u64,
    schedule: Schedule,
    confidence: ConfidenceParams,
    radii: Vec<f64>,
    counter_width: u32,
    arm_width: u32,
    stage_width: u32,
}

/// Batched elimination baseline on the same grid as the main policy.
pub fn baseline_batched_elimination(
    arm_count: u32,
    horizon: u64,
    delta: f64,
) -> Result<EliminationPolicy, SchedulerError> {
    if arm_count < 2 {
        return Err(SchedulerError::DomainError(
            "elimination needs at least two arms".into(),
        ));
    }
    let schedule = build_schedule(horizon, arm_count as u64)?;
    let confidence = ConfidenceParams::new(delta)?;
    let radii = schedule
        .levels()
        .iter()
        .map(|&t| confidence.radius(t).expect("levels are >= 1"))
        .collect();
    Ok(EliminationPolicy {
        arm_count,
        horizon,
        confidence,
        radii,
        counter_width: width_for_max(horizon),
        arm_width: width_for_max(arm_count as u64 - 1),
        stage_width: width_for_max(schedule.level_count() as u64),
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationState {
    /// 1..=L while scanning; L+1 marks the exploitation phase.
    stage: u32,
    rounds_done: u64,
    committed: u32,
    active: Vec<bool>,
    sums: Vec<u64>,
    counts: Vec<u64>,
}

impl EliminationState {
    pub fn active_arms(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(a, &on)| on.then_some(a))
    }

    pub fn committed_arm(&self) -> u32 {
        self.committed
    }

    pub fn is_exploiting(&self, levels: usize) -> bool {
        self.stage as usize > levels
    }
}

impl EliminationPolicy {
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn confidence(&self) -> &ConfidenceParams {
        &self.confidence
    }

    fn exploiting(&self, state: &EliminationState) -> bool {
        state.stage as usize > self.schedule.level_count()
    }

    fn batch_len(&self, state: &EliminationState) -> u64 {
        if self.exploiting(state) {
            // set once the exploitation batch is planned
            u64::MAX
        } else {
            let active = state.active.iter().filter(|&&on| on).count() as u64;
            active * self.schedule.level(state.stage as usize)
        }
    }

    fn end_of_stage(&self, state: &mut EliminationState) {
        let t_i = self.schedule.level(state.stage as usize);
        let radius = self.radii[(state.stage - 1) as usize];
        let leader = state
            .active_arms()
            .map(|a| state.sums[a] as f64 / t_i as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        for a in 0..self.arm_count as usize {
            if state.active[a] {
                let mean = state.sums[a] as f64 / t_i as f64;
                if mean < leader - 2.0 * radius {
                    state.active[a] = false;
                }
            }
        }
        if (state.stage as usize) < self.schedule.level_count() {
            state.stage += 1;
            state.sums.fill(0);
            state.counts.fill(0);
        } else {
            // Commit the empirical leader (lowest index on ties).
            let mut best = None;
            let mut best_mean = f64::NEG_INFINITY;
            for a in state.active_arms() {
                let mean = state.sums[a] as f64 / t_i as f64;
                if mean > best_mean {
                    best_mean = mean;
                    best = Some(a);
                }
            }
            state.committed = best.expect("at least the leader survives") as u32;
            state.stage += 1;
            state.sums.fill(0);
            state.counts.fill(0);
        }
        state.rounds_done = 0;
    }
}

impl Policy for EliminationPolicy {
    type State = EliminationState;

    fn initial_state(&self) -> EliminationState {
        EliminationState {
            stage: 1,
            rounds_done: 0,
            committed: 0,
            active: vec![true; self.arm_count as usize],
            sums: vec![0; self.arm_count as usize],
            counts: vec![0; self.arm_count as usize],
        }
    }

    fn plan_batch(&self, start: u64, state: &EliminationState, _seed: u64) -> BatchPlan {
        if self.exploiting(state) {
            BatchPlan {
                end_round: self.horizon,
                segments: vec![(state.committed, self.horizon - start)],
            }
        } else {
            let t_i = self.schedule.level(state.stage as usize);
            let segments: Vec<(u32, u64)> = state.active_arms().map(|a| (a as u32, t_i)).collect();
            let len: u64 = segments.len() as u64 * t_i;
            BatchPlan {
                end_round: start + len,
                segments,
            }
        }
    }

    fn observe(&self, state: &mut EliminationState, _round: u64, arm: u32, reward: u8) {
        if self.exploiting(state) {
            return;
        }
        state.sums[arm as usize] += reward as u64;
        state.counts[arm as usize] += 1;
        state.rounds_done += 1;
        if state.rounds_done == self.batch_len(state) {
            self.end_of_stage(state);
        }
    }

    fn write_state(&self, state: &EliminationState, out: &mut dyn BitSink) {
        out.put(state.stage as u64, self.stage_width + 1);
        out.put(state.rounds_done, self.counter_width);
        out.put(state.committed as u64, self.arm_width);
        for a in 0..self.arm_count as usize {
            out.put(state.active[a] as u64, 1);
            out.put(state.sums[a], self.counter_width);
            out.put(state.counts[a], self.counter_width);
        }
    }

    fn read_state(&self, input: &mut BitReader<'_>) -> Option<EliminationState> {
        let stage = input.take(self.stage_width + 1)? as u32;
        let rounds_done = input.take(self.counter_width)?;
        let committed = input.take(self.arm_width)? as u32;
        let mut active = Vec::with_capacity(self.arm_count as usize);
        let mut sums = Vec::with_capacity(self.arm_count as usize);
        let mut counts = Vec::with_capacity(self.arm_count as usize);
        for _ in 0..self.arm_count {
            active.push(input.take(1)? == 1);
            sums.push(input.take(self.counter_width)?);
            counts.push(input.take(self.counter_width)?);
        }
        Some(EliminationState {
            stage,
            rounds_done,
            committed,
            active,
            sums,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::BanditInstance;
    use crate::runtime::{boundary_replay, commitment_check, run, RunConfig};

    #[test]
    fn constant_policy_single_batch() {
        let policy = ConstantPolicy {
            arm: 1,
            horizon: 50,
        };
        let inst = BanditInstance::bernoulli(vec![0.2, 0.9]).unwrap();
        let t = run(&policy, &inst, &RunConfig::new(50, 4)).unwrap();
        assert_eq!(t.batch_count(), 1);
        assert_eq!(t.pull_counts, vec![0, 50]);
        assert_eq!(t.peak_state_bits, 0);
    }

    #[test]
    fn ucb_concentrates_on_good_arm() {
        let policy = baseline_ucb(2, 100);
        let inst = BanditInstance::bernoulli(vec![1.0, 0.0]).unwrap();
        let t = run(&policy, &inst, &RunConfig::new(100, 8)).unwrap();
        assert_eq!(t.batch_count(), 100);
        assert!(t.pull_counts[1] < 30, "bad arm pulled {}", t.pull_counts[1]);
    }

    #[test]
    fn ucb_commitment_and_replay() {
        let policy = baseline_ucb(3, 150);
        let inst = BanditInstance::bernoulli(vec![0.6, 0.5, 0.1]).unwrap();
        let cfg = RunConfig::new(150, 12);
        assert!(commitment_check(&policy, &inst, &cfg).unwrap().pass);
        let t = run(&policy, &inst, &cfg).unwrap();
        assert!(boundary_replay(&policy, &t).pass);
    }

    #[test]
    fn elimination_keeps_equal_arms() {
        // Equal means: confident elimination should (essentially) never fire.
        let horizon = 10_000;
        let policy =
            baseline_batched_elimination(2, horizon, super::super::default_delta(horizon)).unwrap();
        let inst = BanditInstance::bernoulli(vec![0.5, 0.5]).unwrap();
        let mut eliminations = 0;
        for seed in 0..20 {
            let t = run(&policy, &inst, &RunConfig::new(horizon, seed).adaptive()).unwrap();
            let final_state = crate::runtime::decode_state(&policy, &t.final_state).unwrap();
            if final_state.active_arms().count() < 2 {
                eliminations += 1;
            }
        }
        assert_eq!(eliminations, 0, "eliminate-rate {} / 20", eliminations);
    }

    #[test]
    fn elimination_drops_bad_arm_and_replays() {
        let horizon = 20_000;
        let policy = baseline_batched_elimination(4, horizon, 1e-8).unwrap();
        let inst = BanditInstance::bernoulli(vec![0.9, 0.1, 0.1, 0.1]).unwrap();
        let cfg = RunConfig::new(horizon, 3).adaptive();
        let t = run(&policy, &inst, &cfg).unwrap();
        let final_state = crate::runtime::decode_state(&policy, &t.final_state).unwrap();
        assert_eq!(final_state.committed_arm(), 0);
        assert!(t.pull_counts[0] > horizon / 2);
        // adaptive grid, recomputable from (U, boundary states)
        let report = boundary_replay(&policy, &t);
        assert!(report.pass, "{report:?}");
        assert!(commitment_check(&policy, &inst, &cfg).unwrap().pass);
    }
}
