//! Post-hoc audit of a block-scanning run.
//!
//! The harness knows the true means, so after a run it can replay every
//! decision the policy made: batch plans come from the recorded boundary
//! states, empirical means are recomputed from the raw rewards, and the
//! deactivation / incumbent-update rules are re-applied and cross-checked
//! against the next boundary state. On top of that replay the audit grades
//! the run against the clean-event guarantees:
//!
//! - every empirical mean lies within its confidence radius of the truth
//!   (the concentration event);
//! - a true best arm is never deactivated;
//! - block updates never decrease the true mean of the incumbent;
//! - the incumbent at the end of outer iteration `i` has gap at most
//!   `4 c(t_i)`, and any challenger still active entering level `k >= 2` has
//!   gap at most `8 c(t_{k-1})`.
//!
//! The gap properties are only guaranteed on runs where the concentration
//! event holds; callers filter on `concentration_ok` before asserting them.

use thiserror::Error;

use crate::instances::BanditInstance;
use crate::rng::{self, keyed_u64};
use crate::runtime::{decode_state, Policy, Transcript};

use super::{AlgoState, Algorithm1Policy};

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("transcript inconsistent with policy: {0}")]
    Inconsistent(String),
}

/// Outcome of auditing one run.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodEventReport {
    /// All refresh and challenger means within their radii.
    pub concentration_ok: bool,
    pub radius_violations: u32,
    /// Deactivations of an arm whose true mean equals the best mean.
    pub best_arm_deactivations: u32,
    /// Block updates that strictly lowered the incumbent's true mean.
    pub incumbent_mean_decreases: u32,
    /// Outer iterations ending with incumbent gap above `4 c(t_i)`.
    pub iteration_gap_violations: u32,
    /// Active survivors entering level `k >= 2` with gap above `8 c(t_{k-1})`.
    pub survivor_gap_violations: u32,
    pub final_incumbent_arm: u32,
    /// `mu_star - mu(final incumbent)`.
    pub final_incumbent_gap: f64,
    /// `4 c(t_L)`.
    pub final_gap_bound: f64,
}

/// Replay and grade a completed run of the block-scanning policy.
pub fn audit_good_event(
    policy: &Algorithm1Policy,
    transcript: &Transcript,
    instance: &BanditInstance,
) -> Result<GoodEventReport, AuditError> {
    if transcript.batch_count() as u64 != policy.expected_batches() {
        return Err(AuditError::Inconsistent(format!(
            "run has {} batches, policy commits {}",
            transcript.batch_count(),
            policy.expected_batches()
        )));
    }
    let seed = keyed_u64(transcript.master_seed, rng::tag::POLICY, 0);
    let mu = instance.means();
    let mu_star = instance.best_mean();
    let levels = policy.schedule().level_count() as u32;

    let mut report = GoodEventReport {
        concentration_ok: true,
        radius_violations: 0,
        best_arm_deactivations: 0,
        incumbent_mean_decreases: 0,
        iteration_gap_violations: 0,
        survivor_gap_violations: 0,
        final_incumbent_arm: 0,
        final_incumbent_gap: 0.0,
        final_gap_bound: 4.0 * policy.level_radius(levels),
    };

    let b = transcript.batch_count();
    let mut pre = decode_state(
        policy,
        &crate::runtime::encode_state(policy, &policy.initial_state()),
    )
    .expect("initial state roundtrips");
    for batch in 0..b {
        let (start, end) = transcript.batch_bounds(batch);
        let post: Option<AlgoState> = if batch + 1 < b {
            Some(
                decode_state(policy, &transcript.boundary_states[batch]).ok_or_else(|| {
                    AuditError::Inconsistent(format!("undecodable state after batch {}", batch + 1))
                })?,
            )
        } else {
            decode_state(policy, &transcript.final_state)
        };

        let plan = policy.plan_batch(start, &pre, seed);
        if plan.end_round != end {
            return Err(AuditError::Inconsistent(format!(
                "batch {} boundary: plan says {}, transcript says {}",
                batch + 1,
                plan.end_round,
                end
            )));
        }

        if pre.slot_indices().is_some() {
            audit_slot_batch(
                policy,
                transcript,
                instance,
                &pre,
                post.as_ref(),
                start,
                &mut report,
            )?;
        } else if pre.is_refresh() {
            let t_i = policy.schedule().level(pre.outer() as usize);
            let sum: u64 = (start..end)
                .map(|t| transcript.rewards[t as usize] as u64)
                .sum();
            let mean = sum as f64 / t_i as f64;
            if (mean - mu[pre.init_arm() as usize]).abs() > policy.level_radius(pre.outer()) {
                report.radius_violations += 1;
            }
        } else {
            // Final batch: grade the committed incumbent.
            report.final_incumbent_arm = pre.incumbent_arm();
            report.final_incumbent_gap = mu_star - mu[pre.incumbent_arm() as usize];
        }

        // End of an outer iteration: the next batch either refreshes i+1 or
        // exploits. Both expose a_i^star as the inherited incumbent.
        if let Some(post_state) = &post {
            let iteration_ended =
                pre.slot_indices().is_some() && (post_state.is_refresh() || post_state.is_final());
            if iteration_ended {
                let gap = mu_star - mu[post_state.incumbent_arm() as usize];
                if gap > 4.0 * policy.level_radius(pre.outer()) + 1e-12 {
                    report.iteration_gap_violations += 1;
                }
            }
            pre = post_state.clone();
        }
    }

    report.concentration_ok = report.radius_violations == 0;
    Ok(report)
}

fn audit_slot_batch(
    policy: &Algorithm1Policy,
    transcript: &Transcript,
    instance: &BanditInstance,
    pre: &AlgoState,
    post: Option<&AlgoState>,
    start: u64,
    report: &mut GoodEventReport,
) -> Result<(), AuditError> {
    let (outer, block, level) = pre.slot_indices().expect("slot batch");
    let mu = instance.means();
    let mu_star = instance.best_mean();
    let t_k = policy.schedule().level(level as usize);
    let radius = policy.level_radius(level);
    let (_, bench_sum, bench_count) = pre.benchmark();
    let bench_mean = bench_sum as f64 / bench_count as f64;

    // The real block layout; positions past its length are padding and must
    // be ignored (their zeroed arm id can collide with a genuine arm 0).
    let block_arms = policy.block_arms(pre.init_arm(), block);
    let len = block_arms.len();
    let pre_slots: Vec<(u32, bool, u64, u64)> = pre.position_view().take(len).collect();
    for (p, &arm) in block_arms.iter().enumerate() {
        if pre_slots[p].0 != arm {
            return Err(AuditError::Inconsistent(format!(
                "block {} position {} holds arm {}, layout says {}",
                block, p, pre_slots[p].0, arm
            )));
        }
    }

    // Survivor gap: anything still active entering level k >= 2.
    if level >= 2 {
        let bound = 8.0 * policy.level_radius(level - 1);
        for &(arm, active, _, _) in &pre_slots {
            if active && mu_star - mu[arm as usize] > bound + 1e-12 {
                report.survivor_gap_violations += 1;
            }
        }
    }

    // Recompute each active challenger's fresh mean from its segment (the
    // plan lists actives in position order, then benchmark fillers) and
    // re-apply the deactivation rule.
    let mut seg_start = start;
    // per position: None for inactive, Some((survives, sum)) for active
    let mut decided: Vec<Option<(bool, u64)>> = vec![None; len];
    for (p, &(arm, active, _, _)) in pre_slots.iter().enumerate() {
        if !active {
            continue;
        }
        let sum: u64 = (seg_start..seg_start + t_k)
            .map(|t| {
                debug_assert_eq!(transcript.actions[t as usize], arm);
                transcript.rewards[t as usize] as u64
            })
            .sum();
        seg_start += t_k;
        let mean = sum as f64 / t_k as f64;
        if (mean - mu[arm as usize]).abs() > radius {
            report.radius_violations += 1;
        }
        let deactivated = mean < bench_mean - 2.0 * radius;
        if deactivated && mu[arm as usize] == mu_star {
            report.best_arm_deactivations += 1;
        }
        decided[p] = Some((!deactivated, sum));
    }

    let Some(post) = post else {
        return Err(AuditError::Inconsistent("slot batch cannot be last".into()));
    };

    if level < outer {
        // Same block continues: flags in the next state must match the
        // re-derived decisions, position by position.
        let post_slots: Vec<(u32, bool, u64, u64)> = post.position_view().take(len).collect();
        for p in 0..len {
            let expected_active = matches!(decided[p], Some((true, _)));
            if post_slots[p].0 != pre_slots[p].0 || post_slots[p].1 != expected_active {
                return Err(AuditError::Inconsistent(format!(
                    "level {} position {} flags diverge (arm {})",
                    level, p, pre_slots[p].0
                )));
            }
        }
    } else {
        // Block end: re-apply the incumbent update rule. Strict comparison
        // keeps the lowest arm index on ties, as the policy does.
        let mut best: Option<(u32, f64)> = None;
        for (p, d) in decided.iter().enumerate() {
            if let Some((true, sum)) = d {
                let mean = *sum as f64 / t_k as f64;
                if best.is_none_or(|(_, m)| mean > m) {
                    best = Some((pre_slots[p].0, mean));
                }
            }
        }
        let expected_incumbent = match best {
            Some((arm, mean)) if mean >= bench_mean + 2.0 * policy.level_radius(outer) => {
                Some(arm)
            }
            _ => None,
        };
        let prev_arm = pre.incumbent_arm();
        match expected_incumbent {
            Some(arm) => {
                if post.incumbent_arm() != arm {
                    return Err(AuditError::Inconsistent(format!(
                        "expected incumbent update to arm {}, state says {}",
                        arm,
                        post.incumbent_arm()
                    )));
                }
                if mu[arm as usize] < mu[prev_arm as usize] {
                    report.incumbent_mean_decreases += 1;
                }
            }
            None => {
                if post.incumbent_arm() != prev_arm {
                    return Err(AuditError::Inconsistent(
                        "incumbent changed without a passing update".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}
