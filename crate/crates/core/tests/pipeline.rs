//! Cross-module integration: instances -> runtime -> scheduler -> analysis
//! on the hard family, the way the lower-bound lab composes them.

use batchmem::analysis::{error_counts, exploration_rate, info_lower_bound, profile, regret};
use batchmem::instances::{make_hard_instance, sample_good_set, GoodArmSet};
use batchmem::rng::replication_seed;
use batchmem::runtime::{run, RunConfig, Transcript};
use batchmem::scheduler::{default_delta, Algorithm1Policy};

fn hard_runs(k: usize, horizon: u64, reps: u64, master: u64) -> (GoodArmSet, Vec<Transcript>) {
    let good = sample_good_set(k, master).unwrap();
    let inst = make_hard_instance(&good);
    let policy = Algorithm1Policy::new(k as u32, 2, horizon, default_delta(horizon)).unwrap();
    let runs = (0..reps)
        .map(|rep| {
            let seed = replication_seed(master, rep);
            run(&policy, &inst, &RunConfig::new(horizon, seed)).unwrap()
        })
        .collect();
    (good, runs)
}

#[test]
fn regret_identity_on_hard_instances() {
    // regret = 1/2 * (bad-arm pulls), exactly, on every transcript
    let (good, runs) = hard_runs(4, 10_000, 10, 31);
    let inst = make_hard_instance(&good);
    for t in &runs {
        let bad_pulls: u64 = (0..4)
            .filter(|&a| !good.contains(a))
            .map(|a| t.pull_counts[a])
            .sum();
        assert_eq!(regret(t, &inst).unwrap(), bad_pulls as f64 / 2.0);
    }
}

#[test]
fn false_positives_bounded_by_regret() {
    // every bad arm crossing threshold n contributes at least n/2 regret,
    // so FP <= regret / (n/2) per transcript
    let (good, runs) = hard_runs(6, 50_000, 20, 47);
    let inst = make_hard_instance(&good);
    let policy = Algorithm1Policy::new(6, 2, 50_000, default_delta(50_000)).unwrap();
    let n = policy.schedule().level(2);
    for t in &runs {
        let y = profile(t, n);
        let counts = error_counts(&y, &good).unwrap();
        let reg = regret(t, &inst).unwrap();
        assert!(
            counts.false_positives as f64 <= reg / (n as f64 / 2.0) + 1e-9,
            "FP {} vs regret {} at n {}",
            counts.false_positives,
            reg,
            n
        );
    }
}

#[test]
fn exploration_rate_reported_with_interval() {
    let (good, runs) = hard_runs(4, 10_000, 50, 13);
    let policy = Algorithm1Policy::new(4, 2, 10_000, default_delta(10_000)).unwrap();
    let n = policy.schedule().level(1);
    let good_arm = good.members().next().unwrap();
    let estimate = exploration_rate(&runs, good_arm, n).unwrap();
    assert_eq!(estimate.trials, 50);
    assert!(estimate.wilson_low <= estimate.rate && estimate.rate <= estimate.wilson_high);
    assert!((0.0..=1.0).contains(&estimate.wilson_low));
    assert!((0.0..=1.0).contains(&estimate.wilson_high));
}

#[test]
fn info_bound_never_exceeds_arm_count() {
    for k in [2usize, 4, 8, 16, 64] {
        for i in 0..=20 {
            let p_e = i as f64 / 20.0;
            let bound = info_lower_bound(k, p_e);
            assert!(bound <= k as f64, "K={k} p_e={p_e}: {bound}");
        }
    }
}
