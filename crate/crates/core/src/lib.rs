//! Batched, memory-bounded multi-armed bandit laboratory.
//!
//! This crate simulates stochastic bandit algorithms that face two resource
//! constraints at once: interaction happens in `B` committed batches, and the
//! only state carried across rounds is a persistent memory of at most `W`
//! bits. It provides:
//!
//! - [`instances`]: Bernoulli bandit instances, the half-good/half-bad hard
//!   family with one-arm perturbations, and pull-indexed deterministic reward
//!   streams that allow coupled environments.
//! - [`runtime`]: a batch executor that enforces plan commitment, accounts
//!   persistent state in bits at every round, and records full transcripts
//!   with boundary-state encodings.
//! - [`scheduler`]: the block-scanning incumbent/challenger policy built on a
//!   deterministic doubling grid, plus UCB / batched-elimination / constant
//!   baselines.
//! - [`analysis`]: regret, thresholded sampling profiles, error counts, and
//!   the information-accounting quantities (binary entropy, per-arm
//!   information lower bound, boundary-memory capacity).
//! - [`oracle`]: exact brute-force enumeration over tiny reward tables to
//!   verify the event-restricted chi-square change-of-measure inequalities
//!   and the prefix-truncation argument behind them.
//!
//! Everything is deterministic given a 64-bit master seed.

pub mod analysis;
pub mod bits;
pub mod instances;
pub mod oracle;
pub mod rng;
pub mod runtime;
pub mod scheduler;

pub use instances::{BanditInstance, GoodArmSet, PerturbationSpec, RewardStream};
pub use runtime::{BatchPlan, GridMode, Policy, RunConfig, Transcript};
pub use scheduler::{Algorithm1Policy, ConfidenceParams, Schedule};
