//! Distribution-inference attack toolkit.
//!
//! The crate quantifies how much a trained model reveals about statistical
//! properties of its training *distribution* (not individual records). It has
//! three legs:
//!
//! * [`leakage`] - closed-form distinguishing-accuracy bounds and the
//!   `n_leaked` metrics that translate observed attack performance into an
//!   equivalent number of directly-leaked samples.
//! * [`oracle`] - independent exact/Monte-Carlo optimal distinguishers used to
//!   validate every closed form.
//! * [`synthdata`], [`nets`], [`attacks`], [`harness`] - a synthetic-data
//!   generator with controlled property ratios, from-scratch trainable
//!   networks, the three inference attacks (loss test, threshold test,
//!   permutation-invariant meta-classifier in binary and regression form),
//!   and the experiment harness plus `distinf` CLI that sweeps ratio pairs
//!   and emits leakage heatmaps.
//!
//! All randomness is derived from explicit 64-bit seeds; every pipeline is
//! deterministic for a fixed configuration regardless of thread count.

pub mod attacks;
pub mod harness;
pub mod leakage;
pub mod nets;
pub mod oracle;
pub mod synthdata;
pub mod util;
