//! Envy-free allocation of indivisible items under random additive utilities.
//!
//! Agents draw i.i.d. utilities for every item from a [`DistributionSpec`].
//! The crate provides the threshold-matching allocators, an exhaustive
//! existence oracle, the analytic bounds that go with them, and a
//! reproducible Monte Carlo harness.

pub mod allocators;
pub mod analysis;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod matching;
pub mod rng;

pub use allocators::{
    brute_force_ef_exists, select_tau, threshold_matching, threshold_matching_with_removal,
    verify_removal_certificates, welfare_maximizing, BruteForceResult, CertificateReport, Removal,
    RemovalLog, RemovalOutcome, TauChoice, TauMode,
};
pub use distributions::{DistributionSpec, PolyBoundParams};
pub use error::{Error, Result};
pub use experiments::{Algorithm, Outcome, SweepConfig, SweepResult, TrialRecord};
pub use instance::{
    envy_report, is_balanced, is_envy_free, Allocation, EnvyReport, Instance, SCHEMA,
};
pub use matching::{find_perfect_r_matching, hall_violation_search, BipartiteGraph, RMatching};
