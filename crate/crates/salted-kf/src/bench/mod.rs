//! Monte-Carlo benchmark harness.
//!
//! The harness compares the event-aware filter against the reset-Jacobian
//! variant and the hybrid particle filter on the bundled systems:
//!
//! - [`config`] — the experiment description ([`ExperimentConfig`]) that is
//!   read from and written to JSON;
//! - [`runner`] — deterministic Monte-Carlo trials ([`run_monte_carlo`]),
//!   aggregation, and pairwise sign tests;
//! - [`stats`] — mean-squared error, the exact binomial sign test, the
//!   mass-transition metric, and line fitting;
//! - [`output`] — CSV/JSON writers with round-trip-exact floats;
//! - [`diagnostics`] — the covariance-mapping experiment, the
//!   order-of-accuracy check of the event-aware linearization, and the
//!   deterministic mass-transition sweep.
//!
//! Outputs are byte-identical for a given configuration regardless of worker
//! count; wall-clock timing is reported separately so the deterministic
//! artifacts stay comparable across machines.

pub mod config;
pub mod diagnostics;
pub mod output;
pub mod runner;
pub mod stats;

pub use config::ExperimentConfig;
pub use diagnostics::{
    covariance_mapping_experiment, linearization_order_check, mass_transition_experiment,
    propagate_through_events, write_cloud_csv, CovarianceMappingData, OrderCheck, OrderCheckPoint,
};
pub use output::{format_float, write_outputs, write_trials_csv};
pub use runner::{
    run_monte_carlo, run_trial, FilterAggregate, MonteCarloOutput, MonteCarloSummary,
    PairwiseSignTest, RuntimeReport, TrialRecord,
};
pub use stats::{fit_line, mass_transition_ratio, median, mse, sign_test, LineFit, Z_995};
