//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in simulation, filtering, or benchmarking.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimension for its mode or model.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A mode or transition was queried that the system does not define.
    #[error("unknown mode or transition: {0}")]
    UnknownMode(String),

    /// The step controller could not make progress.
    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    /// Guard crossing with a (near-)vanishing or wrong-signed approach rate.
    /// Signals a grazing impact; callers abort with a diagnostic rather than
    /// regularize.
    #[error(
        "non-transverse guard crossing: d/dt g = {derivative:.6e} at t = {t} \
         (must be < -{eps:.0e})"
    )]
    NonTransverseCrossing { derivative: f64, t: f64, eps: f64 },

    /// A flow-map linearization window contained a hybrid event; the caller
    /// must split the segment at the event first.
    #[error("flow linearization over [{t0}, {t1}] crosses a hybrid event; split at the event")]
    LinearizationAcrossEvent { t0: f64, t1: f64 },

    /// A linear solve on a matrix that should be positive definite failed.
    #[error("numerical conditioning: {0}")]
    NumericalConditioning(String),

    /// All particle likelihoods vanished (or became non-finite).
    #[error("particle filter degeneracy: {0}")]
    ParticleDegeneracy(String),

    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Initial-state rejection sampling gave up.
    #[error("initial-state sampling exceeded {attempts} rejections")]
    InitialSampling { attempts: usize },

    /// Safety valve against runaway event chains within a single timestep.
    #[error("event cap exceeded: {count} transitions within one timestep at t = {t}")]
    EventCap { count: usize, t: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
