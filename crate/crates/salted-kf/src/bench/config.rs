//! Experiment configuration: one JSON document that fully describes a run.
//!
//! Every run echoes its configuration into the output summary, so results
//! are self-describing and reproducible from the artifacts alone.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::hybrid::{GaussianBelief, ModeId, NoiseModel};
use crate::integrator::IntegratorConfig;
use crate::systems::BenchSystem;

/// Independent random-number streams reserved per trial: stream 0 drives the
/// ground truth, streams `1..` drive each configured filter's sampling. Keyed
/// this way, every (trial, filter) pair sees the same randomness regardless
/// of execution order or worker count.
pub(crate) const RNG_LANES_PER_TRIAL: u64 = 64;

/// Full description of a Monte-Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark system name: `constant_flow` or `aslip`.
    pub system: String,
    /// Measurement timestep Δ in seconds; the grid is `t_k = k·Δ`.
    pub dt: f64,
    /// Horizon; the run covers `k = 0..=⌊t_final/Δ⌋`.
    pub t_final: f64,
    /// Per-step process covariance scale: `W = process_noise·I` accumulated
    /// over one full timestep.
    pub process_noise: f64,
    /// Measurement covariance scale: `V = measurement_noise·I`.
    pub measurement_noise: f64,
    /// Reset covariance scale: `W_r = reset_noise·I` added at each event.
    pub reset_noise: f64,
    /// Mean of the initial belief; also the mean of the distribution the
    /// true initial state is drawn from.
    pub initial_mean: Vec<f64>,
    /// Covariance of the initial belief, as rows. May be rank-deficient
    /// (the hopper's toe coordinates are slaved to its body in flight).
    pub initial_cov: Vec<Vec<f64>>,
    /// Mode every trial starts in.
    pub initial_mode: u32,
    /// Number of Monte-Carlo trials.
    pub trials: usize,
    /// Base RNG seed; trial `i` uses stream `i` of a counter-based generator
    /// keyed by this seed, so results are independent of execution order.
    pub base_seed: u64,
    /// Estimators to run on each trial's measurement sequence.
    pub filters: Vec<FilterKind>,
    /// Integrator tolerances (defaults apply when omitted).
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

impl ExperimentConfig {
    /// A ready-to-run configuration for a named system, mirroring the
    /// benchmark settings: the planar system runs 200 trials at Δ = 50 ms
    /// with `‖W‖ = 0.01Δ²` and unit measurement noise; the hopper runs 50
    /// trials of 1.25 s (two-plus hops) at Δ = 5 ms with `‖V‖ = 0.005`.
    pub fn default_for(system: &str) -> Result<Self> {
        let bench = BenchSystem::by_name(system)?;
        let belief = bench.default_initial_belief();
        let initial_mean = belief.mean.iter().copied().collect();
        let initial_cov = matrix_rows(&belief.cov);
        let (dt, t_final, measurement_noise, trials) = match bench {
            BenchSystem::ConstantFlow { .. } => (0.05, 2.5, 1.0, 200),
            BenchSystem::Aslip { .. } => (0.005, 1.25, 0.005, 50),
        };
        Ok(Self {
            system: bench.name().to_owned(),
            dt,
            t_final,
            process_noise: 0.01 * dt * dt,
            measurement_noise,
            reset_noise: 0.0,
            initial_mean,
            initial_cov,
            initial_mode: belief.mode.0,
            trials,
            base_seed: 1729,
            filters: vec![FilterKind::Skf, FilterKind::Jrkf],
            integrator: IntegratorConfig::default(),
        })
    }

    /// Reads a configuration from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Writes the configuration as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Checks every invariant the runner relies on.
    pub fn validate(&self) -> Result<()> {
        let bench = self.bench_system()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "timestep must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::Config(format!(
                "horizon t_final = {} must cover at least one step of {}",
                self.t_final, self.dt
            )));
        }
        if self.trials < 1 {
            return Err(Error::Config("trial count must be at least 1".to_owned()));
        }
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
            ("reset_noise", self.reset_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        let sys = bench.system();
        let mode = ModeId(self.initial_mode);
        if !sys.modes().contains(&mode) {
            return Err(Error::UnknownMode(format!(
                "initial mode {mode} of system '{}'",
                self.system
            )));
        }
        let belief = self.initial_belief()?;
        let dim = sys.state_dim(mode);
        if belief.mean.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "initial mean",
                expected: dim,
                actual: belief.mean.len(),
            });
        }
        belief.validate()?;
        if self.filters.len() as u64 >= RNG_LANES_PER_TRIAL {
            return Err(Error::Config(format!(
                "at most {} filters per experiment",
                RNG_LANES_PER_TRIAL - 1
            )));
        }
        let mut labels: Vec<String> = self.filters.iter().map(FilterKind::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.filters.len() {
            return Err(Error::Config(
                "filter labels must be unique (duplicate filter in the list)".to_owned(),
            ));
        }
        if self
            .filters
            .iter()
            .any(|k| matches!(k, FilterKind::Pf { particles: 0 }))
        {
            return Err(Error::Config(
                "particle filter needs at least one particle".to_owned(),
            ));
        }
        self.integrator.validate()?;
        Ok(())
    }

    /// Resolves the configured benchmark system.
    pub fn bench_system(&self) -> Result<BenchSystem> {
        BenchSystem::by_name(&self.system)
    }

    /// Builds the noise model these settings describe.
    pub fn noise_model(&self) -> Result<NoiseModel> {
        Ok(self.bench_system()?.noise(
            self.dt,
            self.process_noise,
            self.measurement_noise,
            self.reset_noise,
        ))
    }

    /// The initial belief (and initial-state sampling distribution).
    pub fn initial_belief(&self) -> Result<GaussianBelief> {
        let n = self.initial_mean.len();
        if self.initial_cov.len() != n || self.initial_cov.iter().any(|row| row.len() != n) {
            return Err(Error::Config(format!(
                "initial covariance must be {n}×{n} to match the mean"
            )));
        }
        let mean = DVector::from_column_slice(&self.initial_mean);
        let cov = DMatrix::from_fn(n, n, |r, c| self.initial_cov[r][c]);
        Ok(GaussianBelief::new(ModeId(self.initial_mode), mean, cov))
    }

    /// Number of steps after the initial one: rows are `k = 0..=steps()`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt + 1e-9).floor() as usize
    }
}

/// A dense matrix as a row-major vector of rows (the JSON form).
pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}
