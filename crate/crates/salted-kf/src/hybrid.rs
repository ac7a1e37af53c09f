//! The hybrid-dynamical-system abstraction and shared belief/noise types.
//!
//! A hybrid system is a finite set of modes, each with its own continuous
//! vector field, connected by transitions. Every transition carries a guard
//! function `g(t, x)`: the transition fires when the flow crosses into the
//! sublevel set `g <= 0` *transversally*, i.e. with `d/dt g = D_t g + D_x g ·
//! F` strictly negative at the crossing. The state is then re-initialized in
//! the target mode by the transition's reset map `R(t, x)`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Transversality margin: a crossing counts only if `d/dt g < -EPS` at the
/// crossing point. Guards with slower approach rates are treated as grazing.
pub const TRANSVERSALITY_EPS: f64 = 1e-9;

/// Identifier of a discrete mode.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ModeId(pub u32);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode {}", self.0)
    }
}

/// A directed transition between two modes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Transition {
    pub from: ModeId,
    pub to: ModeId,
}

impl Transition {
    pub fn new(from: u32, to: u32) -> Self {
        Self {
            from: ModeId(from),
            to: ModeId(to),
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} -> {})", self.from.0, self.to.0)
    }
}

/// A hybrid dynamical system: per-mode flows, guarded transitions, resets.
///
/// Guard convention: the guard set of a transition is the sublevel set
/// `g(t, x) <= 0`, and the flow must strictly decrease `g` at a crossing.
/// Implementations must define vector fields as smooth functions on a
/// neighborhood of each mode's domain (they are evaluated slightly past
/// guards during event location and linearization).
pub trait HybridSystem: Send + Sync {
    /// Short stable name used in configs and output metadata.
    fn name(&self) -> &str;

    /// All modes of the system.
    fn modes(&self) -> Vec<ModeId>;

    /// All directed transitions.
    fn transitions(&self) -> Vec<Transition>;

    /// State dimension of a mode's chart.
    fn state_dim(&self, mode: ModeId) -> usize;

    /// The mode's vector field F_I(t, x).
    fn vector_field(&self, mode: ModeId, t: f64, x: &DVector<f64>) -> DVector<f64>;

    /// Guard function g(t, x) of a transition.
    fn guard(&self, tr: Transition, t: f64, x: &DVector<f64>) -> f64;

    /// Guard gradients: (D_x g as a row vector, D_t g).
    fn guard_gradient(&self, tr: Transition, t: f64, x: &DVector<f64>) -> (RowDVector<f64>, f64);

    /// Reset map R(t, x) of a transition, valued in the target mode's chart.
    fn reset(&self, tr: Transition, t: f64, x: &DVector<f64>) -> DVector<f64>;

    /// Reset Jacobians: (D_x R, D_t R).
    fn reset_jacobian(
        &self,
        tr: Transition,
        t: f64,
        x: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>);

    /// Transitions leaving `mode`.
    fn outgoing(&self, mode: ModeId) -> Vec<Transition> {
        self.transitions()
            .into_iter()
            .filter(|tr| tr.from == mode)
            .collect()
    }
}

/// A guard that fired: which transition, the guard value, the approach rate.
#[derive(Clone, Debug)]
pub struct GuardHit {
    pub transition: Transition,
    pub guard_value: f64,
    pub transversality: f64,
}

/// Left-hand side of the transversality condition: `D_t g + D_x g · F_I`
/// evaluated at `(t, x)` with the *source* mode's vector field.
pub fn transversality_lhs(
    sys: &dyn HybridSystem,
    tr: Transition,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    check_dim("transversality_lhs", sys.state_dim(tr.from), x.len())?;
    let f = sys.vector_field(tr.from, t, x);
    let (dxg, dtg) = sys.guard_gradient(tr, t, x);
    Ok(dtg + (dxg * f)[0])
}

/// Checks whether any outgoing guard of `mode` is triggered at `(t, x)`.
///
/// A transition is triggered when its guard value satisfies `g <= 0` *and*
/// the flow is transverse (`d/dt g < -`[`TRANSVERSALITY_EPS`]). When several
/// transitions qualify, the one with the most negative approach rate wins.
pub fn guard_triggered(
    sys: &dyn HybridSystem,
    mode: ModeId,
    t: f64,
    x: &DVector<f64>,
) -> Result<Option<GuardHit>> {
    check_dim("guard_triggered", sys.state_dim(mode), x.len())?;
    let mut best: Option<GuardHit> = None;
    for tr in sys.outgoing(mode) {
        let g = sys.guard(tr, t, x);
        if g > 0.0 {
            continue;
        }
        let rate = transversality_lhs(sys, tr, t, x)?;
        if rate >= -TRANSVERSALITY_EPS {
            continue;
        }
        let better = match &best {
            Some(hit) => rate < hit.transversality,
            None => true,
        };
        if better {
            best = Some(GuardHit {
                transition: tr,
                guard_value: g,
                transversality: rate,
            });
        }
    }
    Ok(best)
}

/// A Gaussian belief over the state of one mode.
#[derive(Clone, Debug)]
pub struct GaussianBelief {
    pub mode: ModeId,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mode: ModeId, mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mode, mean, cov }
    }

    /// Replace the covariance by its symmetric part `(Σ + Σᵀ)/2`.
    pub fn symmetrize(&mut self) {
        self.cov = symmetric_part(&self.cov);
    }

    /// Validates the belief invariants: square covariance matching the mean
    /// dimension, symmetry to 1e-9 relative, and eigenvalues above
    /// `-1e-10 · ‖Σ‖` (positive semidefinite up to roundoff).
    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        check_dim("GaussianBelief covariance rows", n, self.cov.nrows())?;
        check_dim("GaussianBelief covariance cols", n, self.cov.ncols())?;
        let scale = self.cov.amax().max(1e-300);
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(Error::NumericalConditioning(format!(
                "covariance asymmetry {asym:.3e} exceeds 1e-9 of scale {scale:.3e}"
            )));
        }
        let eig = SymmetricEigen::new(symmetric_part(&self.cov));
        let min = eig.eigenvalues.min();
        if min < -1e-10 * scale {
            return Err(Error::NumericalConditioning(format!(
                "covariance indefinite: min eigenvalue {min:.3e} with scale {scale:.3e}"
            )));
        }
        Ok(())
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Measurement model: per-mode observation function and its Jacobian.
pub trait MeasurementModel: Send + Sync {
    fn measurement_dim(&self, mode: ModeId) -> usize;

    /// h_I(x).
    fn measure(&self, mode: ModeId, x: &DVector<f64>) -> DVector<f64>;

    /// D_x h_I(x).
    fn jacobian(&self, mode: ModeId, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Noise specification for one system.
///
/// Process noise follows the per-step convention: the configured `W_{I,Δ}` is
/// the covariance the step-constant disturbance contributes over one full
/// timestep `Δ`. Because the disturbance is constant within a step, its
/// integrated effect scales linearly in time and its covariance
/// quadratically, so a sub-step of length `d` uses `W_rate · d²` with
/// `W_rate = W_{I,Δ}/Δ²`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    dt: f64,
    process: BTreeMap<ModeId, DMatrix<f64>>,
    measurement: BTreeMap<ModeId, DMatrix<f64>>,
    reset: BTreeMap<Transition, DMatrix<f64>>,
}

impl NoiseModel {
    /// Creates a noise model for a nominal timestep `dt`.
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            process: BTreeMap::new(),
            measurement: BTreeMap::new(),
            reset: BTreeMap::new(),
        }
    }

    /// Nominal timestep the per-step process covariances refer to.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Sets the full-step process covariance `W_{I,Δ}` of a mode.
    pub fn with_process(mut self, mode: ModeId, w: DMatrix<f64>) -> Self {
        self.process.insert(mode, w);
        self
    }

    /// Sets the measurement covariance `V_I` of a mode.
    pub fn with_measurement(mut self, mode: ModeId, v: DMatrix<f64>) -> Self {
        self.measurement.insert(mode, v);
        self
    }

    /// Sets the reset covariance `W_R` of a transition (default: zero).
    pub fn with_reset(mut self, tr: Transition, w: DMatrix<f64>) -> Self {
        self.reset.insert(tr, w);
        self
    }

    /// Full-step process covariance `W_{I,Δ}`.
    pub fn process_full_step(&self, mode: ModeId) -> Result<&DMatrix<f64>> {
        self.process
            .get(&mode)
            .ok_or_else(|| Error::UnknownMode(format!("no process covariance for {mode}")))
    }

    /// Rate covariance of the step-constant disturbance: `W_{I,Δ}/Δ²`.
    pub fn process_rate(&self, mode: ModeId) -> Result<DMatrix<f64>> {
        Ok(self.process_full_step(mode)? / (self.dt * self.dt))
    }

    /// Process covariance accumulated over a sub-step of length `d`.
    pub fn process_substep(&self, mode: ModeId, d: f64) -> Result<DMatrix<f64>> {
        let scale = d / self.dt;
        Ok(self.process_full_step(mode)? * (scale * scale))
    }

    /// Measurement covariance `V_I`.
    pub fn measurement_cov(&self, mode: ModeId) -> Result<&DMatrix<f64>> {
        self.measurement
            .get(&mode)
            .ok_or_else(|| Error::UnknownMode(format!("no measurement covariance for {mode}")))
    }

    /// Reset covariance `W_R` of a transition; zero when not configured.
    pub fn reset_cov(&self, tr: Transition, dim_to: usize) -> DMatrix<f64> {
        self.reset
            .get(&tr)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(dim_to, dim_to))
    }
}

/// Draws from `N(0, Σ)` for a fixed positive-semidefinite `Σ`.
///
/// The factor is a symmetric square root obtained by eigendecomposition, so
/// singular covariances (exactly constrained directions, or zero noise) are
/// handled without special cases. One standard-normal variate is consumed per
/// dimension on every draw, keeping RNG streams independent of the
/// covariance's rank.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetric_part(cov));
        let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Self {
            factor: &eig.eigenvectors * sqrt,
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
