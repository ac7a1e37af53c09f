//! Benchmark systems: a piecewise-constant planar flow and the ASLIP hopper.

mod aslip;
mod aslip_gen;
mod constant_flow;

pub use aslip::{Aslip, AslipMeasurement, AslipParams};
pub use constant_flow::{ConstantFlow, ConstantFlowMeasurement};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hybrid::{
    GaussianBelief, GaussianSampler, HybridSystem, MeasurementModel, ModeId, NoiseModel, Transition,
};

/// Isotropic noise model for [`ConstantFlow`]: full-step process covariance
/// `w_step·I₂` in both modes, measurement covariance `v·I₂`, reset covariance
/// `w_reset·I₂` on both transitions.
pub fn constant_flow_noise(dt: f64, w_step: f64, v: f64, w_reset: f64) -> NoiseModel {
    let eye = DMatrix::<f64>::identity(2, 2);
    NoiseModel::new(dt)
        .with_process(ModeId(1), &eye * w_step)
        .with_process(ModeId(2), &eye * w_step)
        .with_measurement(ModeId(1), &eye * v)
        .with_measurement(ModeId(2), &eye * v)
        .with_reset(Transition::new(1, 2), &eye * w_reset)
        .with_reset(Transition::new(2, 1), &eye * w_reset)
}

/// Isotropic noise model for [`Aslip`]: full-step process covariance
/// `w_step·I₈` in both modes, measurement covariance `v·I₆` (body pose and
/// velocity in either mode), reset covariance `w_reset·I₈` on both
/// transitions.
pub fn aslip_noise(dt: f64, w_step: f64, v: f64, w_reset: f64) -> NoiseModel {
    let eye8 = DMatrix::<f64>::identity(8, 8);
    let eye6 = DMatrix::<f64>::identity(6, 6);
    NoiseModel::new(dt)
        .with_process(ModeId(1), &eye8 * w_step)
        .with_process(ModeId(2), &eye8 * w_step)
        .with_measurement(ModeId(1), &eye6 * v)
        .with_measurement(ModeId(2), &eye6 * v)
        .with_reset(Transition::new(1, 2), &eye8 * w_reset)
        .with_reset(Transition::new(2, 1), &eye8 * w_reset)
}

/// One benchmark system bundled with its measurement model and the
/// conventions the Monte-Carlo harness needs: a common coordinate chart for
/// cross-mode error computation, a default initial belief, and constrained
/// initial-state sampling.
pub enum BenchSystem {
    ConstantFlow {
        system: ConstantFlow,
        measurement: ConstantFlowMeasurement,
    },
    Aslip {
        system: Aslip,
        measurement: AslipMeasurement,
    },
}

/// Attempts before constrained initial sampling gives up.
const MAX_SAMPLE_ATTEMPTS: usize = 100;

impl BenchSystem {
    /// Looks a system up by its stable name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "constant_flow" => Ok(Self::ConstantFlow {
                system: ConstantFlow,
                measurement: ConstantFlowMeasurement,
            }),
            "aslip" => {
                let system = Aslip::default();
                let measurement = system.measurement();
                Ok(Self::Aslip {
                    system,
                    measurement,
                })
            }
            other => Err(Error::Config(format!(
                "unknown system '{other}' (expected 'constant_flow' or 'aslip')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ConstantFlow { .. } => "constant_flow",
            Self::Aslip { .. } => "aslip",
        }
    }

    pub fn system(&self) -> &dyn HybridSystem {
        match self {
            Self::ConstantFlow { system, .. } => system,
            Self::Aslip { system, .. } => system,
        }
    }

    pub fn measurement(&self) -> &dyn MeasurementModel {
        match self {
            Self::ConstantFlow { measurement, .. } => measurement,
            Self::Aslip { measurement, .. } => measurement,
        }
    }

    /// Isotropic noise model with the dimensions this system expects; see
    /// [`constant_flow_noise`] and [`aslip_noise`].
    pub fn noise(&self, dt: f64, w_step: f64, v: f64, w_reset: f64) -> NoiseModel {
        match self {
            Self::ConstantFlow { .. } => constant_flow_noise(dt, w_step, v, w_reset),
            Self::Aslip { .. } => aslip_noise(dt, w_step, v, w_reset),
        }
    }

    /// The mode every experiment starts in.
    pub fn initial_mode(&self) -> ModeId {
        ModeId(1)
    }

    /// Dimension of the common chart used for cross-mode error computation.
    pub fn common_dim(&self) -> usize {
        match self {
            Self::ConstantFlow { .. } => 2,
            Self::Aslip { .. } => 8,
        }
    }

    /// Maps a state into the common chart. The planar system shares one chart
    /// across modes; for the hopper the common chart is the flight (body)
    /// chart, so stance states are converted through the coordinate change.
    pub fn common_state(&self, mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::ConstantFlow { .. } => x.clone(),
            Self::Aslip { system, .. } => system.body_coordinates(mode, x),
        }
    }

    /// Default initial belief of the benchmark configuration.
    ///
    /// The planar system starts left of the guard with an isotropic
    /// covariance; the hopper starts at the default launch state with a
    /// rank-6 covariance pushed forward from body-chart uncertainty (the toe
    /// coordinates are slaved to the body in flight, so their uncertainty is
    /// perfectly correlated with it).
    pub fn default_initial_belief(&self) -> GaussianBelief {
        match self {
            Self::ConstantFlow { .. } => GaussianBelief::new(
                ModeId(1),
                nalgebra::dvector![-1.23, 0.5],
                DMatrix::identity(2, 2) * 0.017,
            ),
            Self::Aslip { system, .. } => {
                let mean = system.default_initial_state();
                let sigma_body = DMatrix::identity(6, 6) * 1e-4;
                let cov = system.pushforward_body_covariance(&mean, &sigma_body);
                GaussianBelief::new(ModeId(1), mean, cov)
            }
        }
    }

    /// Draws an initial true state consistent with the belief and the
    /// system's domain constraints, by rejection (at most
    /// [`MAX_SAMPLE_ATTEMPTS`] tries).
    ///
    /// For the hopper the toe position is recomputed exactly from the sampled
    /// body pose: the belief covariance only enforces the flight constraint
    /// to first order, and simulated truths must satisfy it exactly.
    pub fn sample_initial_state<R: Rng + ?Sized>(
        &self,
        belief: &GaussianBelief,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let sampler = GaussianSampler::new(&belief.cov);
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let mut x = &belief.mean + sampler.sample(rng);
            match self {
                Self::ConstantFlow { .. } => {
                    if x[0] < 0.0 {
                        return Ok(x);
                    }
                }
                Self::Aslip { system, .. } => {
                    let toe = system.toe_for_body_pose(&x.rows(0, 3).into_owned());
                    x[3] = toe[0];
                    x[4] = toe[1];
                    if x[4] > 0.0 {
                        return Ok(x);
                    }
                }
            }
        }
        Err(Error::InitialSampling {
            attempts: MAX_SAMPLE_ATTEMPTS,
        })
    }
}
