//! State estimators for hybrid systems.
//!
//! Two Gaussian filters share one control flow and differ only in how the
//! covariance crosses a reset:
//!
//! - **Salted Kalman filter (SKF)** — covariance mapped by the saltation
//!   matrix, which accounts for nearby trajectories reaching the guard at
//!   different times;
//! - **Reset-Jacobian baseline (JRKF)** — covariance mapped by the bare
//!   Jacobian of the reset map.
//!
//! The a-priori step integrates the mean until the next measurement time,
//! splitting the step at every guard crossing of the mean: between events the
//! covariance follows the linearized flow (`Σ ← ÂΣÂᵀ + W`), and at each event
//! the moment update of [`crate::saltation`] is applied. The a-posteriori step
//! is a standard EKF measurement update, followed by a single guard check on
//! the corrected mean — the correction itself can pull the mean across a
//! guard, in which case one reset is applied.
//!
//! The third estimator is a bootstrap [particle filter](particle) whose
//! particles follow the same stochastic dynamics as the ground-truth
//! simulator.

mod particle;

pub use particle::{pf_estimate, pf_step, Particle, ParticleSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{
    check_dim, guard_triggered, symmetric_part, GaussianBelief, HybridSystem, MeasurementModel,
    NoiseModel, Transition,
};
use crate::integrator::{
    flow_jacobian, integrate_until_event, IntegratorConfig, MAX_EVENTS_PER_STEP,
};
use crate::saltation::{reset_moment_update, CovarianceMap};

/// Which estimator to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Salted Kalman filter: resets mapped by the saltation matrix.
    Skf,
    /// Kalman filter that maps resets by the reset Jacobian alone.
    Jrkf,
    /// Bootstrap particle filter with the given particle count.
    Pf { particles: usize },
}

impl FilterKind {
    /// Short label used in CSV columns, summaries, and CLI arguments.
    pub fn label(&self) -> String {
        match self {
            FilterKind::Skf => "skf".to_owned(),
            FilterKind::Jrkf => "jrkf".to_owned(),
            FilterKind::Pf { particles } => format!("pf{particles}"),
        }
    }

    /// The covariance map a Gaussian filter applies across resets; `None`
    /// for the particle filter.
    pub fn covariance_map(&self) -> Option<CovarianceMap> {
        match self {
            FilterKind::Skf => Some(CovarianceMap::Saltation),
            FilterKind::Jrkf => Some(CovarianceMap::ResetJacobian),
            FilterKind::Pf { .. } => None,
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// A reset applied by a Gaussian filter during prediction, together with the
/// belief at the instant the mean reached the guard (before the reset).
#[derive(Clone, Debug)]
pub struct FilterEvent {
    pub transition: Transition,
    pub t: f64,
    pub belief_before: GaussianBelief,
}

/// A-priori update: propagates a Gaussian belief from `t_k` to `t_k + dt`.
///
/// The mean is integrated through the true hybrid dynamics; whenever it
/// crosses a guard, the covariance accumulated on the sub-segment
/// (`Σ ← ÂΣÂᵀ + W`, with `W` scaled to the sub-segment length) is pushed
/// through the reset moment update, and integration resumes in the new mode.
/// Returns the predicted belief and the chronological list of resets applied.
pub fn skf_predict(
    sys: &dyn HybridSystem,
    noise: &NoiseModel,
    belief: &GaussianBelief,
    t_k: f64,
    dt: f64,
    map: CovarianceMap,
    cfg: &IntegratorConfig,
) -> Result<(GaussianBelief, Vec<FilterEvent>)> {
    check_dim(
        "skf_predict state",
        sys.state_dim(belief.mode),
        belief.mean.len(),
    )?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "prediction step must be positive, got {dt}"
        )));
    }
    let t_end = t_k + dt;
    let mut mode = belief.mode;
    let mut mean = belief.mean.clone();
    let mut cov = belief.cov.clone();
    let mut t = t_k;
    let mut events = Vec::new();
    loop {
        let (t1, x1, event) = integrate_until_event(sys, mode, t, &mean, t_end, cfg)?;
        let d = t1 - t;
        if d > 0.0 {
            let a = flow_jacobian(sys, mode, t, &mean, d, cfg)?;
            cov = symmetric_part(&(&a * &cov * a.transpose() + noise.process_substep(mode, d)?));
        }
        match event {
            None => return Ok((GaussianBelief::new(mode, x1, cov), events)),
            Some(ev) => {
                if events.len() >= MAX_EVENTS_PER_STEP {
                    return Err(Error::EventCap {
                        count: events.len() + 1,
                        t: ev.t_impact,
                    });
                }
                let before = GaussianBelief::new(mode, ev.x_pre.clone(), cov.clone());
                let w_r = noise.reset_cov(ev.transition, sys.state_dim(ev.transition.to));
                let after =
                    reset_moment_update(sys, ev.transition, ev.t_impact, &before, &w_r, map)?;
                events.push(FilterEvent {
                    transition: ev.transition,
                    t: ev.t_impact,
                    belief_before: before,
                });
                mode = after.mode;
                mean = after.mean;
                cov = after.cov;
                t = t1;
                if t >= t_end {
                    return Ok((GaussianBelief::new(mode, mean, cov), events));
                }
            }
        }
    }
}

/// Kalman gain `K = ΣCᵀ(CΣCᵀ + V)⁻¹`, computed through a Cholesky solve of
/// the innovation covariance rather than an explicit inverse.
pub fn kalman_gain(cov: &DMatrix<f64>, c: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let m = c.nrows();
    check_dim("kalman_gain measurement map columns", n, c.ncols())?;
    check_dim("kalman_gain measurement noise rows", m, v.nrows())?;
    check_dim("kalman_gain measurement noise cols", m, v.ncols())?;
    let cs = c * cov;
    let s = symmetric_part(&(&cs * c.transpose() + v));
    let chol = s.cholesky().ok_or_else(|| {
        Error::NumericalConditioning("innovation covariance is not positive definite".to_owned())
    })?;
    // K = Σ Cᵀ S⁻¹ = (S⁻¹ C Σ)ᵀ because Σ and S are symmetric.
    Ok(chol.solve(&cs).transpose())
}

/// A-posteriori update: EKF measurement correction at the prior mean,
/// followed by a single guard check.
///
/// If the corrected mean lands past a guard with transverse flow, one reset
/// moment update is applied (at most one — the correction is not subdivided).
pub fn skf_update(
    sys: &dyn HybridSystem,
    noise: &NoiseModel,
    meas: &dyn MeasurementModel,
    prior: &GaussianBelief,
    y: &DVector<f64>,
    t: f64,
    map: CovarianceMap,
) -> Result<GaussianBelief> {
    let mode = prior.mode;
    check_dim(
        "skf_update measurement",
        meas.measurement_dim(mode),
        y.len(),
    )?;
    let c = meas.jacobian(mode, &prior.mean);
    let v = noise.measurement_cov(mode)?;
    let k = kalman_gain(&prior.cov, &c, v)?;
    let innovation = y - meas.measure(mode, &prior.mean);
    let mean = &prior.mean + &k * innovation;
    let cov = symmetric_part(&(&prior.cov - &k * (&c * &prior.cov)));
    let updated = GaussianBelief::new(mode, mean, cov);
    match guard_triggered(sys, mode, t, &updated.mean)? {
        Some(hit) => {
            let w_r = noise.reset_cov(hit.transition, sys.state_dim(hit.transition.to));
            reset_moment_update(sys, hit.transition, t, &updated, &w_r, map)
        }
        None => Ok(updated),
    }
}

/// One full filter step `t_k → t_k + dt`: prediction, then correction with
/// the measurement `y` taken at `t_k + dt`.
///
/// `kind` selects the covariance map (SKF or JRKF); the particle filter has
/// its own step function, [`pf_step`].
#[allow(clippy::too_many_arguments)]
pub fn skf_step(
    sys: &dyn HybridSystem,
    noise: &NoiseModel,
    meas: &dyn MeasurementModel,
    belief: &GaussianBelief,
    t_k: f64,
    dt: f64,
    y: &DVector<f64>,
    kind: FilterKind,
    cfg: &IntegratorConfig,
) -> Result<(GaussianBelief, Vec<FilterEvent>)> {
    let map = kind
        .covariance_map()
        .ok_or_else(|| Error::Config(format!("{kind} does not run as a Gaussian filter")))?;
    let (prior, events) = skf_predict(sys, noise, belief, t_k, dt, map, cfg)?;
    let post = skf_update(sys, noise, meas, &prior, y, t_k + dt, map)?;
    Ok((post, events))
}
