//! Bootstrap particle filter for hybrid systems.
//!
//! Particles carry a mode label alongside their state and are propagated by
//! the same stochastic dynamics as the ground-truth simulator — guard
//! crossings, resets, and reset noise included — so the proposal is the
//! system's own transition density. Weights are updated with the Gaussian
//! measurement likelihood of each particle's mode; a particle whose mode
//! implies a different measurement dimension than the received measurement
//! gets zero likelihood (the dimension itself identifies the mode family).
//! Systematic resampling runs every step.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hybrid::{
    GaussianBelief, GaussianSampler, HybridSystem, MeasurementModel, ModeId, NoiseModel,
};
use crate::integrator::{propagate_noisy_step, IntegratorConfig, NoiseSamplers};

/// One weighted hypothesis: a mode, a state in that mode's chart, a weight.
#[derive(Clone, Debug)]
pub struct Particle {
    pub mode: ModeId,
    pub state: DVector<f64>,
    pub weight: f64,
}

/// The particle-filter belief: a set of weighted particles.
#[derive(Clone, Debug)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
}

impl ParticleSet {
    /// Draws `n` equally weighted particles from a Gaussian belief.
    pub fn from_belief<R: Rng + ?Sized>(
        belief: &GaussianBelief,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(
                "particle count must be at least 1".to_owned(),
            ));
        }
        let sampler = GaussianSampler::new(&belief.cov);
        let particles = (0..n)
            .map(|_| Particle {
                mode: belief.mode,
                state: &belief.mean + sampler.sample(rng),
                weight: 1.0 / n as f64,
            })
            .collect();
        Ok(Self { particles })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Checks the set invariants: nonempty, weights nonnegative and summing
    /// to 1 within 1e-9, every state dimensioned for its mode.
    pub fn validate(&self, sys: &dyn HybridSystem) -> Result<()> {
        if self.particles.is_empty() {
            return Err(Error::Config("particle set is empty".to_owned()));
        }
        let mut total = 0.0;
        for p in &self.particles {
            if !(p.weight >= 0.0) {
                return Err(Error::Config(format!(
                    "negative particle weight {}",
                    p.weight
                )));
            }
            total += p.weight;
            crate::hybrid::check_dim("particle state", sys.state_dim(p.mode), p.state.len())?;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "particle weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// Per-mode Gaussian log-likelihood evaluator for the measurement noise.
struct LogLikelihood {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl LogLikelihood {
    fn new(noise: &NoiseModel, mode: ModeId) -> Result<Self> {
        let v = noise.measurement_cov(mode)?;
        let chol = v.clone().cholesky().ok_or_else(|| {
            Error::NumericalConditioning(format!(
                "measurement covariance of {mode} is not positive definite"
            ))
        })?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let dim = v.nrows() as f64;
        let log_norm = -0.5 * (log_det + dim * (2.0 * std::f64::consts::PI).ln());
        Ok(Self { chol, log_norm })
    }

    fn log_density(&self, residual: &DVector<f64>) -> f64 {
        let solved = self.chol.solve(residual);
        self.log_norm - 0.5 * residual.dot(&solved)
    }
}

/// One particle-filter step `t_k → t_k + dt`: propagate every particle
/// through the noisy hybrid dynamics, reweight by the likelihood of `y`
/// (taken at `t_k + dt`), normalize, and systematically resample.
///
/// Fails with [`Error::ParticleDegeneracy`] when every particle has zero
/// likelihood — the trial, not the batch, is expected to absorb this.
#[allow(clippy::too_many_arguments)]
pub fn pf_step<R: Rng + ?Sized>(
    sys: &dyn HybridSystem,
    noise: &NoiseModel,
    meas: &dyn MeasurementModel,
    pset: &ParticleSet,
    t_k: f64,
    dt: f64,
    y: &DVector<f64>,
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<ParticleSet> {
    if pset.is_empty() {
        return Err(Error::Config("particle set is empty".to_owned()));
    }
    let samplers = NoiseSamplers::new(sys, noise)?;
    let mut likelihoods: BTreeMap<ModeId, LogLikelihood> = BTreeMap::new();
    let mut events = Vec::new();

    let n = pset.len();
    let mut propagated = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for p in &pset.particles {
        events.clear();
        let (mode, state) = propagate_noisy_step(
            sys,
            cfg,
            &samplers,
            p.mode,
            t_k,
            &p.state,
            dt,
            rng,
            &mut events,
        )?;
        let log_lik = if meas.measurement_dim(mode) == y.len() {
            let lik = match likelihoods.entry(mode) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(LogLikelihood::new(noise, mode)?),
            };
            let residual = y - meas.measure(mode, &state);
            lik.log_density(&residual)
        } else {
            // A measurement of the wrong dimensionality cannot have come
            // from this particle's mode.
            f64::NEG_INFINITY
        };
        log_weights.push(p.weight.ln() + log_lik);
        propagated.push(Particle {
            mode,
            state,
            weight: 0.0,
        });
    }

    // Normalize in log space so a harsh but survivable step (all likelihoods
    // tiny) does not underflow.
    let max_lw = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::ParticleDegeneracy(format!(
            "all {n} particles have zero measurement likelihood at t = {}",
            t_k + dt
        )));
    }
    let mut total = 0.0;
    for (p, lw) in propagated.iter_mut().zip(&log_weights) {
        p.weight = (lw - max_lw).exp();
        total += p.weight;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ParticleDegeneracy(format!(
            "particle weights collapsed (total {total}) at t = {}",
            t_k + dt
        )));
    }
    for p in &mut propagated {
        p.weight /= total;
    }

    Ok(systematic_resample(&propagated, rng))
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers.
/// Preserves the particle count and returns uniform weights.
fn systematic_resample<R: Rng + ?Sized>(particles: &[Particle], rng: &mut R) -> ParticleSet {
    let n = particles.len();
    let offset: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut below = 0.0; // total weight strictly before index `i`
    let mut i = 0;
    for j in 0..n {
        let pointer = offset + j as f64 / n as f64;
        while i + 1 < n && below + particles[i].weight < pointer {
            below += particles[i].weight;
            i += 1;
        }
        out.push(Particle {
            weight: 1.0 / n as f64,
            ..particles[i].clone()
        });
    }
    ParticleSet { particles: out }
}

/// Point estimate of a particle set: the majority-weight mode, and the
/// weighted mean of that mode's particles after mapping each through
/// `to_common` (the chart shared by all modes, in which errors are scored).
pub fn pf_estimate(
    pset: &ParticleSet,
    to_common: impl Fn(ModeId, &DVector<f64>) -> DVector<f64>,
) -> Result<(ModeId, DVector<f64>)> {
    if pset.is_empty() {
        return Err(Error::Config("particle set is empty".to_owned()));
    }
    let mut mass: BTreeMap<ModeId, f64> = BTreeMap::new();
    for p in &pset.particles {
        *mass.entry(p.mode).or_insert(0.0) += p.weight;
    }
    // Ascending-key iteration with a strict comparison: ties break toward
    // the lower mode id, deterministically.
    let mut best_mode = None;
    let mut best_mass = f64::NEG_INFINITY;
    for (&mode, &m) in &mass {
        if m > best_mass {
            best_mode = Some(mode);
            best_mass = m;
        }
    }
    let mode = best_mode.expect("nonempty particle set");
    if !(best_mass > 0.0) {
        return Err(Error::ParticleDegeneracy(
            "all particle weights are zero".to_owned(),
        ));
    }
    let mut acc: Option<DVector<f64>> = None;
    for p in &pset.particles {
        if p.mode != mode {
            continue;
        }
        let mapped = to_common(mode, &p.state) * p.weight;
        acc = Some(match acc {
            Some(a) => a + mapped,
            None => mapped,
        });
    }
    Ok((mode, acc.expect("majority mode has particles") / best_mass))
}
