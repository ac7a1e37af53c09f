//! Adaptive integration of mode vector fields with guard event location.
//!
//! The stepper is Dormand–Prince RK4(5) with proportional step control. After
//! every accepted step each outgoing guard is checked for a sign change into
//! its sublevel set; the earliest crossing is located by bisection on the
//! step's dense output and reported as a [`TransitionEvent`] (the reset is
//! *not* applied here — callers decide how to continue). Sign changes whose
//! approach rate fails the transversality margin are grazing contacts and do
//! not fire.
//!
//! Also here: [`flow_jacobian`] (finite-difference linearization of the
//! time-`Δ` flow map on a frozen step mesh) and [`simulate_execution`] (noisy
//! ground-truth rollout following the step-constant disturbance convention).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hybrid::{
    check_dim, GaussianSampler, HybridSystem, MeasurementModel, ModeId, NoiseModel, Transition,
    TRANSVERSALITY_EPS,
};

/// Tolerances and limits of the adaptive stepper.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Relative error tolerance per step.
    pub rel_tol: f64,
    /// Absolute error tolerance per step.
    pub abs_tol: f64,
    /// Time tolerance for event location (bisection bracket width).
    pub event_tol: f64,
    /// Largest step the controller may take. Also bounds how coarsely guard
    /// signs are sampled, so keep it below the fastest guard oscillation.
    pub max_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            event_tol: 1e-10,
            max_step: 0.05,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("event_tol", self.event_tol),
            ("max_step", self.max_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "integrator {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A located hybrid transition.
#[derive(Clone, Debug)]
pub struct TransitionEvent {
    pub transition: Transition,
    /// Impact time t̄, located to within the event tolerance.
    pub t_impact: f64,
    /// Pre-impact state on the guard (in the source mode's chart).
    pub x_pre: DVector<f64>,
    /// Post-reset state R(t̄, x_pre) (in the target mode's chart).
    pub x_post: DVector<f64>,
    /// Guard value at (t_impact, x_pre); near zero by construction.
    pub guard_value: f64,
    /// Approach rate d/dt g at (t_impact, x_pre); strictly negative.
    pub transversality: f64,
}

// Dormand–Prince RK4(5) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the 5th- and 4th-order weights (error estimator).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 1_000_000;
pub(crate) const MAX_EVENTS_PER_STEP: usize = 32;

/// One attempted RK step: new state, scaled error norm, derivative at the end.
fn dp45_attempt<F>(
    field: &F,
    t0: f64,
    x0: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    cfg: &IntegratorConfig,
) -> (DVector<f64>, f64, DVector<f64>)
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + ?Sized,
{
    let n = x0.len();
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f0.clone());
    for s in 0..6 {
        let mut xs = x0.clone();
        for (j, aj) in A[s].iter().enumerate() {
            if *aj != 0.0 {
                xs.axpy(h * aj, &k[j], 1.0);
            }
        }
        k.push(field(t0 + C[s + 1] * h, &xs));
    }
    // Stage 7 is evaluated at the 5th-order solution (FSAL).
    let x1 = {
        let mut xs = x0.clone();
        for (j, bj) in A[5].iter().enumerate() {
            if *bj != 0.0 {
                xs.axpy(h * bj, &k[j], 1.0);
            }
        }
        xs
    };
    let f1 = k[6].clone();
    let mut err_sq = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for (j, ej) in E.iter().enumerate() {
            e += ej * k[j][i];
        }
        e *= h;
        let sc = cfg.abs_tol + cfg.rel_tol * x0[i].abs().max(x1[i].abs());
        err_sq += (e / sc) * (e / sc);
    }
    let err = (err_sq / n as f64).sqrt();
    (x1, err, f1)
}

/// Cubic Hermite interpolant over one accepted step.
struct Dense<'a> {
    t0: f64,
    h: f64,
    x0: &'a DVector<f64>,
    f0: &'a DVector<f64>,
    x1: &'a DVector<f64>,
    f1: &'a DVector<f64>,
}

impl Dense<'_> {
    fn eval(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        let mut out = self.x0 * (2.0 * s3 - 3.0 * s2 + 1.0);
        out.axpy(self.h * (s3 - 2.0 * s2 + s), self.f0, 1.0);
        out.axpy(-2.0 * s3 + 3.0 * s2, self.x1, 1.0);
        out.axpy(self.h * (s3 - s2), self.f1, 1.0);
        out
    }
}

fn initial_step(span: f64, x0: &DVector<f64>, f0: &DVector<f64>, cfg: &IntegratorConfig) -> f64 {
    let d1 = f0.amax();
    let guess = if d1 > 1e-300 {
        0.01 * (x0.amax() + 1.0) / d1
    } else {
        span
    };
    guess.max(1e-6 * span).min(span).min(cfg.max_step)
}

/// Core driver shared by all integration entry points.
///
/// `bias` adds a constant vector to the field (the step-constant disturbance
/// of noisy simulation); guards and transversality then see the biased flow.
/// With `detect_events` unset the flow is integrated straight through guard
/// surfaces (used for flow linearization, where the saltation matrix — not
/// the integrator — accounts for the crossing). `mesh_out` records accepted
/// `(t, h)` pairs so perturbed replays can reuse the exact step sequence.
#[allow(clippy::too_many_arguments)]
fn integrate_inner(
    sys: &dyn HybridSystem,
    mode: ModeId,
    bias: Option<&DVector<f64>>,
    t0: f64,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
    detect_events: bool,
    mut mesh_out: Option<&mut Vec<(f64, f64)>>,
) -> Result<(f64, DVector<f64>, Option<TransitionEvent>)> {
    check_dim("integrate state", sys.state_dim(mode), x0.len())?;
    cfg.validate()?;
    if !(t_end > t0) {
        return Err(Error::IntegrationFailure {
            t: t0,
            reason: format!("empty integration span [{t0}, {t_end}]"),
        });
    }

    let field = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let mut f = sys.vector_field(mode, t, x);
        if let Some(b) = bias {
            f += b;
        }
        f
    };
    let rate_at = |tr: Transition, t: f64, x: &DVector<f64>| -> f64 {
        let (dxg, dtg) = sys.guard_gradient(tr, t, x);
        dtg + (dxg * field(t, x))[0]
    };

    let outgoing = if detect_events {
        sys.outgoing(mode)
    } else {
        Vec::new()
    };

    // A guard already satisfied (and transverse) at the segment start is an
    // immediate event: the caller gets a zero-length segment to reset from.
    if detect_events {
        let mut best: Option<(Transition, f64, f64)> = None;
        for tr in &outgoing {
            let g = sys.guard(*tr, t0, x0);
            if g <= 0.0 {
                let r = rate_at(*tr, t0, x0);
                if r < -TRANSVERSALITY_EPS && best.is_none_or(|(_, _, br)| r < br) {
                    best = Some((*tr, g, r));
                }
            }
        }
        if let Some((tr, g, r)) = best {
            let x_post = sys.reset(tr, t0, x0);
            return Ok((
                t0,
                x0.clone(),
                Some(TransitionEvent {
                    transition: tr,
                    t_impact: t0,
                    x_pre: x0.clone(),
                    x_post,
                    guard_value: g,
                    transversality: r,
                }),
            ));
        }
    }

    let mut t = t0;
    let mut x = x0.clone();
    let mut f0 = field(t, &x);
    let mut g_prev: Vec<f64> = outgoing.iter().map(|tr| sys.guard(*tr, t, &x)).collect();
    let mut h = initial_step(t_end - t0, &x, &f0, cfg);
    let mut n_attempts = 0usize;

    loop {
        n_attempts += 1;
        if n_attempts > MAX_STEPS {
            return Err(Error::IntegrationFailure {
                t,
                reason: format!("exceeded {MAX_STEPS} step attempts"),
            });
        }
        let remaining = t_end - t;
        let final_step = h >= remaining;
        if final_step {
            h = remaining;
        }

        let (x1, err, f1) = dp45_attempt(&field, t, &x, &f0, h, cfg);

        if !err.is_finite() {
            h *= 0.25;
            if h < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "non-finite error estimate at vanishing step size".into(),
                });
            }
            continue;
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            if h < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: "step size underflow".into(),
                });
            }
            continue;
        }

        // Step accepted.
        let t1 = if final_step { t_end } else { t + h };

        if detect_events {
            let dense = Dense {
                t0: t,
                h: t1 - t,
                x0: &x,
                f0: &f0,
                x1: &x1,
                f1: &f1,
            };
            let mut best: Option<(Transition, f64, DVector<f64>, f64, f64)> = None;
            for (i, tr) in outgoing.iter().enumerate() {
                let g1 = sys.guard(*tr, t1, &x1);
                if g_prev[i] > 0.0 && g1 <= 0.0 {
                    // Bisect the dense output down to the event tolerance,
                    // keeping the bracket end that satisfies g <= 0.
                    let (mut lo, mut hi) = (t, t1);
                    let mut iters = 0;
                    while hi - lo > cfg.event_tol && iters < 200 {
                        let mid = 0.5 * (lo + hi);
                        if sys.guard(*tr, mid, &dense.eval(mid)) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        iters += 1;
                    }
                    let x_star = dense.eval(hi);
                    let r = rate_at(*tr, hi, &x_star);
                    if r >= -TRANSVERSALITY_EPS {
                        // Grazing contact: not an event.
                        continue;
                    }
                    let g_star = sys.guard(*tr, hi, &x_star);
                    let earlier = match &best {
                        Some((_, tb, _, _, rb)) => {
                            hi < *tb || (hi <= *tb + cfg.event_tol && r < *rb)
                        }
                        None => true,
                    };
                    if earlier {
                        best = Some((*tr, hi, x_star, g_star, r));
                    }
                }
            }
            if let Some((tr, t_star, x_star, g_star, r)) = best {
                let x_post = sys.reset(tr, t_star, &x_star);
                return Ok((
                    t_star,
                    x_star.clone(),
                    Some(TransitionEvent {
                        transition: tr,
                        t_impact: t_star,
                        x_pre: x_star,
                        x_post,
                        guard_value: g_star,
                        transversality: r,
                    }),
                ));
            }
            for (i, tr) in outgoing.iter().enumerate() {
                g_prev[i] = sys.guard(*tr, t1, &x1);
            }
        }

        if let Some(mesh) = mesh_out.as_deref_mut() {
            mesh.push((t, t1 - t));
        }

        x = x1;
        f0 = f1;
        t = t1;
        if t >= t_end {
            return Ok((t_end, x, None));
        }
        let grow = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * grow).min(cfg.max_step);
    }
}

/// Integrates `dx/dt = F_mode(t, x)` from `(t0, x0)` until `t_end` or the
/// first transverse guard crossing, whichever comes first.
///
/// On an event, returns `(t̄, x_pre, Some(event))` — the reset is reported in
/// the event but not applied to the returned state. Otherwise returns
/// `(t_end, x(t_end), None)`.
pub fn integrate_until_event(
    sys: &dyn HybridSystem,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, DVector<f64>, Option<TransitionEvent>)> {
    integrate_inner(sys, mode, None, t0, x0, t_end, cfg, true, None)
}

/// [`integrate_until_event`] with a constant disturbance added to the field.
pub(crate) fn integrate_until_event_biased(
    sys: &dyn HybridSystem,
    mode: ModeId,
    bias: &DVector<f64>,
    t0: f64,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<(f64, DVector<f64>, Option<TransitionEvent>)> {
    integrate_inner(sys, mode, Some(bias), t0, x0, t_end, cfg, true, None)
}

/// Replays a recorded step mesh with plain (non-adaptive) RK steps.
fn integrate_on_mesh(
    sys: &dyn HybridSystem,
    mode: ModeId,
    x0: &DVector<f64>,
    mesh: &[(f64, f64)],
    cfg: &IntegratorConfig,
) -> DVector<f64> {
    let field = |t: f64, x: &DVector<f64>| sys.vector_field(mode, t, x);
    let mut x = x0.clone();
    if mesh.is_empty() {
        return x;
    }
    let mut f0 = field(mesh[0].0, &x);
    for &(t, h) in mesh {
        let (x1, _, f1) = dp45_attempt(&field, t, &x, &f0, h, cfg);
        x = x1;
        f0 = f1;
    }
    x
}

/// Jacobian `Â_{I,Δ}` of the time-`Δ` flow map of one mode, by central finite
/// differences with per-coordinate step `δⱼ = 1e-6·(1 + |x0ⱼ|)`.
///
/// The nominal trajectory fixes an adaptive step mesh; every perturbed flow
/// is replayed on that frozen mesh so truncation errors cancel in the
/// differences. The segment must not contain a hybrid event (callers split
/// at events); a transverse guard crossing strictly inside the window is
/// reported as [`Error::LinearizationAcrossEvent`]. Segments are allowed to
/// *end* on a guard — exactly how prediction steps are split — so the check
/// carries a tolerance proportional to the guard's approach rate.
pub fn flow_jacobian(
    sys: &dyn HybridSystem,
    mode: ModeId,
    t0: f64,
    x0: &DVector<f64>,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let n = sys.state_dim(mode);
    check_dim("flow_jacobian state", n, x0.len())?;
    if dt == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let mut mesh = Vec::new();
    let (t1, x_end, _) = integrate_inner(
        sys,
        mode,
        None,
        t0,
        x0,
        t0 + dt,
        cfg,
        false,
        Some(&mut mesh),
    )?;
    for tr in sys.outgoing(mode) {
        let g0 = sys.guard(tr, t0, x0);
        let g1 = sys.guard(tr, t1, &x_end);
        if g0 > 0.0 && g1 < 0.0 {
            let (dxg, dtg) = sys.guard_gradient(tr, t1, &x_end);
            let r = dtg + (dxg * sys.vector_field(mode, t1, &x_end))[0];
            let slack = 1e3 * cfg.event_tol * (1.0 + r.abs());
            if g1 < -slack && r < -TRANSVERSALITY_EPS {
                return Err(Error::LinearizationAcrossEvent { t0, t1 });
            }
        }
    }
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let delta = 1e-6 * (1.0 + x0[j].abs());
        let mut xp = x0.clone();
        xp[j] += delta;
        let mut xm = x0.clone();
        xm[j] -= delta;
        let phi_p = integrate_on_mesh(sys, mode, &xp, &mesh, cfg);
        let phi_m = integrate_on_mesh(sys, mode, &xm, &mesh, cfg);
        jac.set_column(j, &((phi_p - phi_m) / (2.0 * delta)));
    }
    Ok(jac)
}

/// Pre-built samplers for every noise source of a system.
pub(crate) struct NoiseSamplers {
    process_rate: BTreeMap<ModeId, GaussianSampler>,
    reset: BTreeMap<Transition, GaussianSampler>,
    measurement: BTreeMap<ModeId, GaussianSampler>,
}

impl NoiseSamplers {
    pub fn new(sys: &dyn HybridSystem, noise: &NoiseModel) -> Result<Self> {
        let mut process_rate = BTreeMap::new();
        let mut measurement = BTreeMap::new();
        let mut reset = BTreeMap::new();
        for mode in sys.modes() {
            process_rate.insert(mode, GaussianSampler::new(&noise.process_rate(mode)?));
            measurement.insert(mode, GaussianSampler::new(noise.measurement_cov(mode)?));
        }
        for tr in sys.transitions() {
            let dim = sys.state_dim(tr.to);
            reset.insert(tr, GaussianSampler::new(&noise.reset_cov(tr, dim)));
        }
        Ok(Self {
            process_rate,
            reset,
            measurement,
        })
    }

    pub fn measurement(&self, mode: ModeId) -> &GaussianSampler {
        &self.measurement[&mode]
    }
}

/// Advances one true state by one timestep of the stochastic dynamics: a
/// disturbance `ω ~ N(0, W_rate)` held constant over the step is added to the
/// field; each guard crossing applies the reset plus reset noise and draws a
/// fresh disturbance for the remainder of the step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate_noisy_step<R: Rng + ?Sized>(
    sys: &dyn HybridSystem,
    cfg: &IntegratorConfig,
    samplers: &NoiseSamplers,
    mode: ModeId,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
    rng: &mut R,
    events: &mut Vec<TransitionEvent>,
) -> Result<(ModeId, DVector<f64>)> {
    let t_end = t + dt;
    let mut mode = mode;
    let mut t_cur = t;
    let mut x_cur = x.clone();
    let mut omega = samplers.process_rate[&mode].sample(rng);
    let mut fired = 0usize;
    loop {
        let (t_stop, x_stop, event) =
            integrate_until_event_biased(sys, mode, &omega, t_cur, &x_cur, t_end, cfg)?;
        match event {
            Some(ev) => {
                fired += 1;
                if fired > MAX_EVENTS_PER_STEP {
                    return Err(Error::EventCap {
                        count: fired,
                        t: t_stop,
                    });
                }
                mode = ev.transition.to;
                x_cur = &ev.x_post + samplers.reset[&ev.transition].sample(rng);
                t_cur = ev.t_impact;
                omega = samplers.process_rate[&mode].sample(rng);
                events.push(ev);
                if t_cur >= t_end {
                    return Ok((mode, x_cur));
                }
            }
            None => return Ok((mode, x_stop)),
        }
    }
}

/// One recorded timestep of a simulated execution.
#[derive(Clone, Debug)]
pub struct SimStep {
    pub k: usize,
    pub t: f64,
    pub mode: ModeId,
    pub state: DVector<f64>,
    pub measurement: DVector<f64>,
}

/// A complete simulated execution: per-step truth and measurements, plus the
/// chronological list of hybrid events that occurred.
#[derive(Clone, Debug)]
pub struct SimRecord {
    pub steps: Vec<SimStep>,
    pub events: Vec<TransitionEvent>,
}

/// Simulates the noisy ground truth on the measurement grid `t_k = k·Δ`,
/// `k = 0..=K` with `K = ⌊t_final/Δ⌋`, emitting `y(k) = h(x(k)) + v` at every
/// grid point. Process noise is constant within each step (fresh draw per
/// step and after every reset); reset noise is applied at each event.
#[allow(clippy::too_many_arguments)]
pub fn simulate_execution<R: Rng + ?Sized>(
    sys: &dyn HybridSystem,
    noise: &NoiseModel,
    meas: &dyn MeasurementModel,
    mode0: ModeId,
    x0: &DVector<f64>,
    dt: f64,
    t_final: f64,
    cfg: &IntegratorConfig,
    rng: &mut R,
) -> Result<SimRecord> {
    check_dim("simulate_execution state", sys.state_dim(mode0), x0.len())?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "timestep must be positive, got {dt}"
        )));
    }
    let samplers = NoiseSamplers::new(sys, noise)?;
    let n_steps = (t_final / dt + 1e-9).floor() as usize;

    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut events = Vec::new();
    let mut mode = mode0;
    let mut x = x0.clone();

    let y0 = meas.measure(mode, &x) + samplers.measurement(mode).sample(rng);
    steps.push(SimStep {
        k: 0,
        t: 0.0,
        mode,
        state: x.clone(),
        measurement: y0,
    });

    for k in 1..=n_steps {
        let t_k = (k - 1) as f64 * dt;
        let (m, xs) =
            propagate_noisy_step(sys, cfg, &samplers, mode, t_k, &x, dt, rng, &mut events)?;
        mode = m;
        x = xs;
        let y = meas.measure(mode, &x) + samplers.measurement(mode).sample(rng);
        steps.push(SimStep {
            k,
            t: k as f64 * dt,
            mode,
            state: x.clone(),
            measurement: y,
        });
    }
    Ok(SimRecord { steps, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::transversality_lhs;
    use crate::systems::{Aslip, ConstantFlow};
    use crate::testutil::{expm, LinearSystem};
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn constant_flow_event_located_exactly() {
        let sys = ConstantFlow;
        let (t, x_pre, ev) =
            integrate_until_event(&sys, ModeId(1), 0.0, &dvector![-0.3, 0.0], 1.0, &cfg()).unwrap();
        let ev = ev.expect("crossing expected");
        assert!((t - 0.3).abs() < 1e-9);
        assert!((x_pre[0]).abs() < 1e-9);
        assert!((x_pre[1] + 0.3).abs() < 1e-9);
        assert_eq!(ev.transition, Transition::new(1, 2));
        assert!(ev.guard_value.abs() <= cfg().event_tol * (1.0 + ev.transversality.abs()));
        assert!(ev.transversality < -TRANSVERSALITY_EPS);
        // Identity reset.
        assert_eq!(ev.x_post, ev.x_pre);
    }

    #[test]
    fn constant_flow_no_event_before_guard() {
        let sys = ConstantFlow;
        let (t, x, ev) =
            integrate_until_event(&sys, ModeId(1), 0.0, &dvector![-0.3, 0.0], 0.1, &cfg()).unwrap();
        assert!(ev.is_none());
        assert_eq!(t, 0.1);
        assert!((x[0] + 0.2).abs() < 1e-12);
        assert!((x[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn immediate_event_when_guard_already_satisfied() {
        let sys = ConstantFlow;
        let (t, x, ev) =
            integrate_until_event(&sys, ModeId(1), 2.0, &dvector![0.05, 1.0], 3.0, &cfg()).unwrap();
        let ev = ev.expect("immediate event");
        assert_eq!(t, 2.0);
        assert_eq!(x, dvector![0.05, 1.0]);
        assert_eq!(ev.t_impact, 2.0);
        assert_eq!(ev.guard_value, -0.05);
    }

    #[test]
    fn aslip_free_fall_impact_time_matches_closed_form() {
        let sys = Aslip::default();
        // Dropped from rest: level body high enough that the toe falls freely.
        let x0 = sys.flight_state_from_body(
            &dvector![0.0, 1.6, std::f64::consts::FRAC_PI_2],
            &dvector![0.0, 0.0, 0.0],
        );
        let y_t0 = x0[4];
        assert!(y_t0 > 0.0);
        let t_expected = (2.0 * y_t0 / 9.8).sqrt();
        let (t, x_pre, ev) = integrate_until_event(&sys, ModeId(1), 0.0, &x0, 1.0, &cfg()).unwrap();
        let ev = ev.expect("touchdown expected");
        assert_eq!(ev.transition, Transition::new(1, 2));
        assert!(
            (t - t_expected).abs() < 1e-6,
            "t = {t}, expected {t_expected}"
        );
        assert!(x_pre[4].abs() < 1e-8);
    }

    #[test]
    fn located_event_invariants_over_random_constant_flow_runs() {
        let sys = ConstantFlow;
        let icfg = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = crate::systems::constant_flow_noise(0.05, 0.01 * 0.05 * 0.05, 1.0, 0.0);
        let meas = crate::systems::ConstantFlowMeasurement;
        let mut n_events = 0;
        for _ in 0..1000 {
            let x0 = dvector![-1.5 + rng.gen::<f64>(), -0.5 + rng.gen::<f64>()];
            let rec = simulate_execution(
                &sys,
                &noise,
                &meas,
                ModeId(1),
                &x0,
                0.05,
                1.5,
                &icfg,
                &mut rng,
            )
            .unwrap();
            for ev in &rec.events {
                n_events += 1;
                assert!(
                    ev.guard_value.abs() <= icfg.event_tol * (1.0 + ev.transversality.abs()),
                    "guard residual {} too large",
                    ev.guard_value
                );
                assert!(ev.transversality < -TRANSVERSALITY_EPS);
            }
        }
        assert!(n_events >= 500, "expected many events, got {n_events}");
    }

    #[test]
    fn flow_jacobian_of_translation_is_identity() {
        let sys = ConstantFlow;
        let jac = flow_jacobian(&sys, ModeId(1), 0.0, &dvector![-5.0, 2.0], 0.7, &cfg()).unwrap();
        assert!((jac - DMatrix::<f64>::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn flow_jacobian_matches_matrix_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
        let sys = LinearSystem::new(a.clone());
        let dt = 0.8;
        let jac = flow_jacobian(&sys, ModeId(1), 0.0, &dvector![0.4, -0.3], dt, &cfg()).unwrap();
        let exact = expm(&(a * dt));
        let rel = (&jac - &exact).amax() / exact.amax();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn flow_jacobian_refuses_to_cross_events() {
        let sys = ConstantFlow;
        // The flow from x1 = -0.1 crosses the guard at t = 0.1, well inside.
        let err =
            flow_jacobian(&sys, ModeId(1), 0.0, &dvector![-0.1, 0.0], 0.5, &cfg()).unwrap_err();
        assert!(matches!(err, Error::LinearizationAcrossEvent { .. }));
    }

    #[test]
    fn flow_jacobian_allows_segments_ending_on_the_guard() {
        let sys = ConstantFlow;
        // Segment that ends exactly at the crossing time: this is how
        // prediction steps are split, and must not error.
        let jac = flow_jacobian(&sys, ModeId(1), 0.0, &dvector![-0.1, 0.0], 0.1, &cfg()).unwrap();
        assert!((jac - DMatrix::<f64>::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn aslip_stance_jacobian_matches_variational_equation() {
        let sys = Aslip::default();
        // A mid-stance state (compressed leg, moving): no event nearby.
        let x0 = dvector![1.75, -0.45, 0.96, 0.0, 0.0, -1.2, 0.8, -0.9];
        let dt = 0.004;
        let jac = flow_jacobian(&sys, ModeId(2), 0.0, &x0, dt, &cfg()).unwrap();

        // Independent oracle: integrate the variational equation
        // dΦ/dt = D_xF(x(t))·Φ alongside the state, with D_xF itself from
        // finite differences of the *field* (not the flow).
        let n = 8;
        let field_jac = |t: f64, x: &DVector<f64>| -> DMatrix<f64> {
            let mut j = DMatrix::zeros(n, n);
            for col in 0..n {
                let d = 1e-7 * (1.0 + x[col].abs());
                let mut xp = x.clone();
                xp[col] += d;
                let mut xm = x.clone();
                xm[col] -= d;
                let fp = sys.vector_field(ModeId(2), t, &xp);
                let fm = sys.vector_field(ModeId(2), t, &xm);
                j.set_column(col, &((fp - fm) / (2.0 * d)));
            }
            j
        };
        // Augmented fixed-step RK4 on [0, dt].
        let steps = 400;
        let h = dt / steps as f64;
        let mut x = x0.clone();
        let mut phi = DMatrix::<f64>::identity(n, n);
        let f = |t: f64, x: &DVector<f64>, p: &DMatrix<f64>| {
            (sys.vector_field(ModeId(2), t, x), field_jac(t, x) * p)
        };
        let mut t = 0.0;
        for _ in 0..steps {
            let (k1x, k1p) = f(t, &x, &phi);
            let (k2x, k2p) = f(
                t + h / 2.0,
                &(&x + &k1x * (h / 2.0)),
                &(&phi + &k1p * (h / 2.0)),
            );
            let (k3x, k3p) = f(
                t + h / 2.0,
                &(&x + &k2x * (h / 2.0)),
                &(&phi + &k2p * (h / 2.0)),
            );
            let (k4x, k4p) = f(t + h, &(&x + &k3x * h), &(&phi + &k3p * h));
            x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
            phi += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
            t += h;
        }
        let rel = (&jac - &phi).amax() / phi.amax();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn zero_noise_simulation_is_piecewise_linear_with_kink() {
        let sys = ConstantFlow;
        let noise = crate::systems::constant_flow_noise(0.05, 0.0, 0.0, 0.0);
        let meas = crate::systems::ConstantFlowMeasurement;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = simulate_execution(
            &sys,
            &noise,
            &meas,
            ModeId(1),
            &dvector![-1.0, 0.0],
            0.05,
            2.0,
            &cfg(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(rec.steps.len(), 41);
        assert_eq!(rec.events.len(), 1);
        assert!((rec.events[0].t_impact - 1.0).abs() < 1e-9);
        for s in &rec.steps {
            // x1(t) = -1 + t in both modes.
            assert!((s.state[0] - (-1.0 + s.t)).abs() < 1e-8);
            // x2: -t before the kink at t=1, then t-2 after.
            let x2 = if s.t <= 1.0 { -s.t } else { s.t - 2.0 };
            assert!(
                (s.state[1] - x2).abs() < 1e-8,
                "t={} x2={}",
                s.t,
                s.state[1]
            );
            // Measurements equal the state in the zero-noise limit.
            assert!((&s.measurement - &s.state).amax() < 1e-12);
            // The sample at t = 1.0 coincides with the event itself; rounding
            // decides which side of the kink it lands on.
            if s.t < 1.0 - 1e-9 {
                assert_eq!(s.mode, ModeId(1));
            } else if s.t > 1.0 + 1e-9 {
                assert_eq!(s.mode, ModeId(2));
            }
        }
    }

    #[test]
    fn zero_noise_aslip_flight_is_ballistic() {
        let sys = Aslip::default();
        let noise = crate::systems::aslip_noise(0.005, 0.0, 0.0, 0.0);
        let meas = crate::systems::AslipMeasurement::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x0 = sys.flight_state_from_body(
            &dvector![0.0, 1.6, std::f64::consts::FRAC_PI_2],
            &dvector![0.3, 0.2, 0.1],
        );
        let rec = simulate_execution(
            &sys,
            &noise,
            &meas,
            ModeId(1),
            &x0,
            0.005,
            0.1,
            &cfg(),
            &mut rng,
        )
        .unwrap();
        assert!(rec.events.is_empty());
        for s in &rec.steps {
            let t = s.t;
            assert!((s.state[0] - (0.0 + 0.3 * t)).abs() < 1e-9);
            assert!((s.state[1] - (1.6 + 0.2 * t - 4.9 * t * t)).abs() < 1e-9);
            assert!((s.state[5] - 0.3).abs() < 1e-10);
            assert!((s.state[6] - (0.2 - 9.8 * t)).abs() < 1e-9);
        }
    }

    #[test]
    fn simulation_is_deterministic_for_a_fixed_seed() {
        let sys = ConstantFlow;
        let noise = crate::systems::constant_flow_noise(0.05, 0.01 * 0.05 * 0.05, 1.0, 0.001);
        let meas = crate::systems::ConstantFlowMeasurement;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            simulate_execution(
                &sys,
                &noise,
                &meas,
                ModeId(1),
                &dvector![-1.0, 0.5],
                0.05,
                3.0,
                &cfg(),
                &mut rng,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.state, sb.state);
            assert_eq!(sa.measurement, sb.measurement);
            assert_eq!(sa.mode, sb.mode);
        }
        assert_eq!(a.events.len(), b.events.len());
    }

    #[test]
    fn zero_noise_simulation_invariant_to_timestep() {
        let sys = Aslip::default();
        let meas = crate::systems::AslipMeasurement::default();
        let x0 = sys.default_initial_state();
        let run = |dt: f64| {
            let noise = crate::systems::aslip_noise(dt, 0.0, 0.0, 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            simulate_execution(
                &sys,
                &noise,
                &meas,
                ModeId(1),
                &x0,
                dt,
                0.5,
                &cfg(),
                &mut rng,
            )
            .unwrap()
        };
        let coarse = run(0.01);
        let fine = run(0.005);
        for (k, s) in coarse.steps.iter().enumerate() {
            let f = &fine.steps[2 * k];
            assert!((s.t - f.t).abs() < 1e-12);
            assert_eq!(s.mode, f.mode, "mode mismatch at t = {}", s.t);
            assert!(
                (&s.state - &f.state).amax() < 1e-6,
                "state mismatch {} at t = {}",
                (&s.state - &f.state).amax(),
                s.t
            );
        }
    }

    #[test]
    fn transversality_reported_with_biased_field() {
        // The disturbance changes the flow, so transversality at a located
        // event must be computed with the biased field.
        let sys = ConstantFlow;
        let bias = dvector![-0.5, 0.0];
        let (_, _, ev) = integrate_until_event_biased(
            &sys,
            ModeId(1),
            &bias,
            0.0,
            &dvector![-0.3, 0.0],
            2.0,
            &cfg(),
        )
        .unwrap();
        let ev = ev.expect("event expected");
        // Effective speed toward the guard is 0.5, so d/dt g = -0.5.
        assert!((ev.transversality + 0.5).abs() < 1e-12);
        assert!((ev.t_impact - 0.6).abs() < 1e-9);
        // The unbiased rate would be -1.
        let plain = transversality_lhs(&sys, ev.transition, ev.t_impact, &ev.x_pre).unwrap();
        assert!((plain + 1.0).abs() < 1e-12);
    }
}
