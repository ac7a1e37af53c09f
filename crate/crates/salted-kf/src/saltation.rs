//! The saltation matrix and the Gaussian moment update at resets.
//!
//! When a belief is pushed through a guarded reset, the reset Jacobian alone
//! is not the right linear map: trajectories that start apart cross the guard
//! at *different times*, spending the time difference flowing under different
//! vector fields on either side of the event. The saltation matrix adds the
//! rank-one correction that accounts for this time-to-impact variation:
//!
//! ```text
//! Ξ = D_x R + (F_J − D_x R · F_I − D_t R) · D_x g / (D_t g + D_x g · F_I)
//! ```
//!
//! with `F_I` evaluated just before the impact and `F_J` just after (at the
//! post-reset point). The denominator is the guard's approach rate, strictly
//! negative at any transverse crossing; `Ξ` is invariant to rescaling the
//! guard function because `D_x g` appears in both numerator and denominator.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::hybrid::{
    check_dim, symmetric_part, GaussianBelief, HybridSystem, Transition, TRANSVERSALITY_EPS,
};

/// First-order data of one transition, evaluated at an impact point.
#[derive(Clone, Debug)]
pub struct SaltationContext {
    pub transition: Transition,
    /// Impact time.
    pub t: f64,
    /// Source-mode field `F_I(t, x_pre)`.
    pub f_pre: DVector<f64>,
    /// Target-mode field `F_J(t, R(t, x_pre))`, evaluated after the reset.
    pub f_post: DVector<f64>,
    /// Reset Jacobian `D_x R(t, x_pre)`.
    pub reset_jac: DMatrix<f64>,
    /// Reset time derivative `D_t R(t, x_pre)`.
    pub reset_dt: DVector<f64>,
    /// Guard gradient `D_x g(t, x_pre)` as a row.
    pub guard_grad: RowDVector<f64>,
    /// Guard time derivative `D_t g(t, x_pre)`.
    pub guard_dt: f64,
}

impl SaltationContext {
    /// Evaluates every term of the saltation formula at `(t, x_pre)`.
    pub fn at(
        sys: &dyn HybridSystem,
        tr: Transition,
        t: f64,
        x_pre: &DVector<f64>,
    ) -> Result<Self> {
        let n_from = sys.state_dim(tr.from);
        let n_to = sys.state_dim(tr.to);
        check_dim("SaltationContext state", n_from, x_pre.len())?;
        let f_pre = sys.vector_field(tr.from, t, x_pre);
        let x_post = sys.reset(tr, t, x_pre);
        check_dim("SaltationContext reset image", n_to, x_post.len())?;
        let f_post = sys.vector_field(tr.to, t, &x_post);
        let (reset_jac, reset_dt) = sys.reset_jacobian(tr, t, x_pre);
        check_dim(
            "SaltationContext reset Jacobian rows",
            n_to,
            reset_jac.nrows(),
        )?;
        check_dim(
            "SaltationContext reset Jacobian cols",
            n_from,
            reset_jac.ncols(),
        )?;
        check_dim(
            "SaltationContext reset time derivative",
            n_to,
            reset_dt.len(),
        )?;
        let (guard_grad, guard_dt) = sys.guard_gradient(tr, t, x_pre);
        check_dim("SaltationContext guard gradient", n_from, guard_grad.len())?;
        Ok(Self {
            transition: tr,
            t,
            f_pre,
            f_post,
            reset_jac,
            reset_dt,
            guard_grad,
            guard_dt,
        })
    }

    /// The guard's approach rate `D_t g + D_x g · F_I` — the saltation
    /// denominator, strictly negative at a transverse crossing.
    pub fn approach_rate(&self) -> f64 {
        self.guard_dt + (&self.guard_grad * &self.f_pre)[0]
    }
}

/// Computes the saltation matrix from an evaluated context.
///
/// Fails with [`Error::NonTransverseCrossing`] when the approach rate is not
/// strictly below `-`[`TRANSVERSALITY_EPS`]: the formula degenerates at
/// grazing contact, where time-to-impact is not differentiable in the state.
pub fn saltation_matrix(ctx: &SaltationContext) -> Result<DMatrix<f64>> {
    let denom = ctx.approach_rate();
    if !(denom < -TRANSVERSALITY_EPS) {
        return Err(Error::NonTransverseCrossing {
            derivative: denom,
            t: ctx.t,
            eps: TRANSVERSALITY_EPS,
        });
    }
    let gap = &ctx.f_post - &ctx.reset_jac * &ctx.f_pre - &ctx.reset_dt;
    Ok(&ctx.reset_jac + gap * (&ctx.guard_grad / denom))
}

/// Which linear map propagates covariance across a reset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceMap {
    /// The saltation matrix — aware of time-to-impact variation.
    Saltation,
    /// The bare reset Jacobian — the baseline that ignores it.
    ResetJacobian,
}

/// Pushes a Gaussian belief through a reset:
/// `mean′ = R(t, mean)`, `Σ′ = M Σ Mᵀ + W_R` (re-symmetrized), with `M`
/// either the saltation matrix or the reset Jacobian, always evaluated at the
/// current mean estimate.
pub fn reset_moment_update(
    sys: &dyn HybridSystem,
    tr: Transition,
    t: f64,
    belief: &GaussianBelief,
    w_reset: &DMatrix<f64>,
    map: CovarianceMap,
) -> Result<GaussianBelief> {
    if belief.mode != tr.from {
        return Err(Error::Config(format!(
            "reset for transition {tr} applied to a belief in {}",
            belief.mode
        )));
    }
    let n_to = sys.state_dim(tr.to);
    check_dim("reset noise covariance rows", n_to, w_reset.nrows())?;
    check_dim("reset noise covariance cols", n_to, w_reset.ncols())?;
    let ctx = SaltationContext::at(sys, tr, t, &belief.mean)?;
    let m = match map {
        CovarianceMap::Saltation => saltation_matrix(&ctx)?,
        CovarianceMap::ResetJacobian => ctx.reset_jac.clone(),
    };
    let mean = sys.reset(tr, t, &belief.mean);
    let cov = symmetric_part(&(&m * &belief.cov * m.transpose() + w_reset));
    Ok(GaussianBelief::new(tr.to, mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{HybridSystem, ModeId};
    use crate::integrator::{flow_jacobian, integrate_until_event, IntegratorConfig};
    use crate::systems::{Aslip, ConstantFlow};
    use nalgebra::{dmatrix, dvector};

    /// Wrapper that rescales one system's guards by a constant.
    struct ScaledGuard<S> {
        inner: S,
        scale: f64,
    }

    impl<S: HybridSystem> HybridSystem for ScaledGuard<S> {
        fn name(&self) -> &str {
            "scaled_guard"
        }
        fn modes(&self) -> Vec<ModeId> {
            self.inner.modes()
        }
        fn transitions(&self) -> Vec<Transition> {
            self.inner.transitions()
        }
        fn state_dim(&self, mode: ModeId) -> usize {
            self.inner.state_dim(mode)
        }
        fn vector_field(&self, mode: ModeId, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.vector_field(mode, t, x)
        }
        fn guard(&self, tr: Transition, t: f64, x: &DVector<f64>) -> f64 {
            self.scale * self.inner.guard(tr, t, x)
        }
        fn guard_gradient(
            &self,
            tr: Transition,
            t: f64,
            x: &DVector<f64>,
        ) -> (RowDVector<f64>, f64) {
            let (dxg, dtg) = self.inner.guard_gradient(tr, t, x);
            (dxg * self.scale, dtg * self.scale)
        }
        fn reset(&self, tr: Transition, t: f64, x: &DVector<f64>) -> DVector<f64> {
            self.inner.reset(tr, t, x)
        }
        fn reset_jacobian(
            &self,
            tr: Transition,
            t: f64,
            x: &DVector<f64>,
        ) -> (DMatrix<f64>, DVector<f64>) {
            self.inner.reset_jacobian(tr, t, x)
        }
    }

    #[test]
    fn planar_flow_saltation_has_shear_form() {
        // Fields (1, -1) -> (1, 1) across the plane x1 = 0 with identity
        // reset: Ξ = [[1, 0], [2, 1]] by the closed formula.
        let sys = ConstantFlow;
        let ctx =
            SaltationContext::at(&sys, Transition::new(1, 2), 0.3, &dvector![0.0, -0.3]).unwrap();
        assert_eq!(ctx.approach_rate(), -1.0);
        let xi = saltation_matrix(&ctx).unwrap();
        assert!((xi - dmatrix![1.0, 0.0; 2.0, 1.0]).amax() < 1e-15);
    }

    #[test]
    fn saltation_is_invariant_to_guard_rescaling() {
        let base = ConstantFlow;
        let tr = Transition::new(1, 2);
        let x = dvector![0.0, 1.7];
        let xi0 = saltation_matrix(&SaltationContext::at(&base, tr, 0.0, &x).unwrap()).unwrap();
        for scale in [0.01, 3.0, 250.0] {
            let scaled = ScaledGuard {
                inner: ConstantFlow,
                scale,
            };
            let xi =
                saltation_matrix(&SaltationContext::at(&scaled, tr, 0.0, &x).unwrap()).unwrap();
            assert!(
                (&xi - &xi0).amax() < 1e-12,
                "saltation changed under guard scale {scale}"
            );
        }
    }

    #[test]
    fn consistent_fields_reduce_saltation_to_reset_jacobian() {
        // If F_J = D_x R · F_I + D_t R at the impact, the correction term
        // vanishes and Ξ = D_x R regardless of the guard.
        let reset_jac = dmatrix![2.0, 0.0; 0.5, 3.0];
        let reset_dt = dvector![0.5, 0.0];
        let f_pre = dvector![1.0, -1.0];
        let f_post = &reset_jac * &f_pre + &reset_dt;
        let ctx = SaltationContext {
            transition: Transition::new(1, 2),
            t: 0.0,
            f_pre,
            f_post,
            reset_jac: reset_jac.clone(),
            reset_dt,
            guard_grad: RowDVector::from_row_slice(&[-1.0, 0.4]),
            guard_dt: 0.1,
        };
        let xi = saltation_matrix(&ctx).unwrap();
        assert!((xi - reset_jac).amax() < 1e-14);
    }

    #[test]
    fn grazing_contact_is_rejected() {
        let ctx = SaltationContext {
            transition: Transition::new(1, 2),
            t: 1.0,
            f_pre: dvector![1.0, 0.0],
            f_post: dvector![1.0, 0.0],
            reset_jac: DMatrix::identity(2, 2),
            reset_dt: dvector![0.0, 0.0],
            // Gradient orthogonal to the flow: approach rate zero.
            guard_grad: RowDVector::from_row_slice(&[0.0, 1.0]),
            guard_dt: 0.0,
        };
        let err = saltation_matrix(&ctx).unwrap_err();
        assert!(matches!(err, Error::NonTransverseCrossing { .. }));
    }

    #[test]
    fn moment_update_matches_closed_form() {
        let sys = ConstantFlow;
        let tr = Transition::new(1, 2);
        let sigma = 0.01;
        let belief = GaussianBelief::new(
            ModeId(1),
            dvector![0.0, -0.5],
            DMatrix::identity(2, 2) * sigma,
        );
        let w_reset = DMatrix::zeros(2, 2);
        let updated =
            reset_moment_update(&sys, tr, 0.5, &belief, &w_reset, CovarianceMap::Saltation)
                .unwrap();
        assert_eq!(updated.mode, ModeId(2));
        assert_eq!(updated.mean, dvector![0.0, -0.5]);
        // Ξ Σ Ξᵀ for Ξ = [[1,0],[2,1]], Σ = σI.
        let expected = dmatrix![sigma, 2.0 * sigma; 2.0 * sigma, 5.0 * sigma];
        assert!((&updated.cov - &expected).amax() < 1e-15);

        // The baseline map keeps the covariance unchanged (identity reset).
        let baseline = reset_moment_update(
            &sys,
            tr,
            0.5,
            &belief,
            &w_reset,
            CovarianceMap::ResetJacobian,
        )
        .unwrap();
        assert!((&baseline.cov - &belief.cov).amax() < 1e-15);
    }

    #[test]
    fn moment_update_adds_reset_noise_and_rejects_wrong_mode() {
        let sys = ConstantFlow;
        let tr = Transition::new(1, 2);
        let belief = GaussianBelief::new(ModeId(1), dvector![0.0, 0.0], DMatrix::zeros(2, 2));
        let w_reset = DMatrix::identity(2, 2) * 0.3;
        let updated =
            reset_moment_update(&sys, tr, 0.0, &belief, &w_reset, CovarianceMap::Saltation)
                .unwrap();
        assert!((updated.cov - w_reset).amax() < 1e-15);

        let wrong = GaussianBelief::new(ModeId(2), dvector![0.0, 0.0], DMatrix::zeros(2, 2));
        let w_reset = DMatrix::zeros(2, 2);
        assert!(
            reset_moment_update(&sys, tr, 0.0, &wrong, &w_reset, CovarianceMap::Saltation).is_err()
        );
    }

    /// Finite-difference oracle: the Jacobian of the *hybrid* time-T flow
    /// (flow to the guard, reset, flow onward) factors as
    /// `Â_J(after) · Ξ · Â_I(before)`.
    fn hybrid_flow_map(
        sys: &dyn HybridSystem,
        x0: &DVector<f64>,
        t_final: f64,
        cfg: &IntegratorConfig,
    ) -> DVector<f64> {
        let (t_ev, _, ev) = integrate_until_event(sys, ModeId(1), 0.0, x0, t_final, cfg).unwrap();
        let ev = ev.expect("trajectory must cross the guard");
        let (_, x_end, later) =
            integrate_until_event(sys, ev.transition.to, t_ev, &ev.x_post, t_final, cfg).unwrap();
        assert!(later.is_none(), "unexpected second event");
        x_end
    }

    #[test]
    fn saltation_factors_the_hybrid_flow_jacobian_planar() {
        let sys = ConstantFlow;
        let cfg = IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            event_tol: 1e-12,
            ..IntegratorConfig::default()
        };
        let x0 = dvector![-0.3, 0.0];
        let t_final = 0.6;
        let mut fd = DMatrix::zeros(2, 2);
        for j in 0..2 {
            let d = 1e-6;
            let mut xp = x0.clone();
            xp[j] += d;
            let mut xm = x0.clone();
            xm[j] -= d;
            let col = (hybrid_flow_map(&sys, &xp, t_final, &cfg)
                - hybrid_flow_map(&sys, &xm, t_final, &cfg))
                / (2.0 * d);
            fd.set_column(j, &col);
        }
        // Both flows are translations, so the hybrid Jacobian is Ξ itself.
        assert!((fd - dmatrix![1.0, 0.0; 2.0, 1.0]).amax() < 1e-6);
    }

    #[test]
    fn saltation_factors_the_hybrid_flow_jacobian_at_touchdown() {
        let sys = Aslip::default();
        let cfg = IntegratorConfig {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            event_tol: 1e-12,
            ..IntegratorConfig::default()
        };
        // Flight state shortly before touchdown, falling.
        let x0 = sys.flight_state_from_body(
            &dvector![0.0, 1.418, std::f64::consts::FRAC_PI_2 + 0.05],
            &dvector![0.4, -1.1, -0.2],
        );
        let t_final = 0.05;

        // Locate the impact on the nominal trajectory.
        let (t_ev, x_pre, ev) =
            integrate_until_event(&sys, ModeId(1), 0.0, &x0, t_final, &cfg).unwrap();
        let ev = ev.expect("touchdown expected");
        assert_eq!(ev.transition, Transition::new(1, 2));
        assert!(t_ev > 0.005 && t_ev < t_final - 0.005, "t_ev = {t_ev}");

        // Analytic factorization.
        let a_pre = flow_jacobian(&sys, ModeId(1), 0.0, &x0, t_ev, &cfg).unwrap();
        let xi =
            saltation_matrix(&SaltationContext::at(&sys, ev.transition, t_ev, &x_pre).unwrap())
                .unwrap();
        let a_post =
            flow_jacobian(&sys, ModeId(2), t_ev, &ev.x_post, t_final - t_ev, &cfg).unwrap();
        let predicted = &a_post * &xi * &a_pre;

        // Finite differences of the hybrid flow map.
        let n = 8;
        let mut fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let d = 1e-5 * (1.0 + x0[j].abs());
            let mut xp = x0.clone();
            xp[j] += d;
            let mut xm = x0.clone();
            xm[j] -= d;
            let col = (hybrid_flow_map(&sys, &xp, t_final, &cfg)
                - hybrid_flow_map(&sys, &xm, t_final, &cfg))
                / (2.0 * d);
            fd.set_column(j, &col);
        }
        let rel = (&predicted - &fd).amax() / fd.amax();
        assert!(rel < 1e-3, "relative mismatch {rel}");
        // And the correction genuinely matters: the bare reset Jacobian does
        // not factor the hybrid flow.
        let (dxr, _) = sys.reset_jacobian(ev.transition, t_ev, &x_pre);
        let wrong = &a_post * &dxr * &a_pre;
        assert!((&wrong - &fd).amax() / fd.amax() > 1e-2);
    }
}
