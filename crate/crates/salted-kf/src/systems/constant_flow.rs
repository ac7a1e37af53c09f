//! A minimal planar hybrid system with constant flows and an identity reset.
//!
//! Mode 1 flows with velocity `(1, -1)` toward the plane `x₁ = 0`; crossing
//! it switches to mode 2, which flows with velocity `(1, 1)` away from the
//! plane. The reset is the identity, so every non-smoothness of the hybrid
//! flow comes from the *timing* of the switch — which makes the system a
//! clean stress test for covariance propagation across events: the saltation
//! matrix is the exact shear `[[1, 0], [2, 1]]`, while the reset Jacobian is
//! the identity.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::hybrid::{HybridSystem, MeasurementModel, ModeId, Transition};

/// The two-mode constant-flow system.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantFlow;

impl ConstantFlow {
    fn check_transition(tr: Transition) {
        assert!(
            (tr.from.0 == 1 && tr.to.0 == 2) || (tr.from.0 == 2 && tr.to.0 == 1),
            "unknown transition {tr}"
        );
    }
}

impl HybridSystem for ConstantFlow {
    fn name(&self) -> &str {
        "constant_flow"
    }

    fn modes(&self) -> Vec<ModeId> {
        vec![ModeId(1), ModeId(2)]
    }

    fn transitions(&self) -> Vec<Transition> {
        vec![Transition::new(1, 2), Transition::new(2, 1)]
    }

    fn state_dim(&self, _mode: ModeId) -> usize {
        2
    }

    fn vector_field(&self, mode: ModeId, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        match mode.0 {
            1 => nalgebra::dvector![1.0, -1.0],
            2 => nalgebra::dvector![1.0, 1.0],
            _ => panic!("unknown {mode}"),
        }
    }

    fn guard(&self, tr: Transition, _t: f64, x: &DVector<f64>) -> f64 {
        Self::check_transition(tr);
        // Mode 1 owns the half-plane x1 < 0, mode 2 the half-plane x1 > 0;
        // each guard measures the distance into the opposite half-plane.
        if tr.from.0 == 1 {
            -x[0]
        } else {
            x[0]
        }
    }

    fn guard_gradient(&self, tr: Transition, _t: f64, _x: &DVector<f64>) -> (RowDVector<f64>, f64) {
        Self::check_transition(tr);
        let sign = if tr.from.0 == 1 { -1.0 } else { 1.0 };
        (RowDVector::from_row_slice(&[sign, 0.0]), 0.0)
    }

    fn reset(&self, tr: Transition, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        Self::check_transition(tr);
        x.clone()
    }

    fn reset_jacobian(
        &self,
        tr: Transition,
        _t: f64,
        _x: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        Self::check_transition(tr);
        (DMatrix::identity(2, 2), DVector::zeros(2))
    }
}

/// Full-state measurement `y = x` in both modes.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantFlowMeasurement;

impl MeasurementModel for ConstantFlowMeasurement {
    fn measurement_dim(&self, _mode: ModeId) -> usize {
        2
    }

    fn measure(&self, _mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn jacobian(&self, _mode: ModeId, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
}
