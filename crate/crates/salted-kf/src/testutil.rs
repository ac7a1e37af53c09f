//! Shared fixtures for unit tests: a single-mode linear system and an
//! independent matrix exponential, used to cross-check flow linearization
//! and filter algebra against closed forms.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::hybrid::{HybridSystem, MeasurementModel, ModeId, Transition};

/// `dx/dt = A x` with one mode and no transitions.
pub(crate) struct LinearSystem {
    a: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>) -> Self {
        assert!(a.is_square());
        Self { a }
    }
}

impl HybridSystem for LinearSystem {
    fn name(&self) -> &'static str {
        "linear_test"
    }

    fn modes(&self) -> Vec<ModeId> {
        vec![ModeId(1)]
    }

    fn transitions(&self) -> Vec<Transition> {
        Vec::new()
    }

    fn state_dim(&self, _mode: ModeId) -> usize {
        self.a.nrows()
    }

    fn vector_field(&self, _mode: ModeId, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    fn guard(&self, _tr: Transition, _t: f64, _x: &DVector<f64>) -> f64 {
        f64::INFINITY
    }

    fn guard_gradient(&self, _tr: Transition, _t: f64, x: &DVector<f64>) -> (RowDVector<f64>, f64) {
        (RowDVector::zeros(x.len()), 0.0)
    }

    fn reset(&self, _tr: Transition, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn reset_jacobian(
        &self,
        _tr: Transition,
        _t: f64,
        x: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::identity(x.len(), x.len()), DVector::zeros(x.len()))
    }
}

/// Observes the full state directly in every mode.
pub(crate) struct IdentityMeasurement(pub usize);

impl MeasurementModel for IdentityMeasurement {
    fn measurement_dim(&self, _mode: ModeId) -> usize {
        self.0
    }

    fn measure(&self, _mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn jacobian(&self, _mode: ModeId, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.0, self.0)
    }
}

/// Matrix exponential by scaling-and-squaring on the Taylor series.
/// Accurate far beyond test tolerances for the small, mild matrices used here.
pub(crate) fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert!(m.is_square());
    let norm = m.amax();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(s as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-300 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_of_diagonal_exponentiates_entries() {
        let d = dmatrix![1.0, 0.0; 0.0, -2.0];
        let e = expm(&d);
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-12);
        assert!((e[(1, 1)] - (-2f64).exp()).abs() < 1e-12);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn expm_rotation_block() {
        // exp([[0, -θ], [θ, 0]]) is a rotation by θ.
        let th = 0.73;
        let m = dmatrix![0.0, -th; th, 0.0];
        let e = expm(&m);
        assert!((e[(0, 0)] - th.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - th.sin()).abs() < 1e-13);
    }
}
