//! Asymmetric spring-loaded inverted pendulum (ASLIP) hopper.
//!
//! A rigid body with a massless springy leg attached at a hip offset from the
//! center of mass. Two modes:
//!
//! - **Mode 1, flight** — chart `(x_b, y_b, θ_b, x_t, y_t, ẋ_b, ẏ_b, θ̇_b)`:
//!   the body is ballistic; the leg is massless and instantly settles at its
//!   rest pose, so the toe point `(x_t, y_t)` is rigidly slaved to the body.
//! - **Mode 2, stance** — chart `(θ_t, θ_h, l_l, x_t, y_t, θ̇_t, θ̇_h, l̇_l)`:
//!   the toe is pinned to the ground at `(x_t, y_t)` and the body swings on
//!   the compressing leg; dynamics follow from the stance Lagrangian via
//!   `M(q) q̈ = f(q, q̇)` with the toe coordinates frozen.
//!
//! Transitions: touchdown (flight → stance) when the toe reaches the ground
//! (`g = y_t`), with the reset pinning the toe and changing coordinates —
//! energy-conserving because the leg is at its rest pose at that instant.
//! Liftoff (stance → flight) when the leg re-extends to its rest length
//! (`g = l₀ − l_l`), with the reset releasing the toe; whatever energy the
//! hip spring holds at that moment is lost with the de-energized leg.
//!
//! All closed-form kinematics, dynamics, resets, and their Jacobians live in
//! the machine-generated sibling module.

use nalgebra::{DMatrix, DVector, RowDVector, SMatrix, SVector, Vector3};

use super::aslip_gen as gen;
use crate::hybrid::{HybridSystem, MeasurementModel, ModeId, Transition};

/// Physical parameters of the hopper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AslipParams {
    pub body_mass: f64,
    pub body_inertia: f64,
    pub leg_stiffness: f64,
    pub hip_stiffness: f64,
    /// Distance from the center of mass to the hip attachment point.
    pub hip_offset: f64,
    pub gravity: f64,
    pub leg_rest_length: f64,
    /// Rest angle of the hip spring (leg angle relative to the body).
    pub hip_rest_angle: f64,
}

impl Default for AslipParams {
    fn default() -> Self {
        Self {
            body_mass: 1.0,
            body_inertia: 1.0,
            leg_stiffness: 1000.0,
            hip_stiffness: 400.0,
            hip_offset: 0.5,
            gravity: 9.8,
            leg_rest_length: 1.0,
            hip_rest_angle: -std::f64::consts::FRAC_PI_8,
        }
    }
}

/// The ASLIP hopper as a hybrid system.
#[derive(Clone, Copy, Debug, Default)]
pub struct Aslip {
    pub params: AslipParams,
}

pub(crate) fn to_svec(x: &DVector<f64>) -> SVector<f64, 8> {
    SVector::<f64, 8>::from_column_slice(x.as_slice())
}

fn from_svec(x: SVector<f64, 8>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

fn from_smat<const R: usize, const C: usize>(m: SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

impl Aslip {
    pub fn new(params: AslipParams) -> Self {
        Self { params }
    }

    /// The matching measurement model (full state in flight, reconstructed
    /// body pose and velocity in stance).
    pub fn measurement(&self) -> AslipMeasurement {
        AslipMeasurement {
            params: self.params,
        }
    }

    /// Builds a flight state from a body pose and body velocity, placing the
    /// toe at its rest pose under the body.
    pub fn flight_state_from_body(&self, q_b: &DVector<f64>, qd_b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(q_b.len(), 3);
        assert_eq!(qd_b.len(), 3);
        let toe = gen::toe_from_body(&self.params, &Vector3::new(q_b[0], q_b[1], q_b[2]));
        nalgebra::dvector![q_b[0], q_b[1], q_b[2], toe[0], toe[1], qd_b[0], qd_b[1], qd_b[2]]
    }

    /// Toe position implied by a body pose with the leg at rest.
    pub fn toe_for_body_pose(&self, q_b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(q_b.len(), 3);
        let toe = gen::toe_from_body(&self.params, &Vector3::new(q_b[0], q_b[1], q_b[2]));
        nalgebra::dvector![toe[0], toe[1]]
    }

    /// The default launch state: upright body at height 1.5 drifting right at
    /// 0.2 m/s, with the backspin chosen so the first stance phase returns
    /// the hip spring to its rest angle exactly at liftoff. The resulting
    /// motion is a clean repeating hop (touchdown near t = 0.11 s, liftoff
    /// near t = 0.23 s, next touchdown near t = 0.48 s, ...).
    pub fn default_initial_state(&self) -> DVector<f64> {
        self.flight_state_from_body(
            &nalgebra::dvector![0.0, 1.5, std::f64::consts::FRAC_PI_2],
            &nalgebra::dvector![0.2, 0.0, -0.36735541844937286],
        )
    }

    /// Maps a state of either mode into the common body chart
    /// `(x_b, y_b, θ_b, x_t, y_t, ẋ_b, ẏ_b, θ̇_b)`.
    pub fn body_coordinates(&self, mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        match mode.0 {
            1 => x.clone(),
            // The liftoff reset *is* the stance-to-body coordinate change;
            // as a chart map it is valid at any stance state.
            2 => from_svec(gen::liftoff_reset(&self.params, &to_svec(x))),
            _ => panic!("unknown {mode}"),
        }
    }

    /// Pushes a 6-dim body-chart covariance (pose, velocity) forward to the
    /// 8-dim flight chart, where the toe block is slaved to the pose through
    /// the rest-pose kinematics. The result has rank at most 6.
    pub fn pushforward_body_covariance(
        &self,
        mean_flight: &DVector<f64>,
        sigma_body: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        assert_eq!(mean_flight.len(), 8);
        assert_eq!((sigma_body.nrows(), sigma_body.ncols()), (6, 6));
        let q_b = Vector3::new(mean_flight[0], mean_flight[1], mean_flight[2]);
        let b = gen::toe_from_body_jac(&self.params, &q_b);
        let mut p = DMatrix::zeros(8, 6);
        for i in 0..3 {
            p[(i, i)] = 1.0;
            p[(5 + i, 3 + i)] = 1.0;
        }
        for r in 0..2 {
            for c in 0..3 {
                p[(3 + r, c)] = b[(r, c)];
            }
        }
        &p * sigma_body * p.transpose()
    }

    /// Mechanical energy of a flight state (kinetic + gravity; both leg
    /// springs are at rest in flight).
    pub fn flight_energy(&self, x: &DVector<f64>) -> f64 {
        let p = &self.params;
        0.5 * p.body_mass * (x[5] * x[5] + x[6] * x[6])
            + 0.5 * p.body_inertia * x[7] * x[7]
            + p.body_mass * p.gravity * x[1]
    }

    /// Mechanical energy of a stance state (kinetic + gravity + springs).
    pub fn stance_energy(&self, x: &DVector<f64>) -> f64 {
        gen::stance_energy(&self.params, &to_svec(x))
    }
}

impl HybridSystem for Aslip {
    fn name(&self) -> &str {
        "aslip"
    }

    fn modes(&self) -> Vec<ModeId> {
        vec![ModeId(1), ModeId(2)]
    }

    fn transitions(&self) -> Vec<Transition> {
        vec![Transition::new(1, 2), Transition::new(2, 1)]
    }

    fn state_dim(&self, _mode: ModeId) -> usize {
        8
    }

    fn vector_field(&self, mode: ModeId, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        match mode.0 {
            1 => {
                let q_b = Vector3::new(x[0], x[1], x[2]);
                let qd_b = Vector3::new(x[5], x[6], x[7]);
                let toe_vel = gen::toe_from_body_jac(p, &q_b) * qd_b;
                nalgebra::dvector![x[5], x[6], x[7], toe_vel[0], toe_vel[1], 0.0, -p.gravity, 0.0]
            }
            2 => {
                let q = Vector3::new(x[0], x[1], x[2]);
                let qd = Vector3::new(x[5], x[6], x[7]);
                let m = gen::stance_mass_matrix(p, &q);
                let f = gen::stance_forcing(p, &q, &qd);
                let acc = m.lu().solve(&f).expect("stance mass matrix is singular");
                nalgebra::dvector![x[5], x[6], x[7], 0.0, 0.0, acc[0], acc[1], acc[2]]
            }
            _ => panic!("unknown {mode}"),
        }
    }

    fn guard(&self, tr: Transition, _t: f64, x: &DVector<f64>) -> f64 {
        match (tr.from.0, tr.to.0) {
            // Touchdown: toe height reaches the ground.
            (1, 2) => x[4],
            // Liftoff: the leg re-extends to its rest length.
            (2, 1) => self.params.leg_rest_length - x[2],
            _ => panic!("unknown transition {tr}"),
        }
    }

    fn guard_gradient(&self, tr: Transition, _t: f64, _x: &DVector<f64>) -> (RowDVector<f64>, f64) {
        let mut dxg = RowDVector::zeros(8);
        match (tr.from.0, tr.to.0) {
            (1, 2) => dxg[4] = 1.0,
            (2, 1) => dxg[2] = -1.0,
            _ => panic!("unknown transition {tr}"),
        }
        (dxg, 0.0)
    }

    fn reset(&self, tr: Transition, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        match (tr.from.0, tr.to.0) {
            (1, 2) => from_svec(gen::touchdown_reset(&self.params, &to_svec(x))),
            (2, 1) => from_svec(gen::liftoff_reset(&self.params, &to_svec(x))),
            _ => panic!("unknown transition {tr}"),
        }
    }

    fn reset_jacobian(
        &self,
        tr: Transition,
        _t: f64,
        x: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let jac = match (tr.from.0, tr.to.0) {
            (1, 2) => from_smat(gen::touchdown_reset_jac(&self.params, &to_svec(x))),
            (2, 1) => from_smat(gen::liftoff_reset_jac(&self.params, &to_svec(x))),
            _ => panic!("unknown transition {tr}"),
        };
        (jac, DVector::zeros(8))
    }
}

/// Measurement model of the hopper: the body pose and body velocity (6
/// values) in both modes — read off directly in flight, reconstructed from
/// the leg state in stance. The toe is never measured.
#[derive(Clone, Copy, Debug, Default)]
pub struct AslipMeasurement {
    pub params: AslipParams,
}

impl MeasurementModel for AslipMeasurement {
    fn measurement_dim(&self, _mode: ModeId) -> usize {
        6
    }

    fn measure(&self, mode: ModeId, x: &DVector<f64>) -> DVector<f64> {
        match mode.0 {
            1 => nalgebra::dvector![x[0], x[1], x[2], x[5], x[6], x[7]],
            2 => {
                let y = gen::stance_measurement(&self.params, &to_svec(x));
                DVector::from_column_slice(y.as_slice())
            }
            _ => panic!("unknown {mode}"),
        }
    }

    fn jacobian(&self, mode: ModeId, x: &DVector<f64>) -> DMatrix<f64> {
        match mode.0 {
            1 => {
                let mut j = DMatrix::zeros(6, 8);
                for (row, col) in [(0, 0), (1, 1), (2, 2), (3, 5), (4, 6), (5, 7)] {
                    j[(row, col)] = 1.0;
                }
                j
            }
            2 => {
                let j = gen::stance_measurement_jac(&self.params, &to_svec(x));
                DMatrix::from_column_slice(6, 8, j.as_slice())
            }
            _ => panic!("unknown {mode}"),
        }
    }
}
