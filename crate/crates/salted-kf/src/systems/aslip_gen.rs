//! Closed-form ASLIP kinematics and stance dynamics.
//!
//! Produced offline with a computer algebra system from the model definition
//! (Lagrangian mechanics of the pinned-toe stance phase plus the body/leg
//! coordinate change) and verified against finite differences and energy
//! conservation in the test suite. Edit the model in one place: regenerate
//! rather than hand-patching expressions.
#![allow(clippy::all)]
#![allow(unused_variables, unused_parens)]
#![cfg_attr(rustfmt, rustfmt_skip)]

use nalgebra::{Matrix3, Vector3, Vector2, SMatrix, SVector};

use super::AslipParams;


/// Stance mass matrix M(q) in leg coordinates (th_t, th_h, l_l).
pub fn stance_mass_matrix(p: &AslipParams, q: &Vector3<f64>) -> Matrix3<f64> {
    let (th_t, th_h, l_l) = (q[0], q[1], q[2]);
    let s0 = p.body_mass*p.hip_offset;
    let s1 = l_l*s0*th_h.cos();
    let s2 = p.body_inertia + p.body_mass*p.hip_offset*p.hip_offset;
    let s3 = s1 + s2;
    let s4 = -s0*th_h.sin();
    Matrix3::from_row_slice(&[
        l_l*l_l*p.body_mass + 2.0*s1 + s2,
        s3,
        s4,
        s3,
        s2,
        s4,
        s4,
        s4,
        p.body_mass,
    ])
}

/// Stance generalized force f(q, qd) with M(q) qdd = f.
pub fn stance_forcing(p: &AslipParams, q: &Vector3<f64>, qd: &Vector3<f64>) -> Vector3<f64> {
    let (th_t, th_h, l_l) = (q[0], q[1], q[2]);
    let (w_t, w_h, v_l) = (qd[0], qd[1], qd[2]);
    let s0 = p.gravity*p.hip_offset*(th_h + th_t).cos();
    let s1 = 2.0*w_t;
    let s2 = s1*v_l;
    let s3 = w_h*w_h;
    let s4 = th_h.sin();
    let s5 = th_h.cos();
    let s6 = p.hip_offset*s5;
    let s7 = p.body_mass*w_t*w_t;
    let s8 = l_l*s7;
    let s9 = p.body_mass*s5;
    Vector3::from_row_slice(&[
        p.body_mass*(-l_l*p.gravity*th_t.cos() + l_l*p.hip_offset*s3*s4 + 2.0*l_l*p.hip_offset*s4*w_h*w_t - l_l*s2 - s0 - s2*s6),
        -p.body_mass*s0 - p.hip_offset*s2*s9 - p.hip_offset*s4*s8 + p.hip_rest_angle*p.hip_stiffness - p.hip_stiffness*th_h,
        -l_l*p.leg_stiffness - p.body_mass*p.gravity*th_t.sin() + p.hip_offset*s1*s9*w_h + p.hip_offset*s3*s9 + p.leg_rest_length*p.leg_stiffness + s6*s7 + s8,
    ])
}

/// Total mechanical energy of the stance phase (kinetic + gravity + springs).
pub fn stance_energy(p: &AslipParams, x: &SVector<f64, 8>) -> f64 {
    let (th_t, th_h, l_l, x_t, y_t, w_t, w_h, v_l) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = p.hip_offset*p.hip_offset;
    let s1 = w_t*w_t;
    let s2 = 2.0*w_h;
    let s3 = s2*w_t;
    let s4 = p.hip_offset*v_l*th_h.sin();
    let s5 = l_l*p.hip_offset*th_h.cos();
    (1_f64/2.0)*p.body_inertia*(w_h + w_t)*(w_h + w_t) + p.body_mass*p.gravity*(l_l*th_t.sin() + p.hip_offset*(th_h + th_t).sin() + y_t) + (1_f64/2.0)*p.body_mass*(l_l*l_l*s1 + s0*s1 + s0*s3 + s0*w_h*w_h + 2.0*s1*s5 - s2*s4 + s3*s5 - 2.0*s4*w_t + v_l*v_l) + (1_f64/2.0)*p.hip_stiffness*(p.hip_rest_angle - th_h)*(p.hip_rest_angle - th_h) + (1_f64/2.0)*p.leg_stiffness*(l_l - p.leg_rest_length)*(l_l - p.leg_rest_length)
}

/// Toe position implied by a body pose with the leg at its rest pose.
pub fn toe_from_body(p: &AslipParams, q_b: &Vector3<f64>) -> Vector2<f64> {
    let (x_b, y_b, th_b) = (q_b[0], q_b[1], q_b[2]);
    let s0 = p.hip_rest_angle - th_b;
    Vector2::from_row_slice(&[
        -p.hip_offset*th_b.cos() - p.leg_rest_length*s0.cos() + x_b,
        -p.hip_offset*th_b.sin() + p.leg_rest_length*s0.sin() + y_b,
    ])
}

/// Jacobian of toe_from_body with respect to (x_b, y_b, th_b).
pub fn toe_from_body_jac(p: &AslipParams, q_b: &Vector3<f64>) -> SMatrix<f64, 2, 3> {
    let (x_b, y_b, th_b) = (q_b[0], q_b[1], q_b[2]);
    let s0 = p.hip_rest_angle - th_b;
    SMatrix::<f64, 2, 3>::from_row_slice(&[
        1.0,
        0.0,
        p.hip_offset*th_b.sin() - p.leg_rest_length*s0.sin(),
        0.0,
        1.0,
        -p.hip_offset*th_b.cos() - p.leg_rest_length*s0.cos(),
    ])
}

/// Flight-to-stance reset: pin the toe and map body state to leg coordinates.
pub fn touchdown_reset(p: &AslipParams, x: &SVector<f64, 8>) -> SVector<f64, 8> {
    let (x_b, y_b, th_b, x_t, y_t, vx_b, vy_b, w_b) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_b.sin();
    let s1 = p.hip_offset*s0;
    let s2 = s1 - y_b + y_t;
    let s3 = -s2;
    let s4 = p.hip_offset*th_b.cos();
    let s5 = -s4 + x_b - x_t;
    let s6 = s3.atan2(s5);
    let s7 = s3*s3 + s5*s5;
    let s8 = s7.sqrt();
    let s9 = (s7).recip();
    let s10 = s2*s9;
    let s11 = s1*s10;
    let s12 = s5*s9;
    let s13 = s12*s4;
    let s14 = s10*vx_b + s12*vy_b;
    let s15 = (s8).recip();
    SVector::<f64, 8>::from_row_slice(&[
        s6,
        -s6 + th_b,
        s8,
        x_t,
        y_t,
        s14 + w_b*(s11 - s13),
        -s14 + w_b*(-s11 + s13 + 1.0),
        s15*s3*vy_b + s15*s5*vx_b + s15*w_b*(p.hip_offset*s0*s5 - s3*s4),
    ])
}

/// State Jacobian of touchdown_reset.
pub fn touchdown_reset_jac(p: &AslipParams, x: &SVector<f64, 8>) -> SMatrix<f64, 8, 8> {
    let (x_b, y_b, th_b, x_t, y_t, vx_b, vy_b, w_b) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_b.cos();
    let s1 = p.hip_offset*s0;
    let s2 = s1 - x_b + x_t;
    let s3 = -s2;
    let s4 = s3*s3;
    let s5 = th_b.sin();
    let s6 = p.hip_offset*s5;
    let s7 = s6 - y_b + y_t;
    let s8 = -s7;
    let s9 = s8*s8;
    let s10 = s4 + s9;
    let s11 = (s10).recip();
    let s12 = s11*s7;
    let s13 = s11*s3;
    let s14 = s12*s6;
    let s15 = s1*s13;
    let s16 = s14 - s15;
    let s17 = -s12;
    let s18 = -s13;
    let s19 = -s14 + s15 + 1.0;
    let s20 = s10.sqrt().recip();
    let s21 = s20*s3;
    let s22 = s20*s8;
    let s23 = s1*s8;
    let s24 = -p.hip_offset*s3*s5 + s23;
    let s25 = -s24;
    let s26 = s20*s25;
    let s27 = s1*s11;
    let s28 = s1*s3;
    let s29 = (s10*s10).recip();
    let s30 = 2.0*s1 - 2.0*x_b + 2.0*x_t;
    let s31 = s29*s30;
    let s32 = -p.hip_offset*s29*s30*s5*s7 + s27 + s28*s31;
    let s33 = s11*vy_b;
    let s34 = s7*vx_b;
    let s35 = s3*vy_b;
    let s36 = s31*s34 + s31*s35 + s33;
    let s37 = s11*s6;
    let s38 = 2.0*s6 - 2.0*y_b + 2.0*y_t;
    let s39 = s29*s38;
    let s40 = -p.hip_offset*s29*s38*s5*s7 + s28*s39 + s37;
    let s41 = s11*vx_b;
    let s42 = s34*s39;
    let s43 = s35*s39;
    let s44 = s29*(2.0*s23 - 2.0*s3*s6);
    let s45 = s6*s7;
    let s46 = s1*s12 + s13*s6 - s28*s44 + s44*s45;
    let s47 = s1*s41 + s33*s6 + s34*s44 + s35*s44;
    let s48 = -s29*s30;
    let s49 = s27 - s28*s48 + s45*s48;
    let s50 = -s33 + s34*s48 + s35*s48;
    let s51 = -s29*s38;
    let s52 = -s28*s51 + s37 + s45*s51;
    let s53 = s34*s51 + s35*s51 + s41;
    let s54 = s20*vx_b;
    let s55 = s20*w_b;
    let s56 = s55*s6;
    let s57 = (s10*s10*s10).sqrt().recip();
    let s58 = s57*vx_b;
    let s59 = s3*s58;
    let s60 = s57*vy_b;
    let s61 = s60*s8;
    let s62 = s25*s57*w_b;
    let s63 = s20*vy_b;
    let s64 = s1*s55;
    let s65 = p.hip_offset*p.hip_offset;
    SMatrix::<f64, 8, 8>::from_row_slice(&[
        s12,
        s13,
        s16,
        s17,
        s18,
        0.0,
        0.0,
        0.0,
        s17,
        s18,
        s19,
        s12,
        s13,
        0.0,
        0.0,
        0.0,
        s21,
        s22,
        s26,
        s2*s20,
        s20*s7,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        -s32*w_b + s36,
        -s40*w_b - s41 + s42 + s43,
        s46*w_b + s47,
        s49*w_b + s50,
        s52*w_b + s53,
        s12,
        s13,
        s16,
        s32*w_b - s36,
        s40*w_b + s41 - s42 - s43,
        -s46*w_b - s47,
        -s49*w_b - s50,
        -s52*w_b - s53,
        s17,
        s18,
        s19,
        s2*s59 + s2*s61 + s2*s62 + s54 + s56,
        s59*s7 + s61*s7 + s62*s7 + s63 - s64,
        -s1*s63 + s24*s59 + s24*s61 + s24*s62 + s54*s6 + s55*(s0*s0*s65 + s28 + s5*s5*s65 + s6*s8),
        s3*s61 + s3*s62 + s4*s58 - s54 - s56,
        s59*s8 + s60*s9 + s62*s8 - s63 + s64,
        s21,
        s22,
        s26,
    ])
}

/// Stance-to-flight reset: release the toe and map leg state to body coordinates.
pub fn liftoff_reset(p: &AslipParams, x: &SVector<f64, 8>) -> SVector<f64, 8> {
    let (th_t, th_h, l_l, x_t, y_t, w_t, w_h, v_l) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_h + th_t;
    let s1 = p.hip_offset*s0.cos();
    let s2 = th_t.cos();
    let s3 = l_l*s2 + s1;
    let s4 = p.hip_offset*s0.sin();
    let s5 = th_t.sin();
    let s6 = l_l*s5 + s4;
    SVector::<f64, 8>::from_row_slice(&[
        s3 + x_t,
        s6 + y_t,
        s0,
        x_t,
        y_t,
        s2*v_l - s4*w_h - s6*w_t,
        s1*w_h + s3*w_t + s5*v_l,
        w_h + w_t,
    ])
}

/// State Jacobian of liftoff_reset.
pub fn liftoff_reset_jac(p: &AslipParams, x: &SVector<f64, 8>) -> SMatrix<f64, 8, 8> {
    let (th_t, th_h, l_l, x_t, y_t, w_t, w_h, v_l) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_h + th_t;
    let s1 = p.hip_offset*s0.sin();
    let s2 = th_t.sin();
    let s3 = -l_l*s2 - s1;
    let s4 = -s1;
    let s5 = th_t.cos();
    let s6 = p.hip_offset*s0.cos();
    let s7 = l_l*s5 + s6;
    let s8 = s6*w_h;
    let s9 = s1*w_h;
    SMatrix::<f64, 8, 8>::from_row_slice(&[
        s3,
        s4,
        s5,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        s7,
        s6,
        s2,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        1.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        -s2*v_l - s7*w_t - s8,
        -s6*w_t - s8,
        -s2*w_t,
        0.0,
        0.0,
        s3,
        s4,
        s5,
        s3*w_t + s5*v_l - s9,
        -s1*w_t - s9,
        s5*w_t,
        0.0,
        0.0,
        s7,
        s6,
        s2,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        1.0,
        0.0,
    ])
}

/// Stance measurement: body pose and body velocity reconstructed from leg state.
pub fn stance_measurement(p: &AslipParams, x: &SVector<f64, 8>) -> SVector<f64, 6> {
    let (th_t, th_h, l_l, x_t, y_t, w_t, w_h, v_l) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_h + th_t;
    let s1 = p.hip_offset*s0.cos();
    let s2 = th_t.cos();
    let s3 = l_l*s2 + s1;
    let s4 = p.hip_offset*s0.sin();
    let s5 = th_t.sin();
    let s6 = l_l*s5 + s4;
    SVector::<f64, 6>::from_row_slice(&[
        s3 + x_t,
        s6 + y_t,
        s0,
        s2*v_l - s4*w_h - s6*w_t,
        s1*w_h + s3*w_t + s5*v_l,
        w_h + w_t,
    ])
}

/// State Jacobian of stance_measurement.
pub fn stance_measurement_jac(p: &AslipParams, x: &SVector<f64, 8>) -> SMatrix<f64, 6, 8> {
    let (th_t, th_h, l_l, x_t, y_t, w_t, w_h, v_l) =
        (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let s0 = th_h + th_t;
    let s1 = p.hip_offset*s0.sin();
    let s2 = th_t.sin();
    let s3 = -l_l*s2 - s1;
    let s4 = -s1;
    let s5 = th_t.cos();
    let s6 = p.hip_offset*s0.cos();
    let s7 = l_l*s5 + s6;
    let s8 = s6*w_h;
    let s9 = s1*w_h;
    SMatrix::<f64, 6, 8>::from_row_slice(&[
        s3,
        s4,
        s5,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        s7,
        s6,
        s2,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        1.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -s2*v_l - s7*w_t - s8,
        -s6*w_t - s8,
        -s2*w_t,
        0.0,
        0.0,
        s3,
        s4,
        s5,
        s3*w_t + s5*v_l - s9,
        -s1*w_t - s9,
        s5*w_t,
        0.0,
        0.0,
        s7,
        s6,
        s2,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        1.0,
        0.0,
    ])
}
