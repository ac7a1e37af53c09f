//! State estimation for hybrid dynamical systems.
//!
//! A hybrid system flows continuously inside each discrete mode and jumps
//! between modes when a trajectory crosses a guard surface, applying a reset
//! map to the state. Propagating a Gaussian belief through such an event with
//! the reset Jacobian alone ignores the fact that nearby trajectories cross
//! the guard at *different times*; the saltation matrix corrects for this and
//! is the first-order map of state perturbations across the event.
//!
//! The crate provides:
//!
//! - [`hybrid`]: the hybrid-system abstraction (modes, guards, resets,
//!   measurement models, Gaussian beliefs, noise conventions);
//! - [`integrator`]: adaptive Dormand–Prince integration with guard event
//!   location, noisy ground-truth simulation, and flow-map linearization;
//! - [`saltation`]: the saltation matrix and the covariance update at resets;
//! - [`filters`]: the salted Kalman filter (SKF), the Jacobian-of-reset
//!   baseline (JRKF), and a hybrid bootstrap particle filter;
//! - [`systems`]: two benchmark systems — a piecewise-constant flow in the
//!   plane and an asymmetric spring-loaded inverted pendulum hopper (ASLIP);
//! - [`bench`]: a deterministic Monte-Carlo harness with MSE statistics, an
//!   exact sign test, CSV/JSON persistence, and the `skf` CLI entry points.

// `!(x > eps)`-style comparisons are used deliberately throughout: unlike the
// inverted operator, they treat NaN as "condition not met" and route it into
// the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod filters;
pub mod hybrid;
pub mod integrator;
pub mod saltation;
pub mod systems;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
