//! Inter-area oscillation energy of linearized swing dynamics and a
//! semidefinite relaxation of optimal power flow that trades generation cost
//! against it.
//!
//! The pipeline runs bottom-up:
//!
//! * [`casefile`] reads MATPOWER cases and the dynamics sidecar,
//! * [`network`] builds the admittance matrix, Kron-reduces it to the
//!   synchronous buses and produces the quadratic forms of the power-flow
//!   constraints,
//! * [`dynamics`] turns an operating point into the swing Laplacian, its
//!   mass-scaled spectrum and the band energy metric `f_y`,
//! * [`sdp`] assembles the lifted conic program and [`solver`] solves it,
//! * [`recovery`] checks exactness and verifies the recovered dispatch,
//! * [`ambient`] is a Monte-Carlo check of the variance formulas,
//! * [`synthetic`] generates random networks for property checks.
//!
//! [`pipeline`] wires the pieces together for a single trade-off point.

extern crate openblas_src;

pub mod ambient;
pub mod casefile;
pub mod dynamics;
pub mod error;
pub mod network;
pub mod pipeline;
pub mod recovery;
pub mod sdp;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};

/// Complex scalar used for phasors and admittances.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;
