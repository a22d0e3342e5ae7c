// contraction code indexes tensors the way the equations are written
#![allow(clippy::needless_range_loop)]

//! Dynamics of Lagrangian systems with nonholonomic linear constraints,
//! organized around anholonomic frames and quasi-velocities.
//!
//! The library builds the constrained second-order dynamics directly on the
//! constraint submanifold, verifies it against an independent
//! Lagrange-multiplier formulation, reduces systems that are invariant under
//! a Lie group action, performs Routh reduction when horizontal symmetries
//! exist, and ships a small zoo of example systems plus a verification
//! harness used by the CLI.

pub mod csvio;
pub mod error;
pub mod frame;
pub mod hamel;
pub mod jet;
pub mod linalg;
pub mod reduction;
pub mod rng;
pub mod routh;
pub mod tensor;
pub mod verify;
pub mod zoo;

pub use error::{Error, Result};

// re-exported so downstream crates and the test suites use the same
// linear-algebra types as the public API
pub use nalgebra;
