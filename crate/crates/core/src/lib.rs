//! Differentiable open-quantum-system dynamics.
//!
//! The crate integrates the Lindblad master equation with an adaptive
//! Runge–Kutta method, differentiates the solve in forward and reverse
//! mode, differentiates the Hermitian eigendecomposition of the result
//! (including at eigenvalue multiplicity), and combines these into the
//! quantum Fisher information of a state-preparation protocol and its exact
//! gradient.

pub mod eigen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod qfi;
pub mod sensitivity;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CSparse, OperatorHandle, C64};
pub use model::{DensityOperator, JumpChannel, LindbladModel};
pub use solver::{integrate, SolveConfig, SolveResult};
