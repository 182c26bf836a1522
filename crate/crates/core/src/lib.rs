//! Linear-quadratic control of stochastic Volterra integral equations on a
//! uniform grid.
//!
//! The crate solves the four-component Riccati system, turns a solution into a
//! causal feedback strategy, simulates the closed loop on the forecast-curve
//! state, and provides exact discrete oracles (lifted dynamic programming and a
//! dense quadratic program) to cross-check all of it.

pub mod algebra;
pub mod closed_loop;
pub mod error;
pub mod feedback;
pub mod fields;
pub mod grid;
pub mod instances;
pub mod kernels;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod riccati;
pub mod rng;

pub use algebra::{aggregate, mul_134, mul_23, sandwich, RiccatiSolution, Side, SumOrder};
pub use error::{Error, Result};
pub use fields::{KernelField, NodeField, PyramidField, SquareField};
pub use grid::TimeGrid;
pub use kernels::{sample_kernel, KernelSpec, MatrixSpec, ScalarFn};
pub use problem::{
    build_input, build_problem, validate_assumptions, AssumptionReport, InputCondition, InputSpec, ProblemConfig,
    ProblemInstance,
};
