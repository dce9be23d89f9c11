//! Classical and quantum linear-Gaussian state estimation.
//!
//! The library simulates linear Gaussian (quantum) systems driven by
//! continuous diffusive measurement, runs the matching estimators, and
//! analyses their steady states:
//!
//! - [`gaussian`]: Gaussian states, symplectic forms, the uncertainty check,
//!   convolution, and a symmetric pseudo-inverse.
//! - [`model`]: physical system specifications (quadratic Hamiltonian, linear
//!   couplings, unravelling matrices) and the derived real moment matrices.
//! - [`classical`]: Langevin simulation with correlated noises, the
//!   Kalman-Bucy filter, an information-form retrofilter, the RTS smoother
//!   and the two-filter (MFP) combiner.
//! - [`quantum`]: true-state simulation under two records, the quantum
//!   filter, halo construction, and the quantum RTS/MFP smoothers with
//!   degenerate-covariance handling.
//! - [`steady_state`]: Riccati fixed points and the differentiability
//!   condition for the smoothed mean.
//! - [`synthetic`]: seeded random model generators for the equivalence
//!   batteries and the oracle suite.

pub mod classical;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod quantum;
pub mod steady_state;
pub mod synthetic;

pub use error::{Error, Result};
