//! Schrödinger bridges built on Feynman-Kac kernels.
//!
//! Every numerical type is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the bottom fix the precision for callers that do not care.

// `!(x > 0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// quadrature loops index several arrays with one node index
#![allow(clippy::needless_range_loop)]

pub mod bridge;
pub mod cases;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod potentials;
pub mod scalar;

pub use bridge::{BridgeProblem, BridgeSolution, PdeOptions, SolveOptions, TransitionDensity};
pub use cases::{CaseDefinition, CaseName, Quantity};
pub use diffusion::{PathEnsemble, SimulationConfig};
pub use error::{Error, Result};
pub use grid::{Grid, Profile, TimeGrid};
pub use kernel::{KernelMatrix, McConfig, McEstimate};
pub use potentials::{PotentialKind, PotentialSpec};
pub use scalar::Scalar;

pub type Grid64 = Grid<f64>;
pub type Profile64 = Profile<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type KernelMatrix64 = KernelMatrix<f64>;
pub type PotentialSpec64 = PotentialSpec<f64>;
pub type BridgeProblem64 = BridgeProblem<f64>;
pub type BridgeSolution64 = BridgeSolution<f64>;
pub type TransitionDensity64 = TransitionDensity<f64>;
pub type PathEnsemble64 = PathEnsemble<f64>;

pub type Grid32 = Grid<f32>;
pub type Profile32 = Profile<f32>;
pub type KernelMatrix32 = KernelMatrix<f32>;
pub type BridgeSolution32 = BridgeSolution<f32>;
