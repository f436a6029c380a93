//! Divide-factor-combine toolkit for noisy matrix completion and robust
//! matrix factorization.
//!
//! A large problem is split into column blocks (or a column and a row
//! sample), each block is factored independently by a nuclear-norm solver,
//! and the block estimates are merged by column projection, random
//! projection or a generalized Nyström step.

pub mod bench;
pub mod dfc;
pub mod diagnostics;
pub mod error;
pub mod matio;
pub mod parallel;
pub mod sampling;
pub mod simgen;
pub mod sketch;
pub mod solvers;

mod linalg;

pub use dfc::{run_dfc, DfcConfig, DfcReport, Task, Variant};
pub use error::{DfcError, Result};
pub use matio::{DenseMatrix, Entry, LowRankEstimate, ObservedMatrix};
pub use sampling::SeededRng;
pub use solvers::{ApgConfig, BaseSolver, McSolver, RmfSolver, SolveReport};
