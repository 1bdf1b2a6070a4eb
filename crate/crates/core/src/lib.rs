//! Low-rank matrix recovery with a Schatten-p penalty, solved by an
//! extrapolated iteratively reweighted nuclear norm method whose adaptive
//! perturbations identify the rank of the solution in finitely many steps.

pub mod datagen;
pub mod diagnostics;
pub mod eps_update;
pub mod error;
pub mod model;
pub mod regularizer;
pub mod solver;
pub mod subproblem;
pub mod svd;

pub use datagen::{gen_lowrank, gen_mask, ImageTensor, InstanceSnapshot, MaskSpec, Rect};
pub use error::{Error, Result};
pub use model::{Matrix, ProblemInstance};
pub use solver::{solve, Init, SolveOutcome, SolverConfig, StopReason, Variant};
