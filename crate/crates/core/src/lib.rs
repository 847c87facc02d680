//! Newton-step solvers for moving horizon estimation.
//!
//! The estimation problem is rewritten as an equality-constrained finite
//! horizon QP ([`mhe::mhe_to_uftoc`]) and solved either by the serial Riccati
//! recursion ([`riccati::solve_serial`]) or by the tree-parallel variant
//! ([`tree::TreeSolver`]), which reduces batches of stages independently and
//! needs only a logarithmic number of sequential phases. A dense KKT solver and
//! a Kalman/RTS smoother ([`oracles`]) serve as independent references.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); file I/O,
//! problem generation and benchmarking work in `f64`.

pub mod bench;
pub mod error;
pub mod generate;
pub mod io;
pub mod linalg;
pub mod mhe;
pub mod oracles;
pub mod problem;
pub mod reduction;
pub mod riccati;
pub mod scalar;
pub mod tree;

pub use error::{Result, SolveError};
pub use mhe::{extract_mhe_solution, mhe_to_uftoc, MheEstimate};
pub use oracles::{dense_kkt_solve, rts_smooth};
pub use problem::{
    eval_objective, kkt_residual, validate_uftoc, KktResidual, MheProblem, MheStage, Problem, Solution, Stage,
    Terminal, UftocProblem, ValidationReport,
};
pub use reduction::{expand_subproblem, reduce_subproblem, BatchCache, ReducedStage};
pub use riccati::{solve_serial, CostToGo};
pub use scalar::Scalar;
pub use tree::{plan_tree, solve_parallel, ExpansionMode, TreeOptions, TreePlan, TreeSolver, TreeStats};

pub type UftocProblemF64 = UftocProblem<f64>;
pub type UftocProblemF32 = UftocProblem<f32>;
pub type MheProblemF64 = MheProblem<f64>;
pub type MheProblemF32 = MheProblem<f32>;
pub type SolutionF64 = Solution<f64>;
pub type SolutionF32 = Solution<f32>;
