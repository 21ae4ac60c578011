//! Single-loop first-order solver for bilevel problems whose lower level has
//! linear constraints coupling both levels.

pub mod benchmarks;
pub mod error;
pub mod experiment;
pub mod lagrangian;
pub mod linalg;
mod optim;
pub mod oracle;
pub mod problem;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};
pub use lagrangian::{PenaltyConfig, SaddleState};
pub use problem::{BilevelProblem, LinearCoupledConstraint, SmoothnessConstants};
pub use solver::{run, sflcb_step, IterationTrace, SolverConfig, StepSizes};
