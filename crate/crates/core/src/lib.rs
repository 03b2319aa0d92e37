//! Difference-of-convex composite optimization for sparse least squares.
//!
//! Problems have the form `min g(x) + h1(x) − h2(x)` with `g(x) = ½‖Ax − b‖²`,
//! `h1` a weighted ℓ1 norm and `h2` convex. The main solver is an inexact
//! proximal Newton-type method whose metric is a memoryless BFGS matrix
//! `τI + u1u1ᵀ − u2u2ᵀ`; its scaled proximal subproblems are reduced to a
//! two-dimensional semi-smooth system and solved by Newton's method.
//! Proximal DCA with and without extrapolation are included as baselines,
//! together with an instance generator and a benchmark harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod instance;
pub mod metric;
pub mod problem;
pub mod rng;
pub mod scaled_prox;
pub mod solver;

pub use baselines::{pdca_solve, pdcae_solve};
pub use error::{DcError, Result};
pub use instance::{generate_instance, ProblemInstance};
pub use metric::{bfgs_metric, dependence_check, make_pair, CurvaturePair, MetricConfig, RankTwoMetric};
pub use problem::{estimate_lipschitz, prox_l1, DcProblem, LeastSquaresSmooth, Regularizer};
pub use scaled_prox::{
    sherman_morrison_apply, solve_subproblem, InnerConfig, InnerResult, InnerStatus, ProxSubproblem,
};
pub use solver::{
    criticality_residual, line_search, solve, IterRecord, IterateState, MetricMode, OuterConfig,
    RunStatus, RunTrace, StepOutcome,
};
