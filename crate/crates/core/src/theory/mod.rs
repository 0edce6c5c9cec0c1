//! The linear world: latent classes, diagonal representations, closed-form
//! losses and optima, consistency and diversity, and their oracles.

mod consistency;
mod diversity;
mod loss;
mod optimum;
mod oracle;
mod verify;
mod world;

pub use consistency::{consistency_kappa, kappa_oracle};
pub use diversity::{
    construction_family, construction_point, covered_reference, diversity_nu_estimate,
    diversity_ratio, family_is_decreasing, CoveredReference, DiversityEstimate, DiversitySearch,
    Regime, DEGENERATE_DENOMINATOR,
};
pub use loss::{
    expected_gain_gradient, expected_loss, pattern_loss, target_loss, task_loss,
    DiagonalRepresentation, SQRT_GUARD,
};
pub use optimum::{
    default_start, optimal_lambda_closed, optimal_lambda_numeric, project_to_ball, uniform_on,
    AscentConfig, NumericOptimum,
};
pub use oracle::{head_oracle_min, loss_oracle_check, random_lambda, random_task, OracleCheck};
pub use verify::{lambda_deviation, verify_world, CheckRow, CheckStatus, VerifyConfig, VerifyReport};
pub use world::{
    build_main_c, Assumptions, LatentTask, LinearWorldSpec, WorldParams, ZetaMode,
    MAX_GENERAL_FEATURES,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("representation norm {norm} exceeds bound {bound}")]
    NormBound { norm: f64, bound: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("every evaluated representation had a degenerate target difference")]
    EmptyRatioDomain,
}
