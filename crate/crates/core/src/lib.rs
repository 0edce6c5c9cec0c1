//! Task selection by consistency and diversity, and a linear toy world for
//! multitask finetuning with closed forms checked against brute-force oracles.
//!
//! * [`stats`]: Gaussian summaries, cosine similarity, Mahalanobis coverage.
//! * [`selection`]: greedy consistency-diversity task selection.
//! * [`theory`]: the linear world, closed-form losses and optima, consistency
//!   and diversity quantities, and the verification suite.
//! * [`sim`]: multitask finetuning simulator and `(M, m)` sweeps.
//! * [`io`]: embedding, manifest, world-spec and report formats.

pub mod fixtures;
pub mod io;
pub mod seed;
pub mod selection;
pub mod sim;
pub mod stats;
pub mod theory;

pub use selection::{
    rank_by_consistency, select, RankedTask, SelectionConfig, SelectionError, SelectionResult,
    StopReason, TraceRecord,
};
pub use sim::{finetune, sweep, Init, SimConfig, SimError, SimReport, SweepCell};
pub use stats::{
    cos_sim, coverage, coverage_detail, summarize, Coverage, CoverageDetail, EmbeddingSet,
    GaussianSummary, Ridge, StatsError,
};
pub use theory::{
    DiagonalRepresentation, LatentTask, LinearWorldSpec, TheoryError, WorldParams, ZetaMode,
};

/// Version string embedded in every written report.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
