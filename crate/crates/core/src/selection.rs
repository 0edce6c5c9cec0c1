//! Consistency-diversity task selection.
//!
//! Candidates are ranked by cosine similarity between their mean embedding
//! and the target's mean. The selected pool starts with the best-ranked
//! candidate and grows in rank order for as long as each addition raises the
//! pool's coverage of the target mean by at least a factor `1 + p`. The first
//! candidate that fails the test ends the selection.

use std::collections::HashSet;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, Coverage, EmbeddingSet, Ridge, StatsError};

pub const DEFAULT_THRESHOLD_P: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("no candidate tasks")]
    NoCandidates,
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("threshold p must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("max_selected must be at least 1")]
    InvalidMaxSelected,
    #[error("target `{task_id}`: {source}")]
    Target {
        task_id: String,
        #[source]
        source: StatsError,
    },
    #[error("candidate `{task_id}`: {source}")]
    Candidate {
        task_id: String,
        #[source]
        source: StatsError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub threshold_p: f64,
    pub ridge: Ridge,
    pub max_selected: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold_p: DEFAULT_THRESHOLD_P,
            ridge: Ridge::Auto,
            max_selected: None,
        }
    }
}

impl SelectionConfig {
    fn validate(&self) -> Result<(), SelectionError> {
        if !self.threshold_p.is_finite() || self.threshold_p < 0.0 {
            return Err(SelectionError::InvalidThreshold(self.threshold_p));
        }
        if self.max_selected == Some(0) {
            return Err(SelectionError::InvalidMaxSelected);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedTask {
    pub task_id: String,
    pub similarity: f64,
    /// Position of the task in the caller's candidate list.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CoveragePlateau,
    Exhausted,
    MaxSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub task_id: String,
    pub similarity: f64,
    /// `None` for the seed task, which is admitted unconditionally.
    pub coverage_before: Option<Coverage>,
    pub coverage_after: Coverage,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    pub trace: Vec<TraceRecord>,
    pub stop_reason: StopReason,
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), SelectionError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(SelectionError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

fn set_mean(set: &EmbeddingSet) -> Result<DVector<f64>, StatsError> {
    stats::summarize([set]).map(|g| g.mean)
}

/// Orders candidates by cosine similarity of means to the target mean,
/// descending; ties go to the lexicographically smaller task id.
pub fn rank_by_consistency(
    candidates: &[EmbeddingSet],
    target: &EmbeddingSet,
) -> Result<Vec<RankedTask>, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    check_unique_ids(candidates.iter().map(EmbeddingSet::task_id))?;
    let target_err = |source| SelectionError::Target {
        task_id: target.task_id().to_string(),
        source,
    };
    let target_mean = set_mean(target).map_err(target_err)?;
    if target_mean.norm() == 0.0 {
        return Err(target_err(StatsError::ZeroNorm("target mean".into())));
    }

    let similarities: Vec<Result<f64, SelectionError>> = candidates
        .par_iter()
        .map(|c| {
            let wrap = |source| SelectionError::Candidate {
                task_id: c.task_id().to_string(),
                source,
            };
            if c.d() != target.d() {
                return Err(wrap(StatsError::DimensionMismatch {
                    context: "candidate vs target".into(),
                    expected: target.d(),
                    found: c.d(),
                }));
            }
            let mean = set_mean(c).map_err(wrap)?;
            if mean.norm() == 0.0 {
                return Err(wrap(StatsError::ZeroNorm("candidate mean".into())));
            }
            stats::cos_sim(&target_mean, &mean).map_err(wrap)
        })
        .collect();

    let mut ranked = Vec::with_capacity(candidates.len());
    for (index, (c, sim)) in candidates.iter().zip(similarities).enumerate() {
        ranked.push(RankedTask {
            task_id: c.task_id().to_string(),
            similarity: sim?,
            index,
        });
    }
    ranked.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.task_id.cmp(&b.task_id))
    });
    Ok(ranked)
}

/// Greedy consistency-diversity selection over `candidates` for `target`.
pub fn select(
    candidates: &[EmbeddingSet],
    target: &EmbeddingSet,
    config: &SelectionConfig,
) -> Result<SelectionResult, SelectionError> {
    config.validate()?;
    let ranked = rank_by_consistency(candidates, target)?;
    let target_mean = set_mean(target).map_err(|source| SelectionError::Target {
        task_id: target.task_id().to_string(),
        source,
    })?;

    let pool_coverage = |pool: &[&EmbeddingSet]| -> Result<Coverage, StatsError> {
        let summary = stats::summarize(pool.iter().copied())?;
        stats::coverage(&summary, &target_mean, config.ridge)
    };

    let seed = &ranked[0];
    let mut pool: Vec<&EmbeddingSet> = vec![&candidates[seed.index]];
    let mut current = pool_coverage(&pool).map_err(|source| SelectionError::Candidate {
        task_id: seed.task_id.clone(),
        source,
    })?;
    let mut trace = vec![TraceRecord {
        task_id: seed.task_id.clone(),
        similarity: seed.similarity,
        coverage_before: None,
        coverage_after: current,
        accepted: true,
    }];

    let mut stop_reason = StopReason::Exhausted;
    for next in &ranked[1..] {
        if config.max_selected.is_some_and(|cap| pool.len() >= cap) {
            stop_reason = StopReason::MaxSelected;
            break;
        }
        pool.push(&candidates[next.index]);
        let after = pool_coverage(&pool).map_err(|source| SelectionError::Candidate {
            task_id: next.task_id.clone(),
            source,
        })?;
        let accepted = after.increases_over(current, config.threshold_p);
        trace.push(TraceRecord {
            task_id: next.task_id.clone(),
            similarity: next.similarity,
            coverage_before: Some(current),
            coverage_after: after,
            accepted,
        });
        if !accepted {
            pool.pop();
            stop_reason = StopReason::CoveragePlateau;
            break;
        }
        current = after;
    }

    Ok(SelectionResult {
        selected: pool.iter().map(|s| s.task_id().to_string()).collect(),
        trace,
        stop_reason,
    })
}
