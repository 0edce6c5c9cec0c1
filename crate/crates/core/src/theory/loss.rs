use serde::{Deserialize, Serialize};

use super::world::{LatentTask, LinearWorldSpec};
use super::TheoryError;

/// Radicands at or below this get a zero subgradient.
pub const SQRT_GUARD: f64 = 1e-18;

/// Representation `phi = U diag(lambda) Q^{-1}` stored by its diagonal; `U`
/// does not affect any loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalRepresentation {
    pub lambda: Vec<f64>,
}

impl DiagonalRepresentation {
    pub fn new(lambda: Vec<f64>) -> Self {
        Self { lambda }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn norm(&self) -> f64 {
        self.lambda.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the norm bound `|lambda| <= R` up to `1e-9`.
    pub fn check_bound(&self, rep_norm_bound: f64) -> Result<(), TheoryError> {
        let n = self.norm();
        if n > rep_norm_bound + 1e-9 {
            return Err(TheoryError::NormBound {
                norm: n,
                bound: rep_norm_bound,
            });
        }
        Ok(())
    }

    /// Sum of `lambda_i^2` over `coords`.
    pub fn energy(&self, coords: &[usize]) -> f64 {
        coords.iter().map(|&i| self.lambda[i] * self.lambda[i]).sum()
    }
}

/// Population loss of the best head with `|w| <= b` on `task`:
/// `-(b / 2) |diag(lambda) (z - z')|`.
pub fn task_loss(rep: &DiagonalRepresentation, task: &LatentTask, b: f64) -> f64 {
    let sq: f64 = rep
        .lambda
        .iter()
        .zip(task.contrast())
        .map(|(l, c)| (l * c) * (l * c))
        .sum();
    -0.5 * b * sq.sqrt()
}

/// Loss on a pair of sign classes that differ exactly on `pattern`:
/// `-b sqrt(sum_{i in pattern} lambda_i^2)`.
pub fn pattern_loss(rep: &DiagonalRepresentation, pattern: &[usize], b: f64) -> f64 {
    -b * rep.energy(pattern).sqrt()
}

/// Exact average of the task loss over the finetuning distribution.
pub fn expected_loss(rep: &DiagonalRepresentation, spec: &LinearWorldSpec) -> f64 {
    let b = spec.head_norm_bound();
    let patterns = spec.patterns();
    let total: f64 = patterns.iter().map(|p| pattern_loss(rep, p, b)).sum();
    total / patterns.len() as f64
}

/// Gradient of `-expected_loss` with respect to `lambda`; coordinates whose
/// radicand is below [`SQRT_GUARD`] contribute zero.
pub fn expected_gain_gradient(rep: &DiagonalRepresentation, spec: &LinearWorldSpec) -> Vec<f64> {
    let b = spec.head_norm_bound();
    let patterns = spec.patterns();
    let mut grad = vec![0.0; rep.dim()];
    for p in patterns {
        let radicand = rep.energy(p);
        if radicand <= SQRT_GUARD {
            continue;
        }
        let scale = b / radicand.sqrt();
        for &i in p {
            grad[i] += scale * rep.lambda[i];
        }
    }
    let inv = 1.0 / patterns.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    grad
}

/// Loss on the world's target task.
pub fn target_loss(rep: &DiagonalRepresentation, spec: &LinearWorldSpec) -> f64 {
    task_loss(rep, &spec.target_task(), spec.head_norm_bound())
}
