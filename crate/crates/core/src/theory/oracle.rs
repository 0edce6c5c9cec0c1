//! Monte-Carlo head oracle for the task loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::loss::{task_loss, DiagonalRepresentation};
use super::world::LatentTask;
use crate::seed;

/// Smallest value of `-(b / 2) w^T diag(lambda) (z' - z)` over `samples`
/// random unit heads `w`, scaled to norm `b` inside the objective.
///
/// Heads are drawn uniformly on the unit sphere of the coordinates where
/// `diag(lambda) (z' - z)` is nonzero; any other component of `w` only
/// lowers the inner product. Returns 0 when that vector vanishes.
pub fn head_oracle_min<R: Rng + ?Sized>(
    rep: &DiagonalRepresentation,
    task: &LatentTask,
    b: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let v: Vec<f64> = rep
        .lambda
        .iter()
        .zip(task.contrast())
        .map(|(l, c)| l * c)
        .collect();
    let support: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    if support.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    let mut w = vec![0.0; support.len()];
    for _ in 0..samples {
        for x in w.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            continue;
        }
        let dot: f64 = support.iter().zip(&w).map(|(&i, x)| v[i] * x).sum();
        best = best.min(-0.5 * b * dot / n);
    }
    best
}

/// Random latent pair in dimension `d` differing on between 1 and
/// `max_diff` coordinates.
pub fn random_task<R: Rng + ?Sized>(d: usize, max_diff: usize, rng: &mut R) -> LatentTask {
    let z: Vec<i8> = (0..d).map(|_| rng.random_range(-1i8..=1)).collect();
    let k = rng.random_range(1..=max_diff.clamp(1, d));
    let mut idx: Vec<usize> = (0..d).collect();
    let mut zp = z.clone();
    for t in 0..k {
        let j = rng.random_range(t..d);
        idx.swap(t, j);
        let i = idx[t];
        let shift = rng.random_range(1i8..=2);
        zp[i] = (z[i] + 1 + shift) % 3 - 1;
    }
    LatentTask::new(z, zp).expect("pair differs on at least one coordinate")
}

/// Random point of the ball `|lambda| <= radius` in dimension `d`.
pub fn random_lambda<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> DiagonalRepresentation {
    let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v *= r / n);
    }
    DiagonalRepresentation::new(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub pairs: usize,
    /// Largest `|mc - closed| / |closed|` over pairs with nonzero loss.
    pub worst_relative: f64,
    /// Largest `closed - mc`; positive values mean the closed form failed
    /// to lower-bound the sampled minimum.
    pub worst_violation: f64,
}

impl OracleCheck {
    pub fn passed(&self, rel_tol: f64) -> bool {
        self.worst_relative <= rel_tol && self.worst_violation <= 1e-12
    }
}

/// Compares [`task_loss`] with [`head_oracle_min`] over `pairs` random
/// `(lambda, task)` draws in dimension `d`, tasks differing on at most three
/// coordinates. Pairs run in parallel, each on its own derived stream.
pub fn loss_oracle_check(
    d: usize,
    radius: f64,
    b: f64,
    pairs: usize,
    heads: usize,
    seed: u64,
) -> OracleCheck {
    let results: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[k as u64]));
            let rep = random_lambda(d, radius, &mut rng);
            let task = random_task(d, 3, &mut rng);
            let closed = task_loss(&rep, &task, b);
            let mc = head_oracle_min(&rep, &task, b, heads, &mut rng);
            let rel = if closed != 0.0 {
                (mc - closed).abs() / closed.abs()
            } else {
                mc.abs()
            };
            (rel, closed - mc)
        })
        .collect();
    let worst_relative = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_violation = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    OracleCheck {
        pairs,
        worst_relative,
        worst_violation,
    }
}
