//! Multitask finetuning in the linear world: a fixed set of sampled tasks,
//! closed-form heads, one envelope-gradient step per task and projection
//! back onto the Frobenius ball.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::theory::{LatentTask, LinearWorldSpec};

/// `|phi u|` at or below this yields the zero head.
pub const HEAD_KINK: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("diverged at epoch {epoch}, task {task}: {reason}")]
    Diverged {
        epoch: usize,
        task: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `phi = 0`. Every head is then zero and no step moves, so this is a
    /// fixed point of the procedure.
    Zero,
    /// Gaussian matrix rescaled to Frobenius norm `R / 2`.
    RandomBall,
    /// The target optimum `R a a^T` with `a` the unit target contrast.
    ClosedFormTarget,
}

impl std::str::FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Self::Zero),
            "random_ball" => Ok(Self::RandomBall),
            "closed_form_target" => Ok(Self::ClosedFormTarget),
            other => Err(format!(
                "unknown init `{other}` (expected zero, random_ball or closed_form_target)"
            )),
        }
    }
}

pub const DEFAULT_GAMMA: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub world: LinearWorldSpec,
    /// Number of finetuning tasks `M`.
    #[serde(rename = "M")]
    pub tasks: usize,
    /// Samples per task `m`.
    #[serde(rename = "m")]
    pub samples: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: Init,
}

impl SimConfig {
    pub fn new(world: LinearWorldSpec, tasks: usize, samples: usize, seed: u64) -> Self {
        Self {
            world,
            tasks,
            samples,
            gamma: DEFAULT_GAMMA,
            epochs: DEFAULT_EPOCHS,
            seed,
            init: Init::RandomBall,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.tasks == 0 {
            return Err(SimError::InvalidConfig("M must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(SimError::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "gamma must be finite and positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Labeled points of one finetuning task; rows of `x` are points.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub task: LatentTask,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Support {
    /// `u = (1/m) sum_j y_j x_j`.
    pub fn signal(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.x.ncols());
        for (j, &y) in self.y.iter().enumerate() {
            u += self.x.row(j).transpose() * y;
        }
        u / self.y.len() as f64
    }
}

/// Draws a task from the world's distribution and `m` noisy points for it.
/// Labels are balanced `ceil(m/2)` / `floor(m/2)` with the majority label
/// chosen by a coin, and the point order is shuffled.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, world: &LinearWorldSpec, m: usize) -> Support {
    let task = world.sample_pair(rng);
    let d = world.d();
    let sigma = world.noise_sigma();
    let majority = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut y: Vec<f64> = (0..m)
        .map(|j| if j < m.div_ceil(2) { majority } else { -majority })
        .collect();
    y.shuffle(rng);
    let mut x = DMatrix::zeros(m, d);
    for (j, &label) in y.iter().enumerate() {
        let z = if label < 0.0 { task.z() } else { task.z_prime() };
        for i in 0..d {
            let noise: f64 = if sigma > 0.0 {
                let g: f64 = StandardNormal.sample(rng);
                sigma * g
            } else {
                0.0
            };
            x[(j, i)] = z[i] as f64 + noise;
        }
    }
    Support { task, x, y }
}

/// Best head with `|w| <= b` for the per-task loss `-w^T phi u`, and that loss.
pub fn inner_head(phi: &DMatrix<f64>, u: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
    let v = phi * u;
    let n = v.norm();
    if n <= HEAD_KINK {
        return (DVector::zeros(phi.nrows()), 0.0);
    }
    (v * (b / n), -b * n)
}

/// Per-task empirical loss with the head minimized out: `-b |phi u|`.
pub fn per_task_loss(phi: &DMatrix<f64>, u: &DVector<f64>, b: f64) -> f64 {
    inner_head(phi, u, b).1
}

/// Gradient of [`per_task_loss`] with the optimal head held fixed: `-w* u^T`.
pub fn envelope_gradient(phi: &DMatrix<f64>, u: &DVector<f64>, b: f64) -> DMatrix<f64> {
    let (w, _) = inner_head(phi, u, b);
    -(w * u.transpose())
}

fn project_frobenius(phi: &mut DMatrix<f64>, radius: f64) {
    let n = phi.norm();
    if n > radius {
        *phi *= radius / n;
    }
}

/// One finetuning step on a single task: `phi += gamma w* u^T`, then
/// projection onto `|phi|_F <= R`. Returns the pre-step loss.
///
/// A step longer than the diameter `2R` of the feasible set is reported as
/// divergence, as is any non-finite state.
pub fn task_step(
    phi: &mut DMatrix<f64>,
    u: &DVector<f64>,
    gamma: f64,
    b: f64,
    radius: f64,
) -> Result<f64, String> {
    let (w, loss) = inner_head(phi, u, b);
    let step_norm = gamma * w.norm() * u.norm();
    if !step_norm.is_finite() {
        return Err("non-finite step".into());
    }
    if step_norm > 2.0 * radius {
        return Err(format!(
            "step norm {step_norm:e} exceeds the feasible diameter {:e}; reduce gamma",
            2.0 * radius
        ));
    }
    *phi += (w * u.transpose()) * gamma;
    project_frobenius(phi, radius);
    if phi.iter().any(|v| !v.is_finite()) {
        return Err("non-finite representation".into());
    }
    Ok(loss)
}

/// Target gap of a full representation:
/// `-(B/2)|phi (z2 - z1)| + (B R / 2)|z2 - z1|`, measured from the best
/// representation in the Frobenius ball.
pub fn target_gap(phi: &DMatrix<f64>, world: &LinearWorldSpec) -> f64 {
    let delta = target_contrast(world);
    let b = world.head_norm_bound();
    0.5 * b * (world.rep_norm_bound() * delta.norm() - (phi * &delta).norm())
}

fn target_contrast(world: &LinearWorldSpec) -> DVector<f64> {
    DVector::from_vec(world.target_task().contrast())
}

/// `R a a^T` with `a` the unit target contrast.
pub fn target_optimum(world: &LinearWorldSpec) -> DMatrix<f64> {
    let delta = target_contrast(world);
    let a = &delta / delta.norm();
    &a * a.transpose() * world.rep_norm_bound()
}

fn initial_phi<R: Rng + ?Sized>(init: Init, world: &LinearWorldSpec, rng: &mut R) -> DMatrix<f64> {
    let d = world.d();
    match init {
        Init::Zero => DMatrix::zeros(d, d),
        Init::RandomBall => {
            let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
            let n = g.norm();
            g * (0.5 * world.rep_norm_bound() / n)
        }
        Init::ClosedFormTarget => target_optimum(world),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Column norms `|phi e_i|`, the diagonal summary of the learned state.
    pub final_lambda: Vec<f64>,
    /// Learned representation, row-major.
    pub phi: Vec<Vec<f64>>,
    pub initial_gap: f64,
    pub target_gap: f64,
    /// Average per-task empirical loss in each epoch.
    pub trace: Vec<f64>,
}

/// Runs multitask finetuning. Tasks are sampled once up front, then each
/// epoch makes one step per task in a fixed order.
pub fn finetune(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let world = &config.world;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let signals: Vec<DVector<f64>> = (0..config.tasks)
        .map(|_| sample_task(&mut rng, world, config.samples).signal())
        .collect();
    let mut phi = initial_phi(config.init, world, &mut rng);
    let initial_gap = target_gap(&phi, world);
    let (b, r) = (world.head_norm_bound(), world.rep_norm_bound());

    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for (task, u) in signals.iter().enumerate() {
            total += task_step(&mut phi, u, config.gamma, b, r)
                .map_err(|reason| SimError::Diverged {
                    epoch,
                    task,
                    reason,
                })?;
        }
        trace.push(total / config.tasks as f64);
    }

    let final_lambda = (0..phi.ncols()).map(|i| phi.column(i).norm()).collect();
    let rows = (0..phi.nrows())
        .map(|i| phi.row(i).iter().copied().collect())
        .collect();
    Ok(SimReport {
        final_lambda,
        phi: rows,
        initial_gap,
        target_gap: target_gap(&phi, world),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(rename = "M")]
    pub tasks: usize,
    #[serde(rename = "m")]
    pub samples: usize,
    #[serde(rename = "Mm")]
    pub product: usize,
    pub mean_gap: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_gap: f64,
    pub n_seeds: usize,
}

/// Seed of replicate `rep` in cell `(tasks, samples)`.
pub fn cell_seed(base: u64, tasks: usize, samples: usize, rep: usize) -> u64 {
    seed::derive(base, &[tasks as u64, samples as u64, rep as u64])
}

/// Runs `seeds` replicates for every `(M, m)` in `tasks_list x samples_list`
/// and aggregates the target gap per cell. Cells are listed with `M` varying
/// slowest.
pub fn sweep(
    template: &SimConfig,
    tasks_list: &[usize],
    samples_list: &[usize],
    seeds: usize,
) -> Result<Vec<SweepCell>, SimError> {
    if tasks_list.is_empty() || samples_list.is_empty() || seeds == 0 {
        return Err(SimError::InvalidConfig(
            "sweep needs at least one M, one m and one seed".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = tasks_list
        .iter()
        .flat_map(|&mt| samples_list.iter().map(move |&ms| (mt, ms)))
        .collect();
    let jobs: Vec<(usize, usize, usize)> = cells
        .iter()
        .flat_map(|&(mt, ms)| (0..seeds).map(move |rep| (mt, ms, rep)))
        .collect();
    let gaps: Vec<f64> = jobs
        .par_iter()
        .map(|&(mt, ms, rep)| {
            let mut cfg = template.clone();
            cfg.tasks = mt;
            cfg.samples = ms;
            cfg.seed = cell_seed(template.seed, mt, ms, rep);
            finetune(&cfg).map(|r| r.target_gap)
        })
        .collect::<Result<_, _>>()?;

    Ok(cells
        .iter()
        .zip(gaps.chunks(seeds))
        .map(|(&(mt, ms), g)| {
            let (mean, std) = mean_std(g);
            SweepCell {
                tasks: mt,
                samples: ms,
                product: mt * ms,
                mean_gap: mean,
                std_gap: std,
                n_seeds: seeds,
            }
        })
        .collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trend of the mean gap in `M` at one fixed `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub samples: usize,
    /// `M` values in increasing order with their mean gaps.
    pub points: Vec<(usize, f64)>,
    /// Adjacent pairs where the gap increases with `M`.
    pub inversions: usize,
    /// The largest `M` has a strictly smaller gap than the smallest.
    pub improves: bool,
}

impl TrendCheck {
    pub fn passed(&self) -> bool {
        self.points.len() >= 2 && self.improves && self.inversions <= 1
    }
}

pub fn trend_in_tasks(cells: &[SweepCell], samples: usize) -> TrendCheck {
    let mut points: Vec<(usize, f64)> = cells
        .iter()
        .filter(|c| c.samples == samples)
        .map(|c| (c.tasks, c.mean_gap))
        .collect();
    points.sort_by_key(|p| p.0);
    let inversions = points.windows(2).filter(|w| w[1].1 > w[0].1).count();
    let improves = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() >= 2 => b.1 < a.1,
        _ => false,
    };
    TrendCheck {
        samples,
        points,
        inversions,
        improves,
    }
}

/// Two cells with the same `Mm` and their relative difference in mean gap,
/// `|a - b| / ((|a| + |b|) / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCheck {
    pub first: (usize, usize),
    pub second: (usize, usize),
    pub relative_difference: f64,
}

pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = 0.5 * (a.abs() + b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Every pair of distinct cells sharing a product `Mm`, in cell order.
pub fn equal_product_pairs(cells: &[SweepCell]) -> Vec<ProductCheck> {
    let mut out = Vec::new();
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            if a.product == b.product {
                out.push(ProductCheck {
                    first: (a.tasks, a.samples),
                    second: (b.tasks, b.samples),
                    relative_difference: relative_difference(a.mean_gap, b.mean_gap),
                });
            }
        }
    }
    out
}
