use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TheoryError;

/// Largest `k_C` accepted for the all-sign-patterns class family.
pub const MAX_GENERAL_FEATURES: usize = 16;

/// How finetuning tasks are drawn from the latent classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaMode {
    /// The `k_C` classes with a single `-1` among the finetuning features,
    /// uniform over unordered distinct pairs. Every pair differs in exactly
    /// two coordinates.
    UniformPairsMainC,
    /// All `2^k_C` sign patterns on the finetuning features, uniform over
    /// unordered distinct pairs, optionally restricted to pairs at Hamming
    /// distance `pair_distance`.
    UniformPairsGeneral,
}

impl fmt::Display for ZetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZetaMode::UniformPairsMainC => "uniform_pairs_main_c",
            ZetaMode::UniformPairsGeneral => "uniform_pairs_general",
        })
    }
}

fn one() -> f64 {
    1.0
}

/// Raw, unvalidated world description; also the world-spec file schema.
///
/// Feature indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    pub d: usize,
    pub finetune_features: Vec<usize>,
    pub target_features: Vec<usize>,
    pub target_pair: [Vec<i8>; 2],
    #[serde(default = "one")]
    pub rep_norm_bound: f64,
    #[serde(default = "one")]
    pub head_norm_bound: f64,
    pub zeta: ZetaMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_distance: Option<usize>,
    #[serde(default)]
    pub noise_sigma: f64,
}

/// A binary task on two latent classes; `z` carries label `-1` and
/// `z_prime` label `+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentTask {
    z: Vec<i8>,
    z_prime: Vec<i8>,
}

impl LatentTask {
    pub fn new(z: Vec<i8>, z_prime: Vec<i8>) -> Result<Self, TheoryError> {
        if z.len() != z_prime.len() {
            return Err(TheoryError::InvalidTask(format!(
                "latent classes have lengths {} and {}",
                z.len(),
                z_prime.len()
            )));
        }
        if let Some(bad) = z.iter().chain(&z_prime).find(|v| !(-1..=1).contains(*v)) {
            return Err(TheoryError::InvalidTask(format!(
                "latent entries must be in {{-1, 0, 1}}, found {bad}"
            )));
        }
        if z == z_prime {
            return Err(TheoryError::InvalidTask(
                "the two latent classes are identical".into(),
            ));
        }
        Ok(Self { z, z_prime })
    }

    pub fn z(&self) -> &[i8] {
        &self.z
    }

    pub fn z_prime(&self) -> &[i8] {
        &self.z_prime
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Coordinates where the two classes differ.
    pub fn diff_set(&self) -> Vec<usize> {
        (0..self.z.len()).filter(|&i| self.z[i] != self.z_prime[i]).collect()
    }

    /// `z_prime - z` as reals.
    pub fn contrast(&self) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.z_prime)
            .map(|(&a, &b)| f64::from(b) - f64::from(a))
            .collect()
    }

    /// Same pair with the labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            z: self.z_prime.clone(),
            z_prime: self.z.clone(),
        }
    }
}

/// Which structural assumptions on the task distribution hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assumptions {
    /// Exchanging two finetuning coordinates leaves the distribution fixed.
    pub symmetric: bool,
    /// A pair of finetuning coordinates `(i, j)` such that `j` never differs
    /// without `i` also differing, if any.
    pub co_flipping: Option<(usize, usize)>,
    /// Common Hamming distance of every finetuning pair, if there is one.
    pub fixed_distance: Option<usize>,
}

impl Assumptions {
    pub fn non_degenerate(&self) -> bool {
        self.co_flipping.is_none()
    }
}

/// Validated linear world: dimensions, feature index sets, target pair,
/// norm bounds and the finetuning task distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldParams", into = "WorldParams")]
pub struct LinearWorldSpec {
    params: WorldParams,
    /// Differing-coordinate sets of the finetuning pairs, one entry per
    /// equally weighted pattern.
    patterns: Vec<Vec<usize>>,
}

fn index_set(name: &str, d: usize, raw: &[usize]) -> Result<Vec<usize>, TheoryError> {
    if raw.is_empty() {
        return Err(TheoryError::InvalidWorld(format!("{name} must not be empty")));
    }
    let set: BTreeSet<usize> = raw.iter().copied().collect();
    if set.len() != raw.len() {
        return Err(TheoryError::InvalidWorld(format!(
            "{name} contains duplicate indices"
        )));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= d) {
        return Err(TheoryError::InvalidWorld(format!(
            "{name} index {bad} out of range for d = {d}"
        )));
    }
    Ok(set.into_iter().collect())
}

impl LinearWorldSpec {
    pub fn new(mut params: WorldParams) -> Result<Self, TheoryError> {
        let d = params.d;
        if d == 0 {
            return Err(TheoryError::InvalidWorld("d must be at least 1".into()));
        }
        params.finetune_features = index_set("finetune_features", d, &params.finetune_features)?;
        params.target_features = index_set("target_features", d, &params.target_features)?;
        let k_c = params.finetune_features.len();

        for (name, v) in [
            ("rep_norm_bound", params.rep_norm_bound),
            ("head_norm_bound", params.head_norm_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TheoryError::InvalidWorld(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(params.noise_sigma.is_finite() && params.noise_sigma >= 0.0) {
            return Err(TheoryError::InvalidWorld(format!(
                "noise_sigma must be finite and non-negative, got {}",
                params.noise_sigma
            )));
        }

        for (which, z) in params.target_pair.iter().enumerate() {
            if z.len() != d {
                return Err(TheoryError::InvalidWorld(format!(
                    "target_pair[{which}] has length {}, expected d = {d}",
                    z.len()
                )));
            }
            if let Some(bad) = z.iter().find(|v| !(-1..=1).contains(*v)) {
                return Err(TheoryError::InvalidWorld(format!(
                    "target_pair[{which}] entries must be in {{-1, 0, 1}}, found {bad}"
                )));
            }
            let support: Vec<usize> = (0..d).filter(|&i| z[i] != 0).collect();
            if support != params.target_features {
                return Err(TheoryError::InvalidWorld(format!(
                    "target_pair[{which}] support {support:?} differs from target_features {:?}",
                    params.target_features
                )));
            }
        }
        if params.target_pair[0] == params.target_pair[1] {
            return Err(TheoryError::InvalidWorld(
                "target_pair classes are identical".into(),
            ));
        }

        let j_c = params.finetune_features.clone();
        let patterns = match params.zeta {
            ZetaMode::UniformPairsMainC => {
                if k_c < 2 {
                    return Err(TheoryError::InvalidWorld(format!(
                        "uniform_pairs_main_c needs at least 2 finetune features, got {k_c}"
                    )));
                }
                if let Some(n_k) = params.pair_distance {
                    if n_k != 2 {
                        return Err(TheoryError::InvalidWorld(format!(
                            "uniform_pairs_main_c pairs differ in exactly 2 entries, pair_distance = {n_k}"
                        )));
                    }
                }
                let mut out = Vec::with_capacity(k_c * (k_c - 1) / 2);
                for s in 0..k_c {
                    for t in s + 1..k_c {
                        out.push(vec![j_c[s], j_c[t]]);
                    }
                }
                out
            }
            ZetaMode::UniformPairsGeneral => {
                if k_c > MAX_GENERAL_FEATURES {
                    return Err(TheoryError::InvalidWorld(format!(
                        "uniform_pairs_general supports at most {MAX_GENERAL_FEATURES} finetune features, got {k_c}"
                    )));
                }
                if let Some(n_k) = params.pair_distance {
                    if n_k == 0 || n_k > k_c {
                        return Err(TheoryError::InvalidWorld(format!(
                            "pair_distance must be in 1..={k_c}, got {n_k}"
                        )));
                    }
                }
                (1u32..(1u32 << k_c))
                    .filter(|mask| {
                        params
                            .pair_distance
                            .is_none_or(|n_k| mask.count_ones() as usize == n_k)
                    })
                    .map(|mask| {
                        (0..k_c)
                            .filter(|b| mask & (1 << b) != 0)
                            .map(|b| j_c[b])
                            .collect()
                    })
                    .collect()
            }
        };

        Ok(Self { params, patterns })
    }

    /// Main-text world: `k_c` finetuning features `0..k_c`, a target pair
    /// differing in the single coordinate `target_coord`, unit norm bounds.
    pub fn main_text(d: usize, k_c: usize, target_coord: usize) -> Result<Self, TheoryError> {
        let mut z1 = vec![0i8; d];
        let mut z2 = vec![0i8; d];
        if target_coord < d {
            z1[target_coord] = -1;
            z2[target_coord] = 1;
        }
        Self::new(WorldParams {
            d,
            finetune_features: (0..k_c).collect(),
            target_features: vec![target_coord],
            target_pair: [z1, z2],
            rep_norm_bound: 1.0,
            head_norm_bound: 1.0,
            zeta: ZetaMode::UniformPairsMainC,
            pair_distance: None,
            noise_sigma: 0.0,
        })
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn finetune_features(&self) -> &[usize] {
        &self.params.finetune_features
    }

    pub fn target_features(&self) -> &[usize] {
        &self.params.target_features
    }

    pub fn k_c(&self) -> usize {
        self.params.finetune_features.len()
    }

    pub fn k_0(&self) -> usize {
        self.params.target_features.len()
    }

    pub fn rep_norm_bound(&self) -> f64 {
        self.params.rep_norm_bound
    }

    pub fn head_norm_bound(&self) -> f64 {
        self.params.head_norm_bound
    }

    pub fn zeta(&self) -> ZetaMode {
        self.params.zeta
    }

    pub fn noise_sigma(&self) -> f64 {
        self.params.noise_sigma
    }

    /// Returns a copy with a different noise level.
    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self, TheoryError> {
        let mut params = self.params.clone();
        params.noise_sigma = noise_sigma;
        Self::new(params)
    }

    pub fn target_task(&self) -> LatentTask {
        let [z1, z2] = self.params.target_pair.clone();
        LatentTask { z: z1, z_prime: z2 }
    }

    /// Coordinates where the target classes differ.
    pub fn target_diff(&self) -> Vec<usize> {
        self.target_task().diff_set()
    }

    pub fn n_0(&self) -> usize {
        self.target_diff().len()
    }

    /// Target-differing coordinates that are also finetuning features.
    pub fn n_c(&self) -> usize {
        self.target_diff()
            .iter()
            .filter(|i| self.params.finetune_features.contains(i))
            .count()
    }

    /// Target features that are also finetuning features.
    pub fn l_c(&self) -> usize {
        self.params
            .target_features
            .iter()
            .filter(|i| self.params.finetune_features.contains(i))
            .count()
    }

    /// First target-differing coordinate outside the finetuning features.
    pub fn uncovered_coordinate(&self) -> Option<usize> {
        self.target_diff()
            .into_iter()
            .find(|i| !self.params.finetune_features.contains(i))
    }

    pub fn is_covered(&self) -> bool {
        self.uncovered_coordinate().is_none()
    }

    /// Differing-coordinate sets of the finetuning distribution; each has the
    /// same probability.
    pub fn patterns(&self) -> &[Vec<usize>] {
        &self.patterns
    }

    /// Latent classes of the finetuning family, in their canonical order.
    pub fn latent_classes(&self) -> Vec<Vec<i8>> {
        let j_c = &self.params.finetune_features;
        let k_c = j_c.len();
        match self.params.zeta {
            ZetaMode::UniformPairsMainC => {
                (0..k_c).map(|t| main_class(self.params.d, j_c, k_c - 1 - t)).collect()
            }
            ZetaMode::UniformPairsGeneral => (0u32..(1u32 << k_c))
                .map(|bits| sign_class(self.params.d, j_c, bits))
                .collect(),
        }
    }

    /// Every unordered distinct pair of the finetuning distribution, each
    /// once. Returns `None` when there would be more than `limit` pairs.
    pub fn enumerate_tasks(&self, limit: usize) -> Option<Vec<LatentTask>> {
        let classes = self.latent_classes();
        let total = classes.len() * classes.len().saturating_sub(1) / 2;
        if total > limit {
            return None;
        }
        let mut tasks = Vec::new();
        for a in 0..classes.len() {
            for b in a + 1..classes.len() {
                let diff = (0..self.params.d)
                    .filter(|&i| classes[a][i] != classes[b][i])
                    .count();
                if self.params.pair_distance.is_some_and(|n_k| diff != n_k) {
                    continue;
                }
                tasks.push(LatentTask {
                    z: classes[a].clone(),
                    z_prime: classes[b].clone(),
                });
            }
        }
        Some(tasks)
    }

    /// Draws an unordered distinct pair uniformly and assigns labels by a
    /// fair coin.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentTask {
        let d = self.params.d;
        let j_c = &self.params.finetune_features;
        let k_c = j_c.len();
        let task = match self.params.zeta {
            ZetaMode::UniformPairsMainC => {
                let s = rng.random_range(0..k_c);
                let mut t = rng.random_range(0..k_c - 1);
                if t >= s {
                    t += 1;
                }
                LatentTask {
                    z: main_class(d, j_c, s),
                    z_prime: main_class(d, j_c, t),
                }
            }
            ZetaMode::UniformPairsGeneral => {
                let pattern = &self.patterns[rng.random_range(0..self.patterns.len())];
                let bits: u32 = rng.random_range(0..(1u32 << k_c));
                let z = sign_class(d, j_c, bits);
                let mut z_prime = z.clone();
                for &i in pattern {
                    z_prime[i] = -z_prime[i];
                }
                LatentTask { z, z_prime }
            }
        };
        if rng.random_bool(0.5) {
            task.swapped()
        } else {
            task
        }
    }

    /// Checks the symmetry, non-degeneracy and fixed-distance conditions on
    /// the finetuning distribution.
    pub fn assumptions(&self) -> Assumptions {
        let j_c = &self.params.finetune_features;
        let mut co_flipping = None;
        'outer: for &i in j_c {
            for &j in j_c {
                if i == j {
                    continue;
                }
                let separated = self
                    .patterns
                    .iter()
                    .any(|p| p.contains(&j) && !p.contains(&i));
                if !separated {
                    co_flipping = Some((i, j));
                    break 'outer;
                }
            }
        }
        let first = self.patterns.first().map(Vec::len);
        let fixed_distance = first.filter(|&n| self.patterns.iter().all(|p| p.len() == n));
        Assumptions {
            // both families are closed under permutations of the finetuning coordinates
            symmetric: true,
            co_flipping,
            fixed_distance,
        }
    }
}

impl TryFrom<WorldParams> for LinearWorldSpec {
    type Error = TheoryError;

    fn try_from(params: WorldParams) -> Result<Self, Self::Error> {
        Self::new(params)
    }
}

impl From<LinearWorldSpec> for WorldParams {
    fn from(spec: LinearWorldSpec) -> Self {
        spec.params
    }
}

fn main_class(d: usize, j_c: &[usize], minus_at: usize) -> Vec<i8> {
    let mut z = vec![0i8; d];
    for (t, &i) in j_c.iter().enumerate() {
        z[i] = if t == minus_at { -1 } else { 1 };
    }
    z
}

fn sign_class(d: usize, j_c: &[usize], bits: u32) -> Vec<i8> {
    let mut z = vec![0i8; d];
    for (b, &i) in j_c.iter().enumerate() {
        z[i] = if bits & (1 << b) != 0 { -1 } else { 1 };
    }
    z
}

/// The main-text class family on the first `k_c` of `d` coordinates: one
/// vector per position with `-1` there and `+1` on the rest of the first
/// `k_c` coordinates, listed with the `-1` moving from the last position to
/// the first.
pub fn build_main_c(k_c: usize, d: usize) -> Result<Vec<Vec<i8>>, TheoryError> {
    if k_c < 2 || k_c > d {
        return Err(TheoryError::InvalidWorld(format!(
            "main class family needs 2 <= k_C <= d, got k_C = {k_c}, d = {d}"
        )));
    }
    let j_c: Vec<usize> = (0..k_c).collect();
    Ok((0..k_c).map(|t| main_class(d, &j_c, k_c - 1 - t)).collect())
}
