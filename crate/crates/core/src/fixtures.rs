//! Seeded synthetic embedding sets used by tests, benches and the CLI docs.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::stats::EmbeddingSet;

pub const TWO_CLUSTER_SEED: u64 = 20_240_417;

/// `n` draws from `N(mean, sigma^2 I)`.
pub fn gaussian_set(
    task_id: &str,
    mean: &DVector<f64>,
    sigma: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> EmbeddingSet {
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let d = mean.len();
    let data: Vec<f64> = (0..n)
        .flat_map(|_| (0..d).map(|c| mean[c] + noise.sample(rng)).collect::<Vec<_>>())
        .collect();
    EmbeddingSet::from_row_slice(task_id, n, d, &data).expect("finite gaussian draws")
}

/// Target `N(e1, 0.01 I)` in four dimensions and three candidates, fifty
/// points each: `T1` just short of the target along `e1`, `T2` just past it
/// with a small `e2` offset, and `T3` far away along `e3`. `T1` and `T2`
/// straddle the target, so together they cover it.
pub fn two_cluster_fixture(seed: u64) -> (EmbeddingSet, Vec<EmbeddingSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 0.1;
    let e = |v: [f64; 4]| DVector::from_row_slice(&v);
    let target = gaussian_set("target", &e([1.0, 0.0, 0.0, 0.0]), sigma, 50, &mut rng);
    let candidates = vec![
        gaussian_set("T1", &e([0.8, 0.0, 0.0, 0.0]), sigma, 50, &mut rng),
        gaussian_set("T2", &e([1.2, 0.2, 0.0, 0.0]), sigma, 50, &mut rng),
        gaussian_set("T3", &e([0.0, 0.0, 4.0, 0.0]), sigma, 50, &mut rng),
    ];
    (target, candidates)
}
