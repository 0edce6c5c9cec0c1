//! Shared inputs for the benchmarks.

use mtft_core::fixtures::two_cluster_fixture;
use mtft_core::stats::EmbeddingSet;

/// The two-cluster target and `3 * copies` candidates, each copy drawn from
/// a different seed.
pub fn candidate_pool(copies: u64) -> (EmbeddingSet, Vec<EmbeddingSet>) {
    let (target, _) = two_cluster_fixture(0);
    let candidates = (0..copies)
        .flat_map(|c| {
            two_cluster_fixture(c + 1).1.into_iter().map(move |s| {
                EmbeddingSet::new(format!("{}-{c}", s.task_id()), s.rows().clone()).expect("fixture rows are valid")
            })
        })
        .collect();
    (target, candidates)
}
