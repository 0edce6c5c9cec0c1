#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtft_core::fixtures::{two_cluster_fixture, TWO_CLUSTER_SEED};
use mtft_core::io;
use mtft_core::stats::EmbeddingSet;
use mtft_core::theory::LinearWorldSpec;

pub fn mtft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtft"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the two-cluster fixture (target as CSV, candidates alternating
/// CSV and binary) plus its manifest; returns the manifest path.
pub fn write_two_cluster(dir: &Path) -> PathBuf {
    let (target, cands) = two_cluster_fixture(TWO_CLUSTER_SEED);
    std::fs::write(dir.join("target.csv"), io::write_embeddings_csv(&target)).unwrap();
    let mut manifest = String::from("[target]\ntask_id = \"target\"\npath = \"target.csv\"\n");
    for (i, c) in cands.iter().enumerate() {
        let name = if i % 2 == 0 {
            let n = format!("{}.csv", c.task_id());
            std::fs::write(dir.join(&n), io::write_embeddings_csv(c)).unwrap();
            n
        } else {
            let n = format!("{}.bin", c.task_id());
            std::fs::write(dir.join(&n), io::write_embeddings_bin(c)).unwrap();
            n
        };
        manifest.push_str(&format!(
            "\n[[candidates]]\ntask_id = \"{}\"\npath = \"{}\"\n",
            c.task_id(),
            name
        ));
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn write_set(dir: &Path, name: &str, set: &EmbeddingSet) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, io::write_embeddings_csv(set)).unwrap();
    p
}

pub fn write_world(dir: &Path, name: &str, world: &LinearWorldSpec) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, io::write_world_spec(world)).unwrap();
    p
}

/// Pool with mean 0 and sample covariance exactly `I` in two dimensions.
pub fn identity_pool() -> EmbeddingSet {
    EmbeddingSet::from_rows(
        "pool",
        &[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
        ],
    )
    .unwrap()
}

pub fn covered_world() -> LinearWorldSpec {
    LinearWorldSpec::main_text(5, 4, 0).unwrap()
}

pub fn co_flipping_world() -> LinearWorldSpec {
    let mut p = LinearWorldSpec::main_text(2, 2, 0).unwrap().params().clone();
    p.zeta = mtft_core::ZetaMode::UniformPairsGeneral;
    p.pair_distance = Some(2);
    LinearWorldSpec::new(p).unwrap()
}
