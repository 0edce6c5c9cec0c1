//! File formats: embeddings, manifests, world specs and reports.
//!
//! Parsers work on in-memory text or bytes and return typed errors for any
//! input; the `read_*` helpers add file access and attach the path.

mod embeddings;
mod manifest;
mod report;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::stats::EmbeddingSet;
use crate::theory::{LinearWorldSpec, TheoryError};

pub use embeddings::{
    parse_embeddings_bin, parse_embeddings_csv, parse_embeddings_csv_bytes, write_embeddings_bin,
    write_embeddings_csv, BinaryError, CsvError, FORMAT_VERSION, MAGIC,
};
pub use manifest::{
    parse_manifest, write_manifest, EmbeddingFormat, Manifest, ManifestEntry, ManifestError,
};
pub use report::{
    parse_summary, parse_sweep_csv, write_checks_csv, write_summary, write_sweep_csv, RunSummary,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: CsvError },
    #[error("{}: {source}", path.display())]
    Binary { path: PathBuf, source: BinaryError },
    #[error("{}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        source: ManifestError,
    },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    World { path: PathBuf, source: TheoryError },
    #[error("{}: header task_id `{found}` does not match manifest task_id `{expected}`", path.display())]
    IdMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
}

impl IoError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Read { .. } => "Read",
            Self::Write { .. } => "Write",
            Self::Csv { source, .. } => source.code(),
            Self::Binary { source, .. } => source.code(),
            Self::Manifest { source, .. } => source.code(),
            Self::Schema { .. } => "Schema",
            Self::World { .. } => "World",
            Self::IdMismatch { .. } => "IdMismatch",
        }
    }
}

/// Strict TOML deserialization with the failing field path in the message.
pub(crate) fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = toml::Deserializer::parse(text).map_err(|e| e.to_string())?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().message().to_string();
        if path == "." {
            inner
        } else {
            format!("{path}: {inner}")
        }
    })
}

/// Parses a world spec document and validates the world.
pub fn parse_world_spec(text: &str) -> Result<LinearWorldSpec, WorldSpecError> {
    let params = from_toml(text).map_err(WorldSpecError::Schema)?;
    LinearWorldSpec::new(params).map_err(WorldSpecError::World)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldSpecError {
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    World(TheoryError),
}

pub fn write_world_spec(spec: &LinearWorldSpec) -> String {
    toml::to_string(spec.params()).expect("world params serialize")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingSet, IoError> {
    parse_embeddings_csv_bytes(&read_bytes(path)?).map_err(|source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_embeddings_bin(path: &Path) -> Result<EmbeddingSet, IoError> {
    parse_embeddings_bin(&read_bytes(path)?).map_err(|source| IoError::Binary {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet, IoError> {
    match format {
        EmbeddingFormat::Csv => read_embeddings_csv(path),
        EmbeddingFormat::Bin => read_embeddings_bin(path),
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    parse_manifest(&read_text(path)?).map_err(|source| IoError::Manifest {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the target and candidate sets named by a manifest, checking that
/// each file's own task id agrees with the manifest.
pub fn load_manifest_sets(
    manifest: &Manifest,
    base: &Path,
) -> Result<(EmbeddingSet, Vec<EmbeddingSet>), IoError> {
    let load = |entry: &ManifestEntry| {
        let path = entry.resolve(base);
        let set = read_embeddings(&path, entry.format())?;
        if set.task_id() != entry.task_id {
            return Err(IoError::IdMismatch {
                path,
                expected: entry.task_id.clone(),
                found: set.task_id().to_string(),
            });
        }
        Ok(set)
    };
    let target = load(&manifest.target)?;
    let candidates = manifest.candidates.iter().map(load).collect::<Result<_, _>>()?;
    Ok((target, candidates))
}

pub fn read_world_spec(path: &Path) -> Result<LinearWorldSpec, IoError> {
    parse_world_spec(&read_text(path)?).map_err(|e| match e {
        WorldSpecError::Schema(message) => IoError::Schema {
            path: path.to_path_buf(),
            message,
        },
        WorldSpecError::World(source) => IoError::World {
            path: path.to_path_buf(),
            source,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_spec_round_trip_and_validation() {
        let w = LinearWorldSpec::main_text(5, 4, 0).unwrap();
        let text = write_world_spec(&w);
        assert_eq!(parse_world_spec(&text).unwrap(), w);

        let bad = text.replace("finetune_features = [0, 1, 2, 3]", "finetune_features = [0]");
        assert_ne!(bad, text);
        assert!(matches!(parse_world_spec(&bad), Err(WorldSpecError::World(_))));

        let unknown = format!("{text}colour = 1\n");
        let err = parse_world_spec(&unknown).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn minimal_world_spec_uses_defaults() {
        let text = r#"
d = 3
finetune_features = [0, 1]
target_features = [2]
target_pair = [[0, 0, -1], [0, 0, 1]]
zeta = "uniform_pairs_general"
"#;
        let w = parse_world_spec(text).unwrap();
        assert_eq!(w.rep_norm_bound(), 1.0);
        assert!(!w.is_covered());
    }
}
