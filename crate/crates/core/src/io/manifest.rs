//! Task manifests: one target and a list of candidate embedding files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    Csv,
    Bin,
}

impl EmbeddingFormat {
    /// `.bin` and `.mtfe` are binary; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("mtfe") => Self::Bin,
            _ => Self::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub task_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<EmbeddingFormat>,
}

impl ManifestEntry {
    pub fn format(&self) -> EmbeddingFormat {
        self.format.unwrap_or_else(|| EmbeddingFormat::from_path(&self.path))
    }

    pub fn resolve(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub target: ManifestEntry,
    pub candidates: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("{0}")]
    Schema(String),
    #[error("duplicate candidate task_id `{0}`")]
    DuplicateId(String),
    #[error("target task_id `{0}` is also listed as a candidate")]
    TargetIsCandidate(String),
    #[error("no candidates listed")]
    NoCandidates,
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Schema(_) => "Schema",
            Self::DuplicateId(_) => "DuplicateId",
            Self::TargetIsCandidate(_) => "TargetIsCandidate",
            Self::NoCandidates => "NoCandidates",
        }
    }
}

/// Parses and validates a manifest document.
pub fn parse_manifest(text: &str) -> Result<Manifest, ManifestError> {
    let manifest: Manifest = super::from_toml(text).map_err(ManifestError::Schema)?;
    if manifest.candidates.is_empty() {
        return Err(ManifestError::NoCandidates);
    }
    let mut seen = HashSet::new();
    for c in &manifest.candidates {
        if !seen.insert(c.task_id.as_str()) {
            return Err(ManifestError::DuplicateId(c.task_id.clone()));
        }
    }
    if seen.contains(manifest.target.task_id.as_str()) {
        return Err(ManifestError::TargetIsCandidate(manifest.target.task_id.clone()));
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest) -> String {
    toml::to_string(manifest).expect("manifest serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[target]
task_id = "target"
path = "target.csv"

[[candidates]]
task_id = "T1"
path = "t1.bin"

[[candidates]]
task_id = "T2"
path = "t2.csv"
format = "bin"
"#;

    #[test]
    fn parses_and_infers_formats() {
        let m = parse_manifest(GOOD).unwrap();
        assert_eq!(m.candidates.len(), 2);
        assert_eq!(m.target.format(), EmbeddingFormat::Csv);
        assert_eq!(m.candidates[0].format(), EmbeddingFormat::Bin);
        assert_eq!(m.candidates[1].format(), EmbeddingFormat::Bin);
        assert_eq!(parse_manifest(&write_manifest(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_and_unknown_fields() {
        let dup = GOOD.replace("\"T2\"", "\"T1\"");
        assert_eq!(parse_manifest(&dup).unwrap_err(), ManifestError::DuplicateId("T1".into()));
        let clash = GOOD.replace("\"T2\"", "\"target\"");
        assert_eq!(parse_manifest(&clash).unwrap_err().code(), "TargetIsCandidate");
        let extra = GOOD.replace("format = \"bin\"", "fromat = \"bin\"");
        let err = parse_manifest(&extra).unwrap_err();
        assert_eq!(err.code(), "Schema");
        assert!(err.to_string().contains("candidates"), "{err}");
    }
}
