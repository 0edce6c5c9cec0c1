//! Embedding files: a CSV text form with a comment header and a
//! little-endian binary form.

use std::fmt::Write as _;

use thiserror::Error;

use crate::stats::{EmbeddingSet, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("missing `# task_id=<id> d=<d>` header on line 1")]
    MissingHeader,
    #[error("bad header on line 1: {0}")]
    BadHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse `{text}` as a number")]
    BadNumber {
        line: u64,
        column: usize,
        text: String,
    },
    #[error("line {line}, column {column}: non-finite value `{text}`")]
    NonFinite {
        line: u64,
        column: usize,
        text: String,
    },
    #[error("no data rows")]
    Empty,
    #[error("line {line}: {message}")]
    Syntax { line: u64, message: String },
}

impl CsvError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotUtf8 => "NotUtf8",
            Self::MissingHeader => "MissingHeader",
            Self::BadHeader(_) => "BadHeader",
            Self::RaggedRow { .. } => "RaggedRow",
            Self::BadNumber { .. } => "BadNumber",
            Self::NonFinite { .. } => "NonFinite",
            Self::Empty => "Empty",
            Self::Syntax { .. } => "Syntax",
        }
    }
}

fn valid_task_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c.is_control())
}

fn parse_header(line: &str) -> Result<(String, usize), CsvError> {
    let rest = line.strip_prefix('#').ok_or(CsvError::MissingHeader)?;
    let mut id = None;
    let mut d = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("task_id", v)) if id.is_none() => id = Some(v.to_string()),
            Some(("d", v)) if d.is_none() => {
                let parsed: usize = v
                    .parse()
                    .map_err(|_| CsvError::BadHeader(format!("d=`{v}` is not a positive integer")))?;
                d = Some(parsed);
            }
            _ => return Err(CsvError::BadHeader(format!("unexpected field `{field}`"))),
        }
    }
    let id = id.ok_or_else(|| CsvError::BadHeader("missing task_id".into()))?;
    if !valid_task_id(&id) {
        return Err(CsvError::BadHeader("task_id must be non-empty".into()));
    }
    match d {
        Some(d) if d > 0 => Ok((id, d)),
        Some(_) => Err(CsvError::BadHeader("d must be positive".into())),
        None => Err(CsvError::BadHeader("missing d".into())),
    }
}

/// Parses the CSV embedding format. Line numbers in errors are 1-based and
/// count the header.
pub fn parse_embeddings_csv(text: &str) -> Result<EmbeddingSet, CsvError> {
    let (first, body) = match text.split_once('\n') {
        Some((a, b)) => (a, b),
        None => (text, ""),
    };
    let first = first.strip_suffix('\r').unwrap_or(first);
    if !first.starts_with('#') {
        return Err(CsvError::MissingHeader);
    }
    let (task_id, d) = parse_header(first)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let mut data = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| CsvError::Syntax {
            line: e.position().map_or(0, |p| p.line() + 1),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != d {
            return Err(CsvError::RaggedRow {
                line,
                expected: d,
                found: record.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| CsvError::BadNumber {
                line,
                column: c + 1,
                text: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite {
                    line,
                    column: c + 1,
                    text: field.to_string(),
                });
            }
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CsvError::Empty);
    }
    Ok(EmbeddingSet::from_row_slice(task_id, n, d, &data).expect("validated rows"))
}

pub fn parse_embeddings_csv_bytes(bytes: &[u8]) -> Result<EmbeddingSet, CsvError> {
    parse_embeddings_csv(std::str::from_utf8(bytes).map_err(|_| CsvError::NotUtf8)?)
}

/// Writes the CSV form. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_embeddings_csv(set: &EmbeddingSet) -> String {
    let mut out = format!("# task_id={} d={}\n", set.task_id(), set.d());
    let rows = set.rows();
    for r in 0..set.n() {
        for c in 0..set.d() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{:?}", rows[(r, c)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub const MAGIC: &[u8; 4] = b"MTFE";
pub const FORMAT_VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 + 2 + 4 + 4 + 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinaryError {
    #[error("bad magic bytes {0:?}, expected `MTFE`")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(u64),
    #[error("task id is not valid UTF-8 or is empty")]
    BadTaskId,
    #[error(transparent)]
    Invalid(#[from] StatsError),
}

impl BinaryError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BadMagic(_) => "BadMagic",
            Self::UnsupportedVersion(_) => "UnsupportedVersion",
            Self::UnsupportedFlags(_) => "UnsupportedFlags",
            Self::Truncated { .. } => "Truncated",
            Self::TrailingBytes(_) => "TrailingBytes",
            Self::BadTaskId => "BadTaskId",
            Self::Invalid(_) => "Invalid",
        }
    }
}

/// Binary form: `MTFE`, u16 version, u16 flags, u32 n, u32 d, u32 id length,
/// id bytes, then `n * d` row-major f64, all little-endian.
pub fn write_embeddings_bin(set: &EmbeddingSet) -> Vec<u8> {
    let id = set.task_id().as_bytes();
    let mut out = Vec::with_capacity(FIXED_HEADER + id.len() + 8 * set.n() * set.d());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(set.n() as u32).to_le_bytes());
    out.extend_from_slice(&(set.d() as u32).to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    for v in set.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn truncated(needed: usize, available: usize) -> BinaryError {
    BinaryError::Truncated {
        needed: needed as u64,
        available: available as u64,
    }
}

pub fn parse_embeddings_bin(bytes: &[u8]) -> Result<EmbeddingSet, BinaryError> {
    if bytes.len() < 4 {
        return Err(truncated(4, bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(BinaryError::BadMagic(bytes[..4].to_vec()));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(truncated(FIXED_HEADER, bytes.len()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(BinaryError::UnsupportedVersion(version));
    }
    let flags = u16_at(6);
    if flags != 0 {
        return Err(BinaryError::UnsupportedFlags(flags));
    }
    let (n, d, id_len) = (u32_at(8), u32_at(12), u32_at(16));

    let id_end = FIXED_HEADER + id_len;
    if bytes.len() < id_end {
        return Err(truncated(id_end, bytes.len()));
    }
    let id = std::str::from_utf8(&bytes[FIXED_HEADER..id_end]).map_err(|_| BinaryError::BadTaskId)?;
    if !valid_task_id(id) {
        return Err(BinaryError::BadTaskId);
    }
    // lengths come from the file, so check them before allocating
    let payload = (n as u128) * (d as u128) * 8;
    let available = (bytes.len() - id_end) as u128;
    if payload > available {
        return Err(BinaryError::Truncated {
            needed: (id_end as u128 + payload).min(u64::MAX as u128) as u64,
            available: bytes.len() as u64,
        });
    }
    if payload < available {
        return Err(BinaryError::TrailingBytes((available - payload) as u64));
    }
    let data: Vec<f64> = bytes[id_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(EmbeddingSet::from_row_slice(id, n, d, &data)?)
}
