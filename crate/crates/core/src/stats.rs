//! Gaussian summaries of embedding sets and the two selection heuristics:
//! cosine similarity of means and Mahalanobis coverage of a target mean.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Squared offsets at or below this are reported as [`Coverage::Covered`].
pub const COVERED_THRESHOLD: f64 = 1e-24;

/// Relative scale of the automatic ridge, applied to `trace(C) / d`.
pub const AUTO_RIDGE_SCALE: f64 = 1e-6;

/// Absolute floor of the automatic ridge.
pub const AUTO_RIDGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in `{task_id}` at row {row}, column {column}")]
    NonFinite {
        task_id: String,
        row: usize,
        column: usize,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),
    #[error("regularized covariance is numerically singular (ridge {ridge:e})")]
    Singular { ridge: f64 },
    #[error("invalid ridge {0}: must be finite and non-negative")]
    InvalidRidge(f64),
}

/// One task's data in representation space: `n` rows of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    task_id: String,
    rows: DMatrix<f64>,
}

impl EmbeddingSet {
    pub fn new(task_id: impl Into<String>, rows: DMatrix<f64>) -> Result<Self, StatsError> {
        let task_id = task_id.into();
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(StatsError::Empty(format!(
                "embedding set `{task_id}` has shape {}x{}",
                rows.nrows(),
                rows.ncols()
            )));
        }
        for r in 0..rows.nrows() {
            for c in 0..rows.ncols() {
                if !rows[(r, c)].is_finite() {
                    return Err(StatsError::NonFinite {
                        task_id,
                        row: r,
                        column: c,
                    });
                }
            }
        }
        Ok(Self { task_id, rows })
    }

    /// Builds a set from row-major data.
    pub fn from_row_slice(
        task_id: impl Into<String>,
        n: usize,
        d: usize,
        data: &[f64],
    ) -> Result<Self, StatsError> {
        if data.len() != n * d {
            return Err(StatsError::DimensionMismatch {
                context: "row-major buffer length".into(),
                expected: n * d,
                found: data.len(),
            });
        }
        Self::new(task_id, DMatrix::from_row_slice(n, d, data))
    }

    pub fn from_rows(task_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let task_id = task_id.into();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(StatsError::DimensionMismatch {
                    context: format!("row {i} of `{task_id}`"),
                    expected: d,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_row_slice(task_id, rows.len(), d, &flat)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    /// Row-major copy of the data.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n() * self.d());
        for r in 0..self.n() {
            for c in 0..self.d() {
                out.push(self.rows[(r, c)]);
            }
        }
        out
    }

    /// Applies `x -> f(x)` to every row, keeping the task id.
    pub fn map_rows(&self, f: impl Fn(DVector<f64>) -> DVector<f64>) -> Result<Self, StatsError> {
        let mapped: Vec<Vec<f64>> = (0..self.n())
            .map(|r| f(self.rows.row(r).transpose()).iter().copied().collect())
            .collect();
        Self::from_rows(self.task_id.clone(), &mapped)
    }
}

/// Sample mean and covariance of one or more pooled embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Pools the rows of every set and returns their sample mean and
/// `(n - 1)`-divisor covariance (the zero matrix when `n = 1`).
///
/// Accumulation runs left to right over sets, then rows, so results are
/// reproducible bit for bit for a fixed input order.
pub fn summarize<'a, I>(sets: I) -> Result<GaussianSummary, StatsError>
where
    I: IntoIterator<Item = &'a EmbeddingSet>,
{
    let sets: Vec<&EmbeddingSet> = sets.into_iter().collect();
    let first = sets
        .first()
        .ok_or_else(|| StatsError::Empty("no embedding sets to summarize".into()))?;
    let d = first.d();
    for s in &sets {
        if s.d() != d {
            return Err(StatsError::DimensionMismatch {
                context: format!("pooling `{}`", s.task_id()),
                expected: d,
                found: s.d(),
            });
        }
    }

    let mut count = 0usize;
    let mut sum = vec![0.0; d];
    for s in &sets {
        for r in 0..s.n() {
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.rows[(r, c)];
            }
            count += 1;
        }
    }
    let mean = DVector::from_iterator(d, sum.iter().map(|v| v / count as f64));

    let mut cov = DMatrix::zeros(d, d);
    if count > 1 {
        let mut centered = vec![0.0; d];
        for s in &sets {
            for r in 0..s.n() {
                for c in 0..d {
                    centered[c] = s.rows[(r, c)] - mean[c];
                }
                for i in 0..d {
                    for j in i..d {
                        cov[(i, j)] += centered[i] * centered[j];
                    }
                }
            }
        }
        let denom = (count - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }

    Ok(GaussianSummary {
        mean,
        covariance: cov,
        count,
    })
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cos_sim(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na.is_nan() || na == 0.0 {
        return Err(StatsError::ZeroNorm("first argument of cosine similarity".into()));
    }
    if nb.is_nan() || nb == 0.0 {
        return Err(StatsError::ZeroNorm("second argument of cosine similarity".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Ridge added to the pooled covariance before the Mahalanobis solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Ridge {
    /// `max(1e-6 * trace(C) / d, 1e-12)`.
    #[default]
    Auto,
    Fixed(f64),
}

impl Ridge {
    pub fn resolve(&self, covariance: &DMatrix<f64>) -> Result<f64, StatsError> {
        match *self {
            Ridge::Auto => {
                let d = covariance.nrows().max(1) as f64;
                Ok((AUTO_RIDGE_SCALE * covariance.trace() / d).max(AUTO_RIDGE_FLOOR))
            }
            Ridge::Fixed(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Ridge::Fixed(v) => Err(StatsError::InvalidRidge(v)),
        }
    }
}

impl fmt::Display for Ridge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ridge::Auto => f.write_str("auto"),
            Ridge::Fixed(v) => write!(f, "{v:?}"),
        }
    }
}

impl std::str::FromStr for Ridge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Ridge::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("ridge must be `auto` or a non-negative real, got `{s}`"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("ridge must be finite and non-negative, got `{s}`"));
        }
        Ok(Ridge::Fixed(v))
    }
}

impl Serialize for Ridge {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Ridge::Auto => serializer.serialize_str("auto"),
            Ridge::Fixed(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Ridge {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) if v.is_finite() && v >= 0.0 => Ok(Ridge::Fixed(v)),
            Repr::Num(v) => Err(serde::de::Error::custom(format!("invalid ridge {v}"))),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Coverage score `1 / q`, or `Covered` when the target mean coincides with
/// the pool mean. `Covered` compares greater than every finite score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coverage {
    Finite(f64),
    Covered,
}

impl Coverage {
    pub fn is_covered(&self) -> bool {
        matches!(self, Coverage::Covered)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Coverage::Finite(v) => Some(*v),
            Coverage::Covered => None,
        }
    }

    /// True iff `self >= (1 + p) * incumbent`. A covered incumbent admits no
    /// increase; a covered challenger beats any finite incumbent.
    pub fn increases_over(&self, incumbent: Coverage, p: f64) -> bool {
        match (self, incumbent) {
            (_, Coverage::Covered) => false,
            (Coverage::Covered, Coverage::Finite(_)) => true,
            (Coverage::Finite(a), Coverage::Finite(b)) => *a >= (1.0 + p) * b,
        }
    }
}

impl PartialOrd for Coverage {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Coverage::Covered, Coverage::Covered) => Some(Ordering::Equal),
            (Coverage::Covered, Coverage::Finite(_)) => Some(Ordering::Greater),
            (Coverage::Finite(_), Coverage::Covered) => Some(Ordering::Less),
            (Coverage::Finite(a), Coverage::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Covered => f.write_str("covered"),
            Coverage::Finite(v) => write!(f, "{v:?}"),
        }
    }
}

impl Serialize for Coverage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Coverage::Covered => serializer.serialize_str("covered"),
            Coverage::Finite(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Coverage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(Coverage::Finite(v)),
            Repr::Text(s) if s == "covered" => Ok(Coverage::Covered),
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or `covered`, got `{s}`"
            ))),
        }
    }
}

/// Coverage together with the quantities it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageDetail {
    pub score: Coverage,
    /// `q = delta^T (C + ridge I)^{-1} delta`. When covered this holds the
    /// Euclidean `delta^T delta` instead, which is below the covered threshold.
    pub mahalanobis_sq: f64,
    pub ridge: f64,
}

/// `1 / q` with `q` the squared Mahalanobis distance between the pool mean
/// and `target_mean` under the ridge-regularized pool covariance.
pub fn coverage(
    pool: &GaussianSummary,
    target_mean: &DVector<f64>,
    ridge: Ridge,
) -> Result<Coverage, StatsError> {
    coverage_detail(pool, target_mean, ridge).map(|c| c.score)
}

pub fn coverage_detail(
    pool: &GaussianSummary,
    target_mean: &DVector<f64>,
    ridge: Ridge,
) -> Result<CoverageDetail, StatsError> {
    let d = pool.dim();
    if target_mean.len() != d {
        return Err(StatsError::DimensionMismatch {
            context: "coverage target mean".into(),
            expected: d,
            found: target_mean.len(),
        });
    }
    let ridge = ridge.resolve(&pool.covariance)?;
    let delta = &pool.mean - target_mean;
    if delta.norm_squared() <= COVERED_THRESHOLD {
        return Ok(CoverageDetail {
            score: Coverage::Covered,
            mahalanobis_sq: delta.norm_squared(),
            ridge,
        });
    }

    let mut regularized = pool.covariance.clone();
    for i in 0..d {
        regularized[(i, i)] += ridge;
    }
    let chol = regularized
        .cholesky()
        .ok_or(StatsError::Singular { ridge })?;
    let solved = chol.solve(&delta);
    let q = delta.dot(&solved);
    if !(q.is_finite() && q > 0.0) {
        return Err(StatsError::Singular { ridge });
    }
    Ok(CoverageDetail {
        score: Coverage::Finite(1.0 / q),
        mahalanobis_sq: q,
        ridge,
    })
}
