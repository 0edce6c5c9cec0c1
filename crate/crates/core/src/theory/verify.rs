//! The theory check suite run against a single world.

use serde::{Deserialize, Serialize};

use super::consistency::{consistency_kappa, kappa_oracle};
use super::diversity::{covered_reference, diversity_nu_estimate, family_is_decreasing, DiversitySearch, Regime};
use super::loss::{expected_loss, task_loss, DiagonalRepresentation};
use super::optimum::{default_start, optimal_lambda_closed, optimal_lambda_numeric, AscentConfig};
use super::oracle::loss_oracle_check;
use super::world::LinearWorldSpec;
use super::TheoryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum CheckStatus {
    Pass,
    Fail,
    ReportOnly,
    Skipped,
}

impl std::fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::ReportOnly => "REPORT-ONLY",
            Self::Skipped => "SKIPPED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub expected: Option<f64>,
    pub detail: String,
}

impl CheckRow {
    fn new(check: &str, status: CheckStatus, value: Option<f64>, expected: Option<f64>, detail: impl Into<String>) -> Self {
        Self {
            check: check.to_string(),
            status,
            value,
            expected,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub ascent: AscentConfig,
    /// Per-world default from [`DiversitySearch::for_world`] when absent.
    pub diversity: Option<DiversitySearch>,
    pub oracle_pairs: usize,
    pub oracle_heads: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            ascent: AscentConfig::default(),
            diversity: None,
            oracle_pairs: 100,
            oracle_heads: 10_000,
            seed: 0x0AC1_E5EE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
    /// Set when a solver failed to converge, as opposed to a check failing.
    pub numerical_failure: bool,
}

impl VerifyReport {
    pub fn has_failure(&self) -> bool {
        self.rows.iter().any(|r| r.status == CheckStatus::Fail)
    }

    pub fn row(&self, check: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.check == check)
    }
}

const LAMBDA_TOL_ON: f64 = 1e-4;
const LAMBDA_TOL_OFF: f64 = 1e-6;
const KAPPA_TOL: f64 = 1e-10;
const NU_UNCOVERED_MAX: f64 = 1e-2;
const ORACLE_REL_TOL: f64 = 0.01;
const ENUMERATION_LIMIT: usize = 200_000;

/// Largest entrywise deviations `(on J_C, off J_C)` of `|lambda|` from the
/// closed form.
pub fn lambda_deviation(rep: &DiagonalRepresentation, spec: &LinearWorldSpec) -> (f64, f64) {
    let closed = optimal_lambda_closed(spec);
    let mut on = 0.0f64;
    let mut off = 0.0f64;
    for (i, (a, c)) in rep.lambda.iter().zip(&closed.lambda).enumerate() {
        let dev = (a.abs() - c).abs();
        if spec.finetune_features().contains(&i) {
            on = on.max(dev);
        } else {
            off = off.max(dev);
        }
    }
    (on, off)
}

fn optimal_lambda_row(spec: &LinearWorldSpec, cfg: &VerifyConfig, numerical: &mut bool) -> CheckRow {
    let name = "optimal_lambda";
    if let Some((i, j)) = spec.assumptions().co_flipping {
        return CheckRow::new(
            name,
            CheckStatus::Skipped,
            None,
            None,
            format!("non-degeneracy fails: coordinate {j} never differs without coordinate {i}, so the optimum is not unique"),
        );
    }
    match optimal_lambda_numeric(spec, &cfg.ascent) {
        Ok(o) => {
            let (on, off) = lambda_deviation(&o.rep, spec);
            let ok = on <= LAMBDA_TOL_ON && off <= LAMBDA_TOL_OFF;
            CheckRow::new(
                name,
                if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                Some(on.max(off)),
                Some(0.0),
                format!("max deviation on J_C {on:e}, off J_C {off:e}, {} iterations", o.iterations),
            )
        }
        Err(e) => {
            *numerical = matches!(e, TheoryError::NonConvergence { .. });
            CheckRow::new(name, CheckStatus::Fail, None, None, e.to_string())
        }
    }
}

/// Runs every check on `spec`. Never asserts the covered-regime diversity
/// constants; those rows are reported only.
pub fn verify_world(spec: &LinearWorldSpec, cfg: &VerifyConfig) -> VerifyReport {
    let mut rows = Vec::new();
    let mut numerical = false;

    rows.push(optimal_lambda_row(spec, cfg, &mut numerical));

    let kappa = consistency_kappa(spec);
    let oracle = kappa_oracle(spec);
    rows.push(CheckRow::new(
        "kappa",
        if (kappa - oracle).abs() <= KAPPA_TOL { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(kappa),
        Some(oracle),
        format!("n_0={} k_0={} n_C={} k_C={}", spec.n_0(), spec.k_0(), spec.n_c(), spec.k_c()),
    ));

    let search = cfg.diversity.clone().unwrap_or_else(|| DiversitySearch::for_world(spec));
    match diversity_nu_estimate(spec, &search) {
        Ok(est) => {
            let row = match est.regime {
                Regime::Uncovered => {
                    let decreasing = family_is_decreasing(&est.family);
                    let ok = est.nu_hat <= NU_UNCOVERED_MAX && decreasing;
                    CheckRow::new(
                        "nu_hat",
                        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                        Some(est.nu_hat),
                        Some(NU_UNCOVERED_MAX),
                        format!("uncovered; construction family decreasing: {decreasing}"),
                    )
                }
                Regime::Covered => CheckRow::new(
                    "nu_hat",
                    CheckStatus::ReportOnly,
                    Some(est.nu_hat),
                    None,
                    format!("covered; {} ratios evaluated, {} excluded", est.evaluated, est.excluded),
                ),
            };
            rows.push(row);
            rows.push(CheckRow::new(
                "nu_hat_nonnegative",
                if est.nu_hat >= 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
                Some(est.nu_hat),
                Some(0.0),
                "",
            ));
        }
        Err(e) => {
            rows.push(CheckRow::new("nu_hat", CheckStatus::Fail, None, None, e.to_string()));
        }
    }

    let reference = covered_reference(spec);
    rows.push(CheckRow::new(
        "nu_reference_headline",
        CheckStatus::ReportOnly,
        reference.headline,
        None,
        "(2 sqrt 2 - 2)/(k_C - 1)",
    ));
    rows.push(CheckRow::new(
        "nu_reference_fixed_distance",
        CheckStatus::ReportOnly,
        reference.fixed_distance,
        None,
        match spec.assumptions().fixed_distance {
            Some(n) => format!("pair distance n_k={n}"),
            None => "pairs have no common distance".to_string(),
        },
    ));

    let check = loss_oracle_check(
        spec.d(),
        spec.rep_norm_bound(),
        spec.head_norm_bound(),
        cfg.oracle_pairs,
        cfg.oracle_heads,
        cfg.seed,
    );
    rows.push(CheckRow::new(
        "loss_head_oracle",
        if check.passed(ORACLE_REL_TOL) { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(check.worst_relative),
        Some(ORACLE_REL_TOL),
        format!("{} pairs, {} heads, worst violation {:e}", check.pairs, cfg.oracle_heads, check.worst_violation),
    ));

    rows.push(enumeration_row(spec));

    VerifyReport {
        rows,
        numerical_failure: numerical,
    }
}

fn enumeration_row(spec: &LinearWorldSpec) -> CheckRow {
    let name = "expected_loss_enumeration";
    let Some(tasks) = spec.enumerate_tasks(ENUMERATION_LIMIT) else {
        return CheckRow::new(name, CheckStatus::Skipped, None, None, format!("more than {ENUMERATION_LIMIT} tasks"));
    };
    let b = spec.head_norm_bound();
    let probes = [optimal_lambda_closed(spec), DiagonalRepresentation::new(default_start(spec))];
    let worst = probes
        .iter()
        .map(|rep| {
            let brute = tasks.iter().map(|t| task_loss(rep, t, b)).sum::<f64>() / tasks.len() as f64;
            (brute - expected_loss(rep, spec)).abs()
        })
        .fold(0.0, f64::max);
    CheckRow::new(
        name,
        if worst <= 1e-12 { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(worst),
        Some(0.0),
        format!("{} enumerated tasks", tasks.len()),
    )
}
