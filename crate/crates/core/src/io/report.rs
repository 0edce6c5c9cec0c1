//! Run summaries (JSON) and tables (CSV).

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::sim::SweepCell;
use crate::theory::CheckRow;
use crate::TOOLKIT_VERSION;

/// Envelope around every written result. `stamp` stays `None` unless the
/// caller opts in, so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary<C, R> {
    pub toolkit_version: String,
    pub command: String,
    pub config: C,
    pub result: R,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
}

impl<C, R> RunSummary<C, R> {
    pub fn new(command: &str, config: C, result: R) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            command: command.to_string(),
            config,
            result,
            stamp: None,
        }
    }
}

pub fn write_summary<C: Serialize, R: Serialize>(summary: &RunSummary<C, R>) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

pub fn parse_summary<C: DeserializeOwned, R: DeserializeOwned>(
    text: &str,
) -> Result<RunSummary<C, R>, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        format!("{path}: {}", e.into_inner())
    })
}

fn write_rows<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8 output")
}

/// Columns `M, m, Mm, mean_gap, std_gap, n_seeds`.
pub fn write_sweep_csv(cells: &[SweepCell]) -> String {
    if cells.is_empty() {
        return "M,m,Mm,mean_gap,std_gap,n_seeds\n".to_string();
    }
    write_rows(cells)
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepCell>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(|e| e.to_string())).collect()
}

#[derive(Serialize)]
struct CheckCsvRow<'a> {
    check: &'a str,
    status: String,
    value: Option<f64>,
    expected: Option<f64>,
    detail: &'a str,
}

/// Columns `check, status, value, expected, detail`.
pub fn write_checks_csv(rows: &[CheckRow]) -> String {
    let rows: Vec<CheckCsvRow<'_>> = rows
        .iter()
        .map(|r| CheckCsvRow {
            check: &r.check,
            status: r.status.to_string(),
            value: r.value,
            expected: r.expected,
            detail: &r.detail,
        })
        .collect();
    if rows.is_empty() {
        return "check,status,value,expected,detail\n".to_string();
    }
    write_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{SelectionConfig, SelectionResult, StopReason, TraceRecord};
    use crate::stats::Coverage;

    #[test]
    fn selection_summary_round_trip() {
        let result = SelectionResult {
            selected: vec!["T1".into(), "T2".into()],
            trace: vec![
                TraceRecord {
                    task_id: "T1".into(),
                    similarity: 0.999_123_456_789,
                    coverage_before: None,
                    coverage_after: Coverage::Finite(0.1 + 0.2),
                    accepted: true,
                },
                TraceRecord {
                    task_id: "T3".into(),
                    similarity: -0.25,
                    coverage_before: Some(Coverage::Finite(1e-7)),
                    coverage_after: Coverage::Covered,
                    accepted: false,
                },
            ],
            stop_reason: StopReason::CoveragePlateau,
        };
        let summary = RunSummary::new("select", SelectionConfig::default(), result);
        let text = write_summary(&summary);
        assert_eq!(write_summary(&summary), text);
        let back: RunSummary<SelectionConfig, SelectionResult> = parse_summary(&text).unwrap();
        assert_eq!(back, summary);
    }

    #[test]
    fn unknown_summary_field_names_its_path() {
        let text = r#"{"toolkit_version":"0","command":"x","config":{"threshold_p":0.05,"ridge":"auto","max_selected":null,"bogus":1},"result":0}"#;
        let err = parse_summary::<SelectionConfig, u32>(text).unwrap_err();
        assert!(err.starts_with("config"), "{err}");
    }

    #[test]
    fn sweep_csv_round_trip() {
        let cells = vec![SweepCell {
            tasks: 20,
            samples: 40,
            product: 800,
            mean_gap: 0.123,
            std_gap: 0.0,
            n_seeds: 1,
        }];
        let text = write_sweep_csv(&cells);
        assert!(text.starts_with("M,m,Mm,mean_gap,std_gap,n_seeds\n"));
        assert_eq!(parse_sweep_csv(&text).unwrap(), cells);
    }
}
