use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Counts, DistanceSummary};
use crate::classifier::ArtifactFailure;

pub const SUMMARY_CSV_HEADER: &str =
    "taxonomy,model,k,P,R,F1,Fbeta,beta,Da,Dn,Dn_pred_centric,skipped";

/// JSON Schema of `report.json`.
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/eval_report.schema.json");

/// JSON Schema of one `summary.csv` row, see [`summary_rows`].
pub const SUMMARY_ROW_SCHEMA: &str = include_str!("../../schemas/summary_row.schema.json");

/// Every metric of one (taxonomy, model, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "taxonomy")]
    pub taxonomy_name: String,
    #[serde(rename = "model")]
    pub model_id: String,
    pub k: usize,
    pub beta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f_beta: f64,
    pub counts: Counts,
    pub distance: DistanceSummary,
    /// Predictions evaluated.
    pub artifacts: usize,
    /// Artifacts left out of the distance average: empty truth or no
    /// prediction.
    pub skipped: usize,
    #[serde(default)]
    pub failures: Vec<ArtifactFailure>,
}

impl EvalReport {
    /// Records artifacts whose classification failed; they count as skipped.
    pub fn with_failures(mut self, failures: Vec<ArtifactFailure>) -> Self {
        self.skipped += failures.len();
        self.failures = failures;
        self
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Flat CSV, one row per report, in the order given.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_CSV_HEADER.split(','))
        .expect("in-memory write");
    for r in reports {
        w.write_record([
            r.taxonomy_name.clone(),
            r.model_id.clone(),
            r.k.to_string(),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.f1),
            format!("{:.6}", r.f_beta),
            format!("{:.6}", r.beta),
            opt(r.distance.d_abs),
            opt(r.distance.d_norm),
            opt(r.distance.d_norm_pred_centric),
            r.skipped.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Summary CSV rows as JSON objects keyed by header. Cells that parse as
/// numbers become numbers, empty cells become null.
pub fn summary_rows(csv_text: &str) -> Result<Vec<serde_json::Value>, csv::Error> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers()?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let obj: serde_json::Map<String, serde_json::Value> = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, cell)| {
                let v = if cell.is_empty() {
                    serde_json::Value::Null
                } else if h == "taxonomy" || h == "model" {
                    cell.into()
                } else if let Ok(i) = cell.parse::<u64>() {
                    i.into()
                } else if let Ok(f) = cell.parse::<f64>() {
                    f.into()
                } else {
                    cell.into()
                };
                (h.to_owned(), v)
            })
            .collect();
        rows.push(obj.into());
    }
    Ok(rows)
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

/// Aligned text table: P, R, F1, F_β, Dn per (taxonomy, model, k) row,
/// followed by any aborted cells.
pub fn render_table(reports: &[EvalReport], aborted: &[(String, String, String)]) -> String {
    let beta_header = match reports.first() {
        Some(r) if reports.iter().all(|x| x.beta == r.beta) => format!("F{}", r.beta.round()),
        _ => "Fbeta".to_owned(),
    };
    let header = ["taxonomy", "model", "k", "P", "R", "F1", beta_header.as_str(), "Dn"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.taxonomy_name.clone(),
                r.model_id.clone(),
                r.k.to_string(),
                two(r.precision),
                two(r.recall),
                two(r.f1),
                two(r.f_beta),
                r.distance.d_norm.map(two).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    if !aborted.is_empty() {
        let _ = writeln!(out, "\naborted cells:");
        for (tax, model, reason) in aborted {
            let _ = writeln!(out, "  {tax} / {model}: {reason}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(tax: &str, model: &str, d_norm: Option<f64>) -> EvalReport {
        EvalReport {
            taxonomy_name: tax.into(),
            model_id: model.into(),
            k: 15,
            beta: 189.25,
            precision: 0.07,
            recall: 0.83,
            f1: 0.12,
            f_beta: 0.8298,
            counts: Counts { tp: 1, fp: 2, fn_: 3 },
            distance: DistanceSummary {
                d_abs: d_norm.map(|d| d * 4.0),
                d_norm,
                d_max: 4,
                d_abs_pred_centric: d_norm,
                d_norm_pred_centric: d_norm,
                scored: 1,
            },
            artifacts: 2,
            skipped: 1,
            failures: vec![],
        }
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_report() {
        let csv = summary_csv(&[report("A", "m", Some(0.04)), report("T", "m", None)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SUMMARY_CSV_HEADER);
        assert_eq!(
            lines[1],
            "A,m,15,0.070000,0.830000,0.120000,0.829800,189.250000,0.160000,0.040000,0.040000,1"
        );
        assert!(lines[2].ends_with(",,,,1"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn table_mirrors_result_columns() {
        let t = render_table(
            &[report("A", "mini", Some(0.04))],
            &[("B".into(), "big".into(), "boom".into())],
        );
        let mut lines = t.lines();
        let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["taxonomy", "model", "k", "P", "R", "F1", "F189", "Dn"]);
        lines.next();
        let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(row, ["A", "mini", "15", "0.07", "0.83", "0.12", "0.83", "0.04"]);
        assert!(t.contains("B / big: boom"));
    }

    fn schema(src: &str) -> jsonschema::JSONSchema {
        jsonschema::JSONSchema::compile(&serde_json::from_str(src).unwrap()).unwrap()
    }

    #[test]
    fn outputs_match_published_schemas() {
        let reports = [report("A", "m", Some(0.04)), report("T", "m", None)];
        let rs = schema(REPORT_SCHEMA);
        for r in &reports {
            assert!(rs.is_valid(&serde_json::to_value(r).unwrap()));
        }
        let row = schema(SUMMARY_ROW_SCHEMA);
        let rows = summary_rows(&summary_csv(&reports)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| row.is_valid(r)));
        assert_eq!(rows[1]["Dn"], serde_json::Value::Null);

        let mut bad = serde_json::to_value(&reports[0]).unwrap();
        bad["precision"] = 1.5.into();
        assert!(!rs.is_valid(&bad));
    }

    #[test]
    fn failures_count_as_skipped() {
        let r = report("A", "m", None).with_failures(vec![ArtifactFailure {
            artifact_id: "x".into(),
            error: "e".into(),
        }]);
        assert_eq!(r.skipped, 2);
    }
}
