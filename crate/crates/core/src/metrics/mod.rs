//! Evaluation of top-k predictions against expert ground truth.
//!
//! Three families of numbers are produced:
//!
//! * micro-averaged precision, recall and F1 over all artifacts;
//! * a recall-weighted F-score whose β is the ratio of potential answers to
//!   true answers, `β = (l_head × l_tail) / λ`;
//! * a hop distance between true and predicted classes in the taxonomy,
//!   normalized by the longest possible path `2 × depth`.

mod distance;
mod report;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{read_jsonl, write_jsonl, DatasetError, Prediction};
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub use distance::{label_distance, DistanceResult, DistanceSummary, LabelMatch};
pub use report::{
    render_table, summary_csv, summary_rows, EvalReport, REPORT_SCHEMA, SUMMARY_CSV_HEADER,
    SUMMARY_ROW_SCHEMA,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction for artifact `{0}` has no ground-truth record")]
    UnknownArtifact(String),
    #[error("duplicate ground-truth record for artifact `{artifact}` in `{taxonomy}`")]
    DuplicateTruth { artifact: String, taxonomy: String },
    #[error("taxonomy mismatch: expected `{expected}`, found `{found}`")]
    TaxonomyMismatch { expected: String, found: String },
    #[error("predictions mix models `{0}` and `{1}`")]
    ModelMismatch(String, String),
    #[error("λ is zero: no true labels to weigh against")]
    ZeroLambda,
    #[error("β inputs must be positive (l_head={l_head}, l_tail={l_tail})")]
    NonPositive { l_head: u64, l_tail: u64 },
    #[error("β must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("predicted label set is empty")]
    EmptyPredicted,
    #[error("true label set is empty")]
    EmptyTruth,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Expert annotation of one artifact in one output space. An empty label
/// set means the artifact was annotated and has no class in this space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub artifact_id: String,
    #[serde(rename = "taxonomy")]
    pub taxonomy_name: String,
    #[serde(rename = "labels")]
    pub true_labels: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new<I, S>(artifact_id: &str, taxonomy: &str, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            artifact_id: artifact_id.to_owned(),
            taxonomy_name: taxonomy.to_owned(),
            true_labels: labels.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>, DatasetError> {
    read_jsonl(path)
}

pub fn write_ground_truth(path: &Path, truths: &[GroundTruth]) -> Result<(), DatasetError> {
    write_jsonl(path, truths)
}

/// Ground truth of one taxonomy, keyed by artifact.
pub fn truth_index<'a>(
    truths: &'a [GroundTruth],
    taxonomy: &str,
) -> Result<HashMap<&'a str, &'a GroundTruth>, MetricsError> {
    let mut map = HashMap::new();
    for t in truths.iter().filter(|t| t.taxonomy_name == taxonomy) {
        if map.insert(t.artifact_id.as_str(), t).is_some() {
            return Err(MetricsError::DuplicateTruth {
                artifact: t.artifact_id.clone(),
                taxonomy: taxonomy.to_owned(),
            });
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged precision, recall and F1. Truth records are matched by
/// artifact id within the predictions' taxonomy; empty truth sets add only
/// false positives. Zero denominators yield 0.
pub fn precision_recall_f1(
    predictions: &[Prediction],
    truths: &[GroundTruth],
) -> Result<PrecisionRecall, MetricsError> {
    let mut counts = Counts::default();
    let mut indexes: HashMap<&str, HashMap<&str, &GroundTruth>> = HashMap::new();
    for p in predictions {
        if !indexes.contains_key(p.taxonomy_name.as_str()) {
            indexes.insert(&p.taxonomy_name, truth_index(truths, &p.taxonomy_name)?);
        }
        let truth = indexes[p.taxonomy_name.as_str()]
            .get(p.artifact_id.as_str())
            .ok_or_else(|| MetricsError::UnknownArtifact(p.artifact_id.clone()))?;
        let predicted: BTreeSet<&str> = p.label_ids().collect();
        let hits = predicted
            .iter()
            .filter(|id| truth.true_labels.contains(**id))
            .count();
        counts.tp += hits;
        counts.fp += predicted.len() - hits;
        counts.fn_ += truth.true_labels.len() - hits;
    }
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    Ok(PrecisionRecall {
        precision,
        recall,
        f1: f_beta(precision, recall, 1.0),
        counts,
    })
}

/// `(1 + β²)·P·R / (β²·P + R)`, with 0 when both P and R are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * precision * recall / den
}

/// Inputs and result of the potential-over-true answer ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    /// Artifacts classified in the space.
    pub l_head: u64,
    /// Classes in the space.
    pub l_tail: u64,
    /// `l_head × l_tail`, every potential answer.
    pub l: u64,
    /// True labels in the ground truth.
    pub lambda: u64,
    pub beta: f64,
}

impl BetaParams {
    /// β to two decimals.
    pub fn display(&self) -> String {
        format!("{:.2}", self.beta)
    }

    /// β rounded to an integer, the way summary tables show it.
    pub fn rounded(&self) -> u64 {
        self.beta.round() as u64
    }
}

pub fn compute_beta(l_head: u64, l_tail: u64, lambda: u64) -> Result<BetaParams, MetricsError> {
    if lambda == 0 {
        return Err(MetricsError::ZeroLambda);
    }
    if l_head == 0 || l_tail == 0 {
        return Err(MetricsError::NonPositive { l_head, l_tail });
    }
    let l = l_head * l_tail;
    Ok(BetaParams {
        l_head,
        l_tail,
        l,
        lambda,
        // One correctly rounded division of two exact integers.
        beta: l as f64 / lambda as f64,
    })
}

/// β inputs for one taxonomy from its ground truth: `l_head` counts
/// artifacts with at least one label, `λ` counts labels.
pub fn beta_from_truth(tax: &Taxonomy, truths: &[GroundTruth]) -> Result<BetaParams, MetricsError> {
    let index = truth_index(truths, tax.name())?;
    let l_head = index.values().filter(|t| !t.true_labels.is_empty()).count() as u64;
    let lambda: u64 = index.values().map(|t| t.true_labels.len() as u64).sum();
    if lambda == 0 {
        return Err(MetricsError::ZeroLambda);
    }
    compute_beta(l_head, tax.len() as u64, lambda)
}

/// All metrics of one (taxonomy, model) cell. Every prediction must belong
/// to `tax`; truth records of other taxonomies are ignored.
pub fn evaluate(
    predictions: &[Prediction],
    truths: &[GroundTruth],
    tax: &Taxonomy,
    beta: f64,
) -> Result<EvalReport, MetricsError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(MetricsError::InvalidBeta(beta));
    }
    let mut model: Option<&str> = None;
    for p in predictions {
        if p.taxonomy_name != tax.name() {
            return Err(MetricsError::TaxonomyMismatch {
                expected: tax.name().to_owned(),
                found: p.taxonomy_name.clone(),
            });
        }
        match model {
            None => model = Some(&p.model_id),
            Some(m) if m != p.model_id => {
                return Err(MetricsError::ModelMismatch(m.to_owned(), p.model_id.clone()))
            }
            _ => {}
        }
        for id in p.label_ids() {
            tax.node(id)?;
        }
    }
    let index = truth_index(truths, tax.name())?;
    for t in index.values() {
        for id in &t.true_labels {
            tax.node(id)?;
        }
    }

    let prf = precision_recall_f1(predictions, truths)?;
    let mut per_artifact = Vec::new();
    let mut skipped = 0;
    for p in predictions {
        let truth = &index[p.artifact_id.as_str()];
        if truth.true_labels.is_empty() || p.labels.is_empty() {
            skipped += 1;
            continue;
        }
        let predicted: Vec<&str> = p.label_ids().collect();
        per_artifact.push(label_distance(
            tax,
            predicted.iter().copied(),
            truth.true_labels.iter().map(String::as_str),
        )?);
    }

    Ok(EvalReport {
        taxonomy_name: tax.name().to_owned(),
        model_id: model.unwrap_or_default().to_owned(),
        k: predictions.iter().map(|p| p.k).max().unwrap_or(0),
        beta,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        f_beta: f_beta(prf.precision, prf.recall, beta),
        counts: prf.counts,
        distance: DistanceSummary::macro_average(&per_artifact, tax.max_distance()),
        artifacts: predictions.len(),
        skipped,
        failures: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::classifier::RankedLabel;

    pub(super) fn prediction(artifact: &str, tax: &str, labels: &[&str]) -> Prediction {
        Prediction {
            artifact_id: artifact.into(),
            taxonomy_name: tax.into(),
            model_id: "m".into(),
            k: labels.len(),
            labels: labels
                .iter()
                .enumerate()
                .map(|(i, id)| RankedLabel {
                    node_id: id.to_string(),
                    score: 1.0 - i as f64 / 100.0,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    #[test]
    fn one_hit_in_three() {
        let prf = precision_recall_f1(
            &[prediction("r", "T", &["a", "b", "c"])],
            &[GroundTruth::new("r", "T", ["a"])],
        )
        .unwrap();
        assert!((prf.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(prf.recall, 1.0);
        assert!((prf.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fifteen_predictions_two_hits() {
        let labels: Vec<String> = (0..15).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let truth = GroundTruth::new("r", "T", ["n3", "n9", "x1", "x2"]);
        let prf = precision_recall_f1(&[prediction("r", "T", &refs)], &[truth]).unwrap();
        // Counting oracle: |{n3, n9}| = 2 hits of 15 predicted, 4 true.
        assert_eq!(prf.counts, Counts { tp: 2, fp: 13, fn_: 2 });
        assert!((prf.precision - 2.0 / 15.0).abs() < 1e-12);
        assert_eq!(prf.recall, 0.5);
    }

    #[test]
    fn no_hits_is_all_zero() {
        let prf = precision_recall_f1(
            &[prediction("r", "T", &["a"])],
            &[GroundTruth::new("r", "T", ["b"])],
        )
        .unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_truth_only_adds_false_positives() {
        let prf = precision_recall_f1(
            &[prediction("r", "T", &["a", "b"]), prediction("s", "T", &["a"])],
            &[
                GroundTruth::new("r", "T", Vec::<String>::new()),
                GroundTruth::new("s", "T", ["a"]),
            ],
        )
        .unwrap();
        assert_eq!(prf.counts, Counts { tp: 1, fp: 2, fn_: 0 });
    }

    #[test]
    fn unknown_artifact_is_an_error() {
        let err = precision_recall_f1(
            &[prediction("r", "T", &["a"])],
            &[GroundTruth::new("r", "OTHER", ["a"])],
        )
        .unwrap_err();
        assert_eq!(err, MetricsError::UnknownArtifact("r".into()));
    }

    #[test]
    fn worked_beta() {
        let b = compute_beta(81, 250, 107).unwrap();
        assert_eq!(b.l, 20250);
        assert_eq!(b.display(), "189.25");
        assert_eq!(b.rounded(), 189);
        assert!((compute_beta(24, 256, 30).unwrap().beta - 204.8).abs() < 1e-12);
        assert_eq!(compute_beta(10, 10, 100).unwrap().beta, 1.0);
        assert_eq!(compute_beta(1, 1, 0), Err(MetricsError::ZeroLambda));
        assert!(compute_beta(0, 1, 1).is_err());
    }

    #[test]
    fn f_beta_spot_values() {
        assert!((f_beta(0.5, 0.5, 1.0) - 0.5).abs() < 1e-12);
        assert!((f_beta(0.07, 0.75, 189.0) - 0.7498).abs() < 1e-4);
        assert!((f_beta(0.07, 0.83, 189.0) - 0.8298).abs() < 1e-4);
        assert_eq!(f_beta(0.0, 0.0, 189.0), 0.0);
    }

    proptest! {
        #[test]
        fn f_beta_one_is_f1(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((f_beta(p, r, 1.0) - f1).abs() <= 1e-12);
        }

        #[test]
        fn f_beta_rises_towards_recall(p in 0.01f64..0.5, gap in 0.01f64..0.5, b1 in 0.1f64..300.0, db in 0.0f64..300.0) {
            let r = p + gap;
            let lo = f_beta(p, r, b1);
            let hi = f_beta(p, r, b1 + db);
            prop_assert!(hi + 1e-12 >= lo);
            prop_assert!(hi <= r + 1e-12);
        }

        #[test]
        fn recall_grows_with_k(
            truth in prop::collection::btree_set(0usize..30, 0..8),
            ranking in Just((0usize..30).collect::<Vec<_>>()).prop_shuffle(),
            k1 in 1usize..30,
            extra in 0usize..30,
        ) {
            let ids: Vec<String> = ranking.iter().map(|i| format!("n{i}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let truth = GroundTruth::new("r", "T", truth.iter().map(|i| format!("n{i}")));
            let k2 = (k1 + extra).min(30);
            let small = precision_recall_f1(&[prediction("r", "T", &refs[..k1])], std::slice::from_ref(&truth)).unwrap();
            let big = precision_recall_f1(&[prediction("r", "T", &refs[..k2])], std::slice::from_ref(&truth)).unwrap();
            prop_assert!(big.recall >= small.recall);
        }
    }
}
