use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::taxonomy::Taxonomy;

/// A true label and the predicted label nearest to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatch {
    pub true_label: String,
    pub predicted_label: String,
    pub hops: u32,
}

/// Hop distance of one artifact's prediction.
///
/// `d_abs` matches every true label to its nearest predicted label and
/// averages the hops over true labels. The predicted-centric variant does
/// the same from the other side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub d_abs: f64,
    pub d_norm: f64,
    pub d_max: u32,
    pub per_label: Vec<LabelMatch>,
    pub d_abs_pred_centric: f64,
    pub d_norm_pred_centric: f64,
}

/// Nearest target to `from`; ties go to the smallest id.
fn nearest<'a>(
    tax: &Taxonomy,
    from: &str,
    targets: &BTreeSet<&'a str>,
) -> Result<(&'a str, u32), MetricsError> {
    let mut best: Option<(&str, u32)> = None;
    for &t in targets {
        let h = tax.hop_distance(from, t)?;
        if best.is_none_or(|(_, b)| h < b) {
            best = Some((t, h));
        }
    }
    Ok(best.expect("targets non-empty"))
}

pub fn label_distance<'a>(
    tax: &Taxonomy,
    predicted: impl IntoIterator<Item = &'a str>,
    truth: impl IntoIterator<Item = &'a str>,
) -> Result<DistanceResult, MetricsError> {
    let predicted: BTreeSet<&str> = predicted.into_iter().collect();
    let truth: BTreeSet<&str> = truth.into_iter().collect();
    if predicted.is_empty() {
        return Err(MetricsError::EmptyPredicted);
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyTruth);
    }
    for id in predicted.iter().chain(&truth) {
        tax.node(id)?;
    }

    let mut per_label = Vec::with_capacity(truth.len());
    for &t in &truth {
        let (p, hops) = nearest(tax, t, &predicted)?;
        per_label.push(LabelMatch {
            true_label: t.to_owned(),
            predicted_label: p.to_owned(),
            hops,
        });
    }
    let mut pred_total = 0u64;
    for &p in &predicted {
        pred_total += u64::from(nearest(tax, p, &truth)?.1);
    }

    let d_max = tax.max_distance();
    let d_abs = per_label.iter().map(|m| f64::from(m.hops)).sum::<f64>() / per_label.len() as f64;
    let d_abs_pred_centric = pred_total as f64 / predicted.len() as f64;
    Ok(DistanceResult {
        d_abs,
        d_norm: d_abs / f64::from(d_max),
        d_max,
        per_label,
        d_abs_pred_centric,
        d_norm_pred_centric: d_abs_pred_centric / f64::from(d_max),
    })
}

/// Per-artifact distances macro-averaged over a dataset. Absent when no
/// artifact had both a prediction and a non-empty truth set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub d_abs: Option<f64>,
    pub d_norm: Option<f64>,
    pub d_max: u32,
    pub d_abs_pred_centric: Option<f64>,
    pub d_norm_pred_centric: Option<f64>,
    /// Artifacts that contributed to the averages.
    pub scored: usize,
}

impl DistanceSummary {
    pub fn macro_average(results: &[DistanceResult], d_max: u32) -> Self {
        let n = results.len();
        let mean = |f: fn(&DistanceResult) -> f64| {
            (n > 0).then(|| results.iter().map(f).sum::<f64>() / n as f64)
        };
        let d_abs = mean(|r| r.d_abs);
        let d_abs_pred_centric = mean(|r| r.d_abs_pred_centric);
        let norm = |d: Option<f64>| d.map(|d| d / f64::from(d_max));
        Self {
            d_abs,
            d_norm: norm(d_abs),
            d_max,
            d_abs_pred_centric,
            d_norm_pred_centric: norm(d_abs_pred_centric),
            scored: n,
        }
    }
}
