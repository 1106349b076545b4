//! Zero-shot top-k classification.
//!
//! Each class is embedded once from its aggregated description (own text
//! plus direct children), each artifact from its text prefixed with the
//! document and section titles. Classes are ranked by cosine similarity
//! against the artifact; equal scores fall back to ascending node id.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, Embedder};
use crate::taxonomy::Taxonomy;

/// Label count reported throughout the experiments.
pub const DEFAULT_K: usize = 15;

pub const CONTEXT_SEPARATOR: &str = ". ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("artifact `{0}` has empty text")]
    EmptyArtifact(String),
    #[error("embedding artifact `{artifact}`: {source}")]
    ArtifactEmbedding {
        artifact: String,
        #[source]
        source: EmbedError,
    },
    #[error("embedding node `{node}` of taxonomy `{taxonomy}`: {source}")]
    NodeEmbedding {
        taxonomy: String,
        node: String,
        #[source]
        source: EmbedError,
    },
    #[error("scoring artifact `{artifact}`: {source}")]
    Scoring {
        artifact: String,
        #[source]
        source: EmbedError,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

/// A text item to classify, with optional document context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub document_title: Option<String>,
    #[serde(default)]
    pub section_title: Option<String>,
}

impl Artifact {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            document_title: None,
            section_title: None,
        }
    }

    pub fn with_context(mut self, document: Option<&str>, section: Option<&str>) -> Self {
        self.document_title = document.map(str::to_owned);
        self.section_title = section.map(str::to_owned);
        self
    }
}

/// Document title, section title and text, skipping absent or blank parts.
pub fn aggregate_artifact(a: &Artifact) -> String {
    [a.document_title.as_deref(), a.section_title.as_deref(), Some(a.text.as_str())]
        .into_iter()
        .flatten()
        .filter(|s| !s.trim().is_empty())
        .collect::<Vec<_>>()
        .join(CONTEXT_SEPARATOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub node_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub artifact_id: String,
    #[serde(rename = "taxonomy")]
    pub taxonomy_name: String,
    #[serde(rename = "model")]
    pub model_id: String,
    pub k: usize,
    pub labels: Vec<RankedLabel>,
}

impl Prediction {
    pub fn label_ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.node_id.as_str())
    }

    /// The first `k` labels, as a prediction at that `k`.
    pub fn truncated(&self, k: usize) -> Prediction {
        Prediction {
            k,
            labels: self.labels.iter().take(k).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Embeddings of every real node of one taxonomy under one provider.
#[derive(Debug, Clone)]
pub struct NodeIndex {
    taxonomy_name: String,
    model_id: String,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl NodeIndex {
    pub fn build(tax: &Taxonomy, provider: &dyn Embedder) -> Result<Self, ClassifyError> {
        let ids: Vec<String> = tax.nodes().iter().map(|n| n.id.clone()).collect();
        let texts: Vec<String> = ids
            .iter()
            .map(|id| tax.aggregate_node_description(id).expect("id from taxonomy"))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = provider.embed_batch(&refs).map_err(|e| {
            let node = match &e {
                EmbedError::Item { index, .. } => ids[*index].clone(),
                EmbedError::Chunk { start, len, .. } if *len > 1 => {
                    format!("{} (+{} more in batch)", ids[*start], len - 1)
                }
                EmbedError::Chunk { start, .. } => ids[*start].clone(),
                _ => String::new(),
            };
            ClassifyError::NodeEmbedding {
                taxonomy: tax.name().to_owned(),
                node,
                source: e.root().clone(),
            }
        })?;
        Ok(Self {
            taxonomy_name: tax.name().to_owned(),
            model_id: provider.model_id().to_owned(),
            ids,
            vectors: vectors.into_iter().map(|v| v.values).collect(),
        })
    }

    pub fn taxonomy_name(&self) -> &str {
        &self.taxonomy_name
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, node_id: &str) -> Option<&[f64]> {
        self.ids
            .iter()
            .position(|id| id == node_id)
            .map(|i| self.vectors[i].as_slice())
    }

    /// Ranks every node against an artifact vector and keeps the top `k`.
    pub fn rank(&self, query: &[f64], k: usize) -> Result<Vec<RankedLabel>, EmbedError> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| cosine(query, v).map(|s| (i, s)))
            .collect::<Result<_, _>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (i, score))| RankedLabel {
                node_id: self.ids[i].clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    /// Classifies one artifact against this index.
    pub fn classify(
        &self,
        artifact: &Artifact,
        provider: &dyn Embedder,
        k: usize,
    ) -> Result<Prediction, ClassifyError> {
        if k == 0 {
            return Err(ClassifyError::InvalidK);
        }
        if artifact.text.trim().is_empty() {
            return Err(ClassifyError::EmptyArtifact(artifact.id.clone()));
        }
        let query = provider
            .embed(&aggregate_artifact(artifact))
            .map_err(|source| ClassifyError::ArtifactEmbedding {
                artifact: artifact.id.clone(),
                source,
            })?;
        let labels = self
            .rank(&query.values, k)
            .map_err(|source| ClassifyError::Scoring {
                artifact: artifact.id.clone(),
                source,
            })?;
        Ok(Prediction {
            artifact_id: artifact.id.clone(),
            taxonomy_name: self.taxonomy_name.clone(),
            model_id: self.model_id.clone(),
            k,
            labels,
        })
    }
}

/// Classifies a single artifact, embedding the whole taxonomy on the way.
/// Use [`NodeIndex`] or [`classify_dataset`] for more than one artifact.
pub fn classify(
    artifact: &Artifact,
    tax: &Taxonomy,
    provider: &dyn Embedder,
    k: usize,
) -> Result<Prediction, ClassifyError> {
    if k == 0 {
        return Err(ClassifyError::InvalidK);
    }
    NodeIndex::build(tax, provider)?.classify(artifact, provider, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFailure {
    pub artifact_id: String,
    pub error: String,
}

/// Output of a dataset run: predictions in input order minus failures.
#[derive(Debug, Clone, Default)]
pub struct DatasetRun {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<ArtifactFailure>,
}

/// Classifies every artifact against one taxonomy. Node embeddings are
/// computed once; a failure to embed them fails the whole run, while
/// per-artifact failures are recorded and skipped.
pub fn classify_dataset(
    artifacts: &[Artifact],
    tax: &Taxonomy,
    provider: &dyn Embedder,
    k: usize,
) -> Result<DatasetRun, ClassifyError> {
    if k == 0 {
        return Err(ClassifyError::InvalidK);
    }
    if artifacts.is_empty() {
        return Ok(DatasetRun::default());
    }
    let index = NodeIndex::build(tax, provider)?;
    Ok(classify_with_index(artifacts, &index, provider, k))
}

pub fn classify_with_index(
    artifacts: &[Artifact],
    index: &NodeIndex,
    provider: &dyn Embedder,
    k: usize,
) -> DatasetRun {
    let results: Vec<Result<Prediction, ClassifyError>> = artifacts
        .par_iter()
        .map(|a| index.classify(a, provider, k))
        .collect();
    let mut run = DatasetRun::default();
    for (artifact, result) in artifacts.iter().zip(results) {
        match result {
            Ok(p) => run.predictions.push(p),
            Err(e) => run.failures.push(ArtifactFailure {
                artifact_id: artifact.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    run
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Reads JSON Lines, skipping blank lines; errors carry 1-based line numbers.
pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    Ok(read_jsonl_numbered(path)?.into_iter().map(|(_, t)| t).collect())
}

/// Like [`read_jsonl`], keeping the line number of each record.
pub(crate) fn read_jsonl_numbered<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<Vec<(usize, T)>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DatasetError::Line {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, item));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| io_err(path, e))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

/// Loads a dataset, enforcing unique ids and non-empty text.
pub fn read_artifacts(path: &Path) -> Result<Vec<Artifact>, DatasetError> {
    let records: Vec<(usize, Artifact)> = read_jsonl_numbered(path)?;
    let mut seen = HashSet::new();
    for (line, a) in &records {
        let line = *line;
        if a.text.trim().is_empty() {
            return Err(DatasetError::Line {
                line,
                reason: format!("artifact `{}` has empty text", a.id),
            });
        }
        if !seen.insert(a.id.as_str()) {
            return Err(DatasetError::Line {
                line,
                reason: format!("duplicate artifact id `{}`", a.id),
            });
        }
    }
    Ok(records.into_iter().map(|(_, a)| a).collect())
}

pub fn write_artifacts(path: &Path, artifacts: &[Artifact]) -> Result<(), DatasetError> {
    write_jsonl(path, artifacts)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, DatasetError> {
    read_jsonl(path)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), DatasetError> {
    write_jsonl(path, predictions)
}
