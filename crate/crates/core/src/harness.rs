//! Experiment runner: every provider against every output space at fixed k,
//! with reports written to a fixed directory layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    classify_with_index, read_artifacts, write_predictions, Artifact, DatasetError, NodeIndex,
    DEFAULT_K,
};
use crate::embedding::{Embedder, EmbeddingProviderConfig};
use crate::metrics::{
    beta_from_truth, evaluate, read_ground_truth, render_table, summary_csv, truth_index,
    BetaParams, EvalReport, GroundTruth, MetricsError,
};
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("output space `{taxonomy}`: {source}")]
    Metrics {
        taxonomy: String,
        source: MetricsError,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// One k or several.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KValues {
    One(usize),
    Many(Vec<usize>),
}

impl Default for KValues {
    fn default() -> Self {
        KValues::One(DEFAULT_K)
    }
}

impl KValues {
    /// Sorted and deduplicated.
    pub fn values(&self) -> Vec<usize> {
        let mut v = match self {
            KValues::One(k) => vec![*k],
            KValues::Many(ks) => ks.clone(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derived {
    Derived,
}

/// A fixed β, or `"derived"` to compute it from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    Keyword(Derived),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Output space name to taxonomy file.
    pub taxonomies: BTreeMap<String, PathBuf>,
    pub dataset: PathBuf,
    pub ground_truth: PathBuf,
    pub providers: Vec<EmbeddingProviderConfig>,
    #[serde(default)]
    pub k: KValues,
    /// Absent means derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaSpec>,
    pub output_dir: PathBuf,
    /// Seed for mock providers that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Cells run at once; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    /// Review annotations, used by the service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_store: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a JSON config; relative paths are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let src = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&src).map_err(|e| HarnessError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Prefixes every relative path with `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.taxonomies.values_mut().for_each(fix);
        fix(&mut self.dataset);
        fix(&mut self.ground_truth);
        fix(&mut self.output_dir);
        if let Some(p) = self.annotation_store.as_mut() {
            fix(p);
        }
        for prov in &mut self.providers {
            if let Some(p) = prov.cache_path.as_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.taxonomies.is_empty() {
            return Err(HarnessError::Config("at least one taxonomy is required".into()));
        }
        if self.providers.is_empty() {
            return Err(HarnessError::Config("at least one provider is required".into()));
        }
        let ks = self.k.values();
        if ks.is_empty() || ks.contains(&0) {
            return Err(HarnessError::Config("every k must be at least 1".into()));
        }
        match self.beta {
            Some(BetaSpec::Value(b)) if !(b.is_finite() && b > 0.0) => {
                return Err(HarnessError::Config(format!("beta must be positive, got {b}")))
            }
            _ => {}
        }
        if self.parallelism == Some(0) {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        let mut models = std::collections::BTreeSet::new();
        for p in &self.providers {
            if !models.insert(dir_name(&p.model_id)) {
                return Err(HarnessError::Config(format!(
                    "duplicate provider model `{}`",
                    p.model_id
                )));
            }
        }
        let files = self
            .taxonomies
            .values()
            .chain([&self.dataset, &self.ground_truth]);
        for f in files {
            if !f.is_file() {
                return Err(HarnessError::Config(format!("{} does not exist", f.display())));
            }
        }
        Ok(())
    }

    /// Provider configs with the run seed filled in for mocks.
    pub fn seeded_providers(&self) -> Vec<EmbeddingProviderConfig> {
        self.providers
            .iter()
            .cloned()
            .map(|mut p| {
                if p.seed.is_none() {
                    p.seed = self.seed;
                }
                p
            })
            .collect()
    }
}

/// A directory name for a model id.
pub fn dir_name(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Inputs of a run, parsed and cross-checked.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub taxonomies: Vec<Taxonomy>,
    pub artifacts: Vec<Artifact>,
    pub truths: Vec<GroundTruth>,
}

impl LoadedInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let taxonomies = cfg
            .taxonomies
            .iter()
            .map(|(name, path)| Taxonomy::load_named(name.clone(), path))
            .collect::<Result<Vec<_>, _>>()?;
        let artifacts = read_artifacts(&cfg.dataset)?;
        let truths = read_ground_truth(&cfg.ground_truth)?;
        for tax in &taxonomies {
            let index = truth_index(&truths, tax.name()).map_err(|source| HarnessError::Metrics {
                taxonomy: tax.name().to_owned(),
                source,
            })?;
            for t in index.values() {
                if !artifacts.iter().any(|a| a.id == t.artifact_id) {
                    return Err(HarnessError::Config(format!(
                        "ground truth names unknown artifact `{}`",
                        t.artifact_id
                    )));
                }
                for label in &t.true_labels {
                    tax.node(label)?;
                }
            }
        }
        Ok(Self {
            taxonomies,
            artifacts,
            truths,
        })
    }

    pub fn taxonomy(&self, name: &str) -> Option<&Taxonomy> {
        self.taxonomies.iter().find(|t| t.name() == name)
    }

    /// Artifacts annotated in `tax`, in dataset order.
    pub fn annotated(&self, tax: &str) -> Vec<Artifact> {
        let annotated: std::collections::HashSet<&str> = self
            .truths
            .iter()
            .filter(|t| t.taxonomy_name == tax)
            .map(|t| t.artifact_id.as_str())
            .collect();
        self.artifacts
            .iter()
            .filter(|a| annotated.contains(a.id.as_str()))
            .cloned()
            .collect()
    }
}

/// β per output space, in taxonomy name order.
pub fn derive_beta(inputs: &LoadedInputs) -> Vec<(String, Result<BetaParams, MetricsError>)> {
    inputs
        .taxonomies
        .iter()
        .map(|t| (t.name().to_owned(), beta_from_truth(t, &inputs.truths)))
        .collect()
}

/// `OS  l_head  l_tail  l  λ  β  β (rounded)` table.
pub fn render_beta_table(rows: &[(String, Result<BetaParams, MetricsError>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>7} {:>7} {:>9} {:>7} {:>9} {:>6}",
        "OS", "l_head", "l_tail", "l", "lambda", "beta", "shown"
    );
    for (name, row) in rows {
        match row {
            Ok(b) => {
                let _ = writeln!(
                    out,
                    "{:<8} {:>7} {:>7} {:>9} {:>7} {:>9} {:>6}",
                    name,
                    b.l_head,
                    b.l_tail,
                    b.l,
                    b.lambda,
                    b.display(),
                    b.rounded()
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{name:<8} error: {e}");
            }
        }
    }
    out
}

/// The run's single β. A derived β is that of the output space with the
/// fewest classes (ties by name); its name is returned alongside.
pub fn global_beta(
    cfg: &RunConfig,
    inputs: &LoadedInputs,
) -> Result<(f64, Option<String>), HarnessError> {
    if let Some(BetaSpec::Value(b)) = cfg.beta {
        return Ok((b, None));
    }
    let smallest = inputs
        .taxonomies
        .iter()
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.name().cmp(b.name())))
        .expect("validated non-empty");
    let b = beta_from_truth(smallest, &inputs.truths).map_err(|source| HarnessError::Metrics {
        taxonomy: smallest.name().to_owned(),
        source,
    })?;
    Ok((b.beta, Some(smallest.name().to_owned())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbortedCell {
    pub taxonomy: String,
    pub model: String,
    pub reason: String,
}

/// Wall-clock of one cell; kept out of written files so reruns stay
/// byte-identical.
#[derive(Debug, Clone)]
pub struct CellTiming {
    pub taxonomy: String,
    pub model: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub beta: f64,
    /// Output space the β was derived from, if derived.
    pub beta_source: Option<String>,
    /// Sorted by (taxonomy, model, k).
    pub reports: Vec<EvalReport>,
    pub aborted: Vec<AbortedCell>,
    pub timings: Vec<CellTiming>,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.aborted.is_empty()
    }
}

/// Directory of one cell's files.
pub fn cell_dir(out: &Path, taxonomy: &str, model: &str, k: usize, multi_k: bool) -> PathBuf {
    let dir = out.join(taxonomy).join(dir_name(model));
    if multi_k {
        dir.join(format!("k{k}"))
    } else {
        dir
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

struct Cell<'a> {
    tax: &'a Taxonomy,
    provider: usize,
}

fn run_cell(
    cell: &Cell<'_>,
    provider: &dyn Embedder,
    inputs: &LoadedInputs,
    ks: &[usize],
    beta: f64,
    out: &Path,
) -> Result<Vec<EvalReport>, String> {
    let artifacts = inputs.annotated(cell.tax.name());
    let index = NodeIndex::build(cell.tax, provider).map_err(|e| e.to_string())?;
    let k_max = *ks.last().expect("validated non-empty");
    let run = classify_with_index(&artifacts, &index, provider, k_max);
    let multi = ks.len() > 1;
    let mut reports = Vec::with_capacity(ks.len());
    for &k in ks {
        let predictions: Vec<_> = run.predictions.iter().map(|p| p.truncated(k)).collect();
        let report = evaluate(&predictions, &inputs.truths, cell.tax, beta)
            .map_err(|e| e.to_string())?
            .with_failures(run.failures.clone());
        // An empty cell still reports the k it was asked for.
        let report = EvalReport { k, ..report };
        let dir = cell_dir(out, cell.tax.name(), provider.model_id(), k, multi);
        std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        write_predictions(&dir.join("predictions.jsonl"), &predictions).map_err(|e| e.to_string())?;
        write_file(&dir.join("report.json"), &pretty_json(&report)).map_err(|e| e.to_string())?;
        reports.push(report);
    }
    Ok(reports)
}

/// Runs every (provider, taxonomy) cell and writes predictions, reports and
/// the combined summary. Cell failures are collected, not raised.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let inputs = LoadedInputs::load(cfg)?;
    run_loaded(cfg, &inputs)
}

pub fn run_loaded(cfg: &RunConfig, inputs: &LoadedInputs) -> Result<RunOutcome, HarnessError> {
    let (beta, beta_source) = global_beta(cfg, inputs)?;
    let ks = cfg.k.values();
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let providers = cfg.seeded_providers();
    let built: Vec<Result<Box<dyn Embedder>, String>> = providers
        .iter()
        .map(|p| p.build().map_err(|e| e.to_string()))
        .collect();
    let cells: Vec<Cell<'_>> = (0..providers.len())
        .flat_map(|provider| inputs.taxonomies.iter().map(move |tax| Cell { tax, provider }))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<(Result<Vec<EvalReport>, String>, Duration)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let start = Instant::now();
                let result = match &built[cell.provider] {
                    Ok(p) => run_cell(cell, p.as_ref(), inputs, &ks, beta, out),
                    Err(e) => Err(format!("provider unavailable: {e}")),
                };
                (result, start.elapsed())
            })
            .collect()
    });

    let mut reports = Vec::new();
    let mut aborted = Vec::new();
    let mut timings = Vec::new();
    for (cell, (result, elapsed)) in cells.iter().zip(results) {
        let model = providers[cell.provider].model_id.clone();
        timings.push(CellTiming {
            taxonomy: cell.tax.name().to_owned(),
            model: model.clone(),
            elapsed,
        });
        match result {
            Ok(r) => reports.extend(r),
            Err(reason) => aborted.push(AbortedCell {
                taxonomy: cell.tax.name().to_owned(),
                model,
                reason,
            }),
        }
    }
    reports.sort_by(|a, b| {
        (&a.taxonomy_name, &a.model_id, a.k).cmp(&(&b.taxonomy_name, &b.model_id, b.k))
    });
    aborted.sort_by(|a, b| (&a.taxonomy, &a.model).cmp(&(&b.taxonomy, &b.model)));

    write_file(&out.join("summary.csv"), summary_csv(&reports).as_bytes())?;
    write_file(
        &out.join("summary.txt"),
        render_summary(beta, beta_source.as_deref(), &reports, &aborted).as_bytes(),
    )?;
    Ok(RunOutcome {
        beta,
        beta_source,
        reports,
        aborted,
        timings,
    })
}

pub fn render_summary(
    beta: f64,
    beta_source: Option<&str>,
    reports: &[EvalReport],
    aborted: &[AbortedCell],
) -> String {
    let source = match beta_source {
        Some(s) => format!("derived from output space {s}"),
        None => "configured".to_owned(),
    };
    let aborted: Vec<(String, String, String)> = aborted
        .iter()
        .map(|a| (a.taxonomy.clone(), a.model.clone(), a.reason.clone()))
        .collect();
    format!(
        "beta = {beta:.2} ({source})\n\n{}",
        render_table(reports, &aborted)
    )
}

/// Every `report.json` under a run's output directory, sorted by
/// (taxonomy, model, k).
pub fn load_reports(out: &Path) -> Result<Vec<EvalReport>, HarnessError> {
    fn visit(dir: &Path, depth: usize, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() && depth < 3 {
                visit(&path, depth + 1, found)?;
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                found.push(path);
            }
        }
        Ok(())
    }
    let mut found = Vec::new();
    if out.is_dir() {
        visit(out, 0, &mut found).map_err(|e| io_err(out, e))?;
    }
    let mut reports = Vec::new();
    for path in found {
        let src = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let r: EvalReport = serde_json::from_str(&src).map_err(|e| io_err(&path, e))?;
        reports.push(r);
    }
    reports.sort_by(|a, b| {
        (&a.taxonomy_name, &a.model_id, a.k).cmp(&(&b.taxonomy_name, &b.model_id, b.k))
    });
    Ok(reports)
}
