//! HTTP API for the review workflow: taxonomy and dataset listings, top-k
//! suggestions with their taxonomy neighborhoods, and an append-only log of
//! expert accept/reject decisions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use taxotrace_core::classifier::{Artifact, ClassifyError, NodeIndex, Prediction, DEFAULT_K};
use taxotrace_core::harness::{load_reports, LoadedInputs, RunConfig};
use taxotrace_core::metrics::GroundTruth;
use taxotrace_core::{Embedder, Taxonomy};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub mod schema;
pub mod store;

pub use store::{AnnotationRecord, AnnotationStore, StoreError};

/// Radius shown when no evaluation report gives an average distance.
pub const FALLBACK_RADIUS: u32 = 2;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Harness(#[from] taxotrace_core::harness::HarnessError),
    #[error("provider `{model}`: {reason}")]
    Provider { model: String, reason: String },
    #[error("config has no annotation_store")]
    NoStore,
}

/// An error response: status plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Malformed { .. } => Self::new(StatusCode::CONFLICT, e.to_string()),
            StoreError::NotMonotone { .. } => Self::bad_request(e.to_string()),
            StoreError::Io { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// (taxonomy, model).
type CellKey = (String, String);
/// (taxonomy, model, artifact, k).
type SuggestionKey = (String, String, String, usize);

struct Provider {
    model_id: String,
    embedder: Box<dyn Embedder>,
}

/// Everything the handlers read, loaded once at startup.
pub struct AppState {
    taxonomies: BTreeMap<String, Taxonomy>,
    /// Sorted by id.
    artifacts: Vec<Artifact>,
    artifact_pos: HashMap<String, usize>,
    providers: Vec<Provider>,
    /// (taxonomy, model) to (k, mean hop distance) of the last run.
    distances: HashMap<CellKey, Vec<(usize, Option<f64>)>>,
    indexes: Mutex<HashMap<CellKey, Arc<NodeIndex>>>,
    suggestions: RwLock<HashMap<SuggestionKey, Arc<Prediction>>>,
    store: Result<tokio::sync::Mutex<AnnotationStore>, StoreError>,
}

impl AppState {
    /// Loads inputs, builds providers and opens the annotation store. Call
    /// outside an async runtime: blocking http clients are created here.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let inputs = LoadedInputs::load(cfg)?;
        let providers = cfg
            .seeded_providers()
            .iter()
            .map(|p| {
                p.build()
                    .map(|embedder| Provider {
                        model_id: p.model_id.clone(),
                        embedder,
                    })
                    .map_err(|e| ServiceError::Provider {
                        model: p.model_id.clone(),
                        reason: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let store_path = cfg.annotation_store.as_deref().ok_or(ServiceError::NoStore)?;
        let reports = load_reports(&cfg.output_dir).unwrap_or_default();
        let mut distances: HashMap<CellKey, Vec<(usize, Option<f64>)>> = HashMap::new();
        for r in reports {
            distances
                .entry((r.taxonomy_name, r.model_id))
                .or_default()
                .push((r.k, r.distance.d_abs));
        }
        Ok(Self::assemble(inputs, providers, distances, store_path))
    }

    fn assemble(
        inputs: LoadedInputs,
        providers: Vec<Provider>,
        distances: HashMap<CellKey, Vec<(usize, Option<f64>)>>,
        store_path: &Path,
    ) -> Self {
        let mut artifacts = inputs.artifacts;
        artifacts.sort_by(|a, b| a.id.cmp(&b.id));
        let artifact_pos = artifacts
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();
        Self {
            taxonomies: inputs
                .taxonomies
                .into_iter()
                .map(|t| (t.name().to_owned(), t))
                .collect(),
            artifacts,
            artifact_pos,
            providers,
            distances,
            indexes: Mutex::new(HashMap::new()),
            suggestions: RwLock::new(HashMap::new()),
            store: AnnotationStore::open(store_path).map(tokio::sync::Mutex::new),
        }
    }

    fn taxonomy(&self, name: &str) -> ApiResult<&Taxonomy> {
        self.taxonomies
            .get(name)
            .ok_or_else(|| ApiError::not_found(format!("unknown taxonomy `{name}`")))
    }

    fn artifact(&self, id: &str) -> ApiResult<&Artifact> {
        self.artifact_pos
            .get(id)
            .map(|&i| &self.artifacts[i])
            .ok_or_else(|| ApiError::not_found(format!("unknown artifact `{id}`")))
    }

    fn provider(&self, model: Option<&str>) -> ApiResult<&Provider> {
        match model {
            None => Ok(&self.providers[0]),
            Some(m) => self
                .providers
                .iter()
                .find(|p| p.model_id == m)
                .ok_or_else(|| ApiError::not_found(format!("unknown model `{m}`"))),
        }
    }

    fn store(&self) -> ApiResult<&tokio::sync::Mutex<AnnotationStore>> {
        self.store.as_ref().map_err(|e| e.clone().into())
    }

    /// round(mean hop distance) of the last run for this cell, preferring
    /// the report at the same k, else the largest k.
    pub fn default_radius(&self, taxonomy: &str, model: &str, k: usize) -> u32 {
        let Some(entries) = self.distances.get(&(taxonomy.to_owned(), model.to_owned())) else {
            return FALLBACK_RADIUS;
        };
        let pick = entries
            .iter()
            .find(|(rk, _)| *rk == k)
            .or_else(|| entries.iter().max_by_key(|(rk, _)| *rk));
        match pick {
            Some((_, Some(d))) => d.round() as u32,
            _ => FALLBACK_RADIUS,
        }
    }

    fn node_index(&self, tax: &Taxonomy, provider: &Provider) -> Result<Arc<NodeIndex>, ClassifyError> {
        let key = (tax.name().to_owned(), provider.model_id.clone());
        if let Some(ix) = self.indexes.lock().expect("index cache").get(&key) {
            return Ok(ix.clone());
        }
        // Built outside the lock; a racing duplicate is identical.
        let ix = Arc::new(NodeIndex::build(tax, provider.embedder.as_ref())?);
        Ok(self
            .indexes
            .lock()
            .expect("index cache")
            .entry(key)
            .or_insert(ix)
            .clone())
    }

    /// The offline classifier's prediction, memoized per
    /// (artifact, taxonomy, model, k). Blocking.
    pub fn predict(
        &self,
        artifact_id: &str,
        taxonomy: &str,
        model: Option<&str>,
        k: usize,
    ) -> ApiResult<Arc<Prediction>> {
        let artifact = self.artifact(artifact_id)?;
        let tax = self.taxonomy(taxonomy)?;
        let provider = self.provider(model)?;
        let key = (
            artifact_id.to_owned(),
            taxonomy.to_owned(),
            provider.model_id.clone(),
            k,
        );
        if let Some(p) = self.suggestions.read().expect("suggestion cache").get(&key) {
            return Ok(p.clone());
        }
        let provider_error = |e: ClassifyError| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string());
        let index = self.node_index(tax, provider).map_err(provider_error)?;
        let prediction = Arc::new(
            index
                .classify(artifact, provider.embedder.as_ref(), k)
                .map_err(provider_error)?,
        );
        self.suggestions
            .write()
            .expect("suggestion cache")
            .insert(key, prediction.clone());
        Ok(prediction)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeView {
    pub id: String,
    pub parent_id: Option<String>,
    pub label: String,
    pub description: String,
    pub level: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Neighbor {
    pub node_id: String,
    pub label: String,
    pub distance: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Suggestion {
    pub node_id: String,
    pub label: String,
    pub score: f64,
    pub rank: usize,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuggestionResponse {
    pub artifact_id: String,
    pub taxonomy_name: String,
    pub model: String,
    pub k: usize,
    pub radius: u32,
    pub suggestions: Vec<Suggestion>,
}

/// Body of `POST /annotations`. The server stamps the time when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub artifact_id: String,
    pub taxonomy_name: String,
    #[serde(default)]
    pub accepted: BTreeSet<String>,
    #[serde(default)]
    pub rejected: BTreeSet<String>,
    pub reviewer: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaxonomyProgress {
    pub taxonomy_name: String,
    pub reviewed: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Progress {
    pub dataset_size: usize,
    pub taxonomies: Vec<TaxonomyProgress>,
}

type Shared = Arc<AppState>;

fn parse_param<T: std::str::FromStr>(
    q: &HashMap<String, String>,
    name: &str,
) -> ApiResult<Option<T>> {
    q.get(name)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::bad_request(format!("invalid `{name}`: `{v}`")))
        })
        .transpose()
}

async fn list_taxonomies(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.taxonomies.keys().cloned().collect())
}

async fn list_nodes(
    State(s): State<Shared>,
    UrlPath(name): UrlPath<String>,
) -> ApiResult<Json<Vec<NodeView>>> {
    let tax = s.taxonomy(&name)?;
    let mut nodes: Vec<NodeView> = tax
        .nodes()
        .iter()
        .map(|n| NodeView {
            id: n.id.clone(),
            parent_id: n.parent_id.clone(),
            label: n.label.clone(),
            description: n.description.clone(),
            level: tax.level(&n.id).expect("own node"),
        })
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Json(nodes))
}

async fn list_artifacts(State(s): State<Shared>) -> Json<Vec<Artifact>> {
    Json(s.artifacts.clone())
}

async fn list_models(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.providers.iter().map(|p| p.model_id.clone()).collect())
}

async fn suggestions(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<SuggestionResponse>> {
    let taxonomy = q
        .get("taxonomy")
        .cloned()
        .ok_or_else(|| ApiError::bad_request("missing `taxonomy`"))?;
    let k: usize = parse_param(&q, "k")?.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(ApiError::bad_request("`k` must be at least 1"));
    }
    let radius: Option<u32> = parse_param(&q, "radius")?;
    let model = q.get("model").cloned();
    // Resolve 404s before doing any work.
    s.artifact(&id)?;
    let tax = s.taxonomy(&taxonomy)?;
    let model_id = s.provider(model.as_deref())?.model_id.clone();
    let radius = radius.unwrap_or_else(|| s.default_radius(&taxonomy, &model_id, k));

    let state = s.clone();
    let (aid, tname, m) = (id.clone(), taxonomy.clone(), model_id.clone());
    let prediction = tokio::task::spawn_blocking(move || state.predict(&aid, &tname, Some(&m), k))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let suggestions = prediction
        .labels
        .iter()
        .map(|l| {
            let neighbors = tax
                .neighborhood(&l.node_id, radius)
                .expect("predicted node exists")
                .into_iter()
                .map(|(node_id, distance)| Neighbor {
                    label: tax.node(&node_id).expect("neighbor exists").label.clone(),
                    node_id,
                    distance,
                })
                .collect();
            Suggestion {
                node_id: l.node_id.clone(),
                label: tax.node(&l.node_id).expect("predicted node exists").label.clone(),
                score: l.score,
                rank: l.rank,
                neighbors,
            }
        })
        .collect();
    Ok(Json(SuggestionResponse {
        artifact_id: id,
        taxonomy_name: taxonomy,
        model: model_id,
        k,
        radius,
        suggestions,
    }))
}

async fn post_annotation(
    State(s): State<Shared>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::bad_request("`reviewer` must not be empty"));
    }
    if !s.artifact_pos.contains_key(&req.artifact_id) {
        return Err(ApiError::bad_request(format!(
            "unknown artifact `{}`",
            req.artifact_id
        )));
    }
    let tax = s.taxonomies.get(&req.taxonomy_name).ok_or_else(|| {
        ApiError::bad_request(format!("unknown taxonomy `{}`", req.taxonomy_name))
    })?;
    if req.accepted.is_empty() && req.rejected.is_empty() {
        return Err(ApiError::bad_request("no decision: accepted and rejected are both empty"));
    }
    if let Some(id) = req.accepted.intersection(&req.rejected).next() {
        return Err(ApiError::bad_request(format!(
            "`{id}` is both accepted and rejected"
        )));
    }
    if let Some(id) = req.accepted.iter().chain(&req.rejected).find(|id| !tax.contains(id)) {
        return Err(ApiError::bad_request(format!(
            "`{id}` is not a node of `{}`",
            req.taxonomy_name
        )));
    }

    let mut store = s.store()?.lock().await;
    let timestamp = req.timestamp.unwrap_or_else(|| {
        store.next_timestamp(&req.artifact_id, &req.reviewer, Utc::now())
    });
    let record = AnnotationRecord {
        artifact_id: req.artifact_id,
        taxonomy_name: req.taxonomy_name,
        accepted: req.accepted,
        rejected: req.rejected,
        reviewer: req.reviewer,
        timestamp,
    };
    store.append(record.clone())?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn get_annotations(
    State(s): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<AnnotationRecord>>> {
    let store = s.store()?.lock().await;
    let keep = |r: &&AnnotationRecord| {
        q.get("artifact_id").is_none_or(|a| &r.artifact_id == a)
            && q.get("taxonomy").is_none_or(|t| &r.taxonomy_name == t)
    };
    Ok(Json(store.records().iter().rev().filter(keep).cloned().collect()))
}

async fn progress(State(s): State<Shared>) -> ApiResult<Json<Progress>> {
    let store = s.store()?.lock().await;
    let mut reviewed: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (artifact, taxonomy, _) in store.effective().into_keys() {
        if let Some((name, _)) = s.taxonomies.get_key_value(&taxonomy) {
            if let Some((id, _)) = s.artifact_pos.get_key_value(&artifact) {
                reviewed.entry(name.as_str()).or_default().insert(id.as_str());
            }
        }
    }
    let n = s.artifacts.len();
    Ok(Json(Progress {
        dataset_size: n,
        taxonomies: s
            .taxonomies
            .keys()
            .map(|t| {
                let r = reviewed.get(t.as_str()).map_or(0, BTreeSet::len);
                TaxonomyProgress {
                    taxonomy_name: t.clone(),
                    reviewed: r,
                    pending: n - r,
                }
            })
            .collect(),
    }))
}

/// Accepted labels as ground-truth JSON Lines: per (artifact, taxonomy),
/// the union of every reviewer's latest accepted set.
pub fn export_ground_truth(store: &AnnotationStore, taxonomy: Option<&str>) -> Vec<GroundTruth> {
    let mut merged: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for ((artifact, tax, _), r) in store.effective() {
        if taxonomy.is_some_and(|t| t != tax) {
            continue;
        }
        merged
            .entry((tax, artifact))
            .or_default()
            .extend(r.accepted.iter().cloned());
    }
    merged
        .into_iter()
        .map(|((tax, artifact), labels)| GroundTruth::new(&artifact, &tax, labels))
        .collect()
}

async fn export(
    State(s): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    if let Some(t) = q.get("taxonomy") {
        s.taxonomy(t)?;
    }
    let store = s.store()?.lock().await;
    let mut body = String::new();
    for gt in export_ground_truth(&store, q.get("taxonomy").map(String::as_str)) {
        body.push_str(&serde_json::to_string(&gt).expect("serializable"));
        body.push('\n');
    }
    Ok((
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))],
        body,
    )
        .into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

/// Allowed origin for browser clients; any origin when `None`.
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/taxonomies", get(list_taxonomies))
        .route("/taxonomies/{name}/nodes", get(list_nodes))
        .route("/artifacts", get(list_artifacts))
        .route("/artifacts/{id}/suggestions", get(suggestions))
        .route("/models", get(list_models))
        .route("/annotations", get(get_annotations).post(post_annotation))
        .route("/reports/progress", get(progress))
        .route("/export/ground-truth", get(export))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr, cors_origin: Option<&str>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, cors_origin)).await
}

