use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use taxotrace_core::classifier::NodeIndex;
use taxotrace_core::embedding::{write_cache, EmbeddingCache, EmbeddingProviderConfig};
use taxotrace_core::harness::{self, KValues, LoadedInputs, RunConfig};
use taxotrace_core::metrics::{evaluate, read_ground_truth};
use taxotrace_core::classifier::{Prediction, RankedLabel};
use taxotrace_service::{router, schema, AppState};
use tower::ServiceExt;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/reference")
}

/// The bundled fixture restricted to spaces A and T, with its outputs and
/// annotation store inside `dir`.
fn config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture_dir().join("run.json")).unwrap();
    cfg.taxonomies.retain(|k, _| k == "A" || k == "T");
    cfg.output_dir = dir.join("out");
    cfg.annotation_store = Some(dir.join("annotations.jsonl"));
    cfg
}

fn app(cfg: &RunConfig) -> Router {
    router(Arc::new(AppState::from_config(cfg).unwrap()), None)
}

struct Reply {
    status: StatusCode,
    bytes: Vec<u8>,
    headers: axum::http::HeaderMap,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap()
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        bytes,
        headers,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: &Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

fn assert_schema(schema_src: &str, v: &Value) {
    let schema = jsonschema::JSONSchema::compile(&serde_json::from_str(schema_src).unwrap()).unwrap();
    let msgs: Vec<String> = match schema.validate(v) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| e.to_string()).collect(),
    };
    panic!("schema violation: {msgs:?}\n{v}");
}

fn assert_error(r: &Reply, status: StatusCode) {
    assert_eq!(r.status, status, "{}", String::from_utf8_lossy(&r.bytes));
    assert_schema(schema::ERROR, &r.json());
}

#[tokio::test]
async fn listings_are_sorted_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = app(&cfg);

    let r = get(&app, "/taxonomies").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!(["A", "T"]));
    assert_schema(schema::STRING_LIST, &r.json());

    let inputs = LoadedInputs::load(&cfg).unwrap();
    let r = get(&app, "/taxonomies/T/nodes").await;
    assert_schema(schema::NODES, &r.json());
    let nodes = r.json();
    let ids: Vec<&str> = nodes.as_array().unwrap().iter().map(|n| n["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), inputs.taxonomy("T").unwrap().stats().total_nodes);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));

    assert_error(&get(&app, "/taxonomies/Z/nodes").await, StatusCode::NOT_FOUND);
    assert_error(&get(&app, "/nope").await, StatusCode::NOT_FOUND);

    let r = get(&app, "/artifacts").await;
    assert_schema(schema::ARTIFACTS, &r.json());
    assert_eq!(r.json().as_array().unwrap().len(), inputs.artifacts.len());

    let r = get(&app, "/models").await;
    assert_eq!(r.json(), json!(["mock-ngram-256", "mock-ngram-64"]));
}

#[tokio::test]
async fn suggestions_match_offline_classification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = app(&cfg);

    let r = get(&app, "/artifacts/REQ-003/suggestions?taxonomy=T&k=15").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_schema(schema::SUGGESTIONS, &body);
    assert_eq!(body["radius"], 2, "no report on disk, fallback radius");
    let suggestions = body["suggestions"].as_array().unwrap();
    assert_eq!(suggestions.len(), 15);

    let inputs = LoadedInputs::load(&cfg).unwrap();
    let tax = inputs.taxonomy("T").unwrap();
    let provider = cfg.seeded_providers()[0].build().unwrap();
    let index = NodeIndex::build(tax, provider.as_ref()).unwrap();
    let artifact = inputs.artifacts.iter().find(|a| a.id == "REQ-003").unwrap();
    let offline = index.classify(artifact, provider.as_ref(), 15).unwrap();
    for (s, o) in suggestions.iter().zip(&offline.labels) {
        assert_eq!(s["node_id"], o.node_id.as_str());
        assert_eq!(s["score"].as_f64().unwrap(), o.score);
        assert_eq!(s["rank"], o.rank);
        for n in s["neighbors"].as_array().unwrap() {
            let d = n["distance"].as_u64().unwrap() as u32;
            assert!(d <= 2);
            let id = n["node_id"].as_str().unwrap();
            assert_eq!(tax.hop_distance(&o.node_id, id).unwrap(), d);
        }
        let expected = tax.neighborhood(&o.node_id, 2).unwrap().len();
        assert_eq!(s["neighbors"].as_array().unwrap().len(), expected);
    }

    let again = get(&app, "/artifacts/REQ-003/suggestions?taxonomy=T&k=15").await;
    assert_eq!(again.bytes, r.bytes);
}

#[tokio::test]
async fn radius_zero_shows_only_the_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&config(dir.path()));
    let body = get(&app, "/artifacts/REQ-001/suggestions?taxonomy=A&k=3&radius=0")
        .await
        .json();
    for s in body["suggestions"].as_array().unwrap() {
        assert_eq!(
            s["neighbors"],
            json!([{ "node_id": s["node_id"], "label": s["label"], "distance": 0 }])
        );
    }
}

#[tokio::test]
async fn bad_suggestion_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&config(dir.path()));
    for uri in [
        "/artifacts/REQ-001/suggestions",
        "/artifacts/REQ-001/suggestions?taxonomy=T&k=0",
        "/artifacts/REQ-001/suggestions?taxonomy=T&k=x",
        "/artifacts/REQ-001/suggestions?taxonomy=T&radius=-1",
    ] {
        assert_error(&get(&app, uri).await, StatusCode::BAD_REQUEST);
    }
    for uri in [
        "/artifacts/NOPE/suggestions?taxonomy=T",
        "/artifacts/REQ-001/suggestions?taxonomy=Z",
        "/artifacts/REQ-001/suggestions?taxonomy=T&model=gpt",
    ] {
        assert_error(&get(&app, uri).await, StatusCode::NOT_FOUND);
    }
}

#[tokio::test]
async fn provider_failure_is_a_bad_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    let cache = dir.path().join("empty.ttec");
    write_cache(&cache, &EmbeddingCache::new(8)).unwrap();
    cfg.providers = vec![EmbeddingProviderConfig::file_cache("cached", 8, cache)];
    let app = app(&cfg);
    assert_error(
        &get(&app, "/artifacts/REQ-001/suggestions?taxonomy=T").await,
        StatusCode::BAD_GATEWAY,
    );
}

#[test]
fn default_radius_follows_the_last_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.k = KValues::One(15);
    let outcome = harness::run(&cfg).unwrap();
    let state = AppState::from_config(&cfg).unwrap();
    for r in &outcome.reports {
        let expected = r.distance.d_abs.map_or(2, |d| d.round() as u32);
        assert_eq!(state.default_radius(&r.taxonomy_name, &r.model_id, 15), expected);
        assert_eq!(state.default_radius(&r.taxonomy_name, &r.model_id, 5), expected);
    }
    assert_eq!(state.default_radius("T", "unknown", 15), 2);
}

fn annotation(artifact: &str, accepted: &[&str], rejected: &[&str]) -> Value {
    json!({
        "artifact_id": artifact,
        "taxonomy_name": "T",
        "accepted": accepted,
        "rejected": rejected,
        "reviewer": "ann",
    })
}

#[tokio::test]
async fn annotations_round_trip_newest_first() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&config(dir.path()));
    let r = post(&app, "/annotations", &annotation("REQ-001", &["T-0001"], &[])).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_schema(schema::ANNOTATION, &r.json());
    post(&app, "/annotations", &annotation("REQ-001", &["T-0002"], &["T-0001"])).await;
    post(&app, "/annotations", &annotation("REQ-002", &["T-0003"], &[])).await;

    let r = get(&app, "/annotations?artifact_id=REQ-001").await;
    assert_schema(schema::ANNOTATIONS, &r.json());
    let list = r.json();
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["accepted"], json!(["T-0002"]));
    assert_eq!(list[1]["accepted"], json!(["T-0001"]));
    assert!(list[0]["timestamp"].as_str() > list[1]["timestamp"].as_str());
    assert_eq!(get(&app, "/annotations").await.json().as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn invalid_annotations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&config(dir.path()));
    let bad = [
        annotation("REQ-001", &["T-0001"], &["T-0001"]),
        annotation("REQ-001", &["A-0001"], &[]),
        annotation("REQ-001", &[], &[]),
        annotation("NOPE", &["T-0001"], &[]),
        json!({ "artifact_id": "REQ-001", "taxonomy_name": "T", "accepted": ["T-0001"], "reviewer": "" }),
        json!({ "artifact_id": "REQ-001", "taxonomy_name": "T", "accepted": ["T-0001"], "reviewer": "a", "extra": 1 }),
        json!({ "artifact_id": "REQ-001" }),
    ];
    for body in &bad {
        assert_error(&post(&app, "/annotations", body).await, StatusCode::BAD_REQUEST);
    }
    let req = Request::post("/annotations")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_error(&send(&app, req).await, StatusCode::BAD_REQUEST);

    let mut stale = annotation("REQ-001", &["T-0001"], &[]);
    stale["timestamp"] = json!("2030-01-01T00:00:00Z");
    assert_eq!(post(&app, "/annotations", &stale).await.status, StatusCode::CREATED);
    stale["timestamp"] = json!("2029-01-01T00:00:00Z");
    assert_error(&post(&app, "/annotations", &stale).await, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/annotations").await.json().as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn progress_counts_effective_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = app(&cfg);
    let r = get(&app, "/reports/progress").await;
    assert_schema(schema::PROGRESS, &r.json());
    assert_eq!(r.json()["taxonomies"][1], json!({ "taxonomy_name": "T", "reviewed": 0, "pending": 24 }));

    for a in ["REQ-001", "REQ-002", "REQ-003"] {
        post(&app, "/annotations", &annotation(a, &["T-0001"], &[])).await;
    }
    post(&app, "/annotations", &annotation("REQ-002", &["T-0001", "T-0002"], &[])).await;
    let p = get(&app, "/reports/progress").await.json();
    assert_eq!(p["dataset_size"], 24);
    assert_eq!(p["taxonomies"][0], json!({ "taxonomy_name": "A", "reviewed": 0, "pending": 24 }));
    assert_eq!(p["taxonomies"][1], json!({ "taxonomy_name": "T", "reviewed": 3, "pending": 21 }));
}

#[tokio::test]
async fn store_survives_restart_and_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    {
        let app = app(&cfg);
        for i in 1..=5 {
            let a = format!("REQ-00{i}");
            let r = post(&app, "/annotations", &annotation(&a, &["T-0001"], &[])).await;
            assert_eq!(r.status, StatusCode::CREATED);
        }
    }
    let store = cfg.annotation_store.clone().unwrap();
    let mut bytes = std::fs::read(&store).unwrap();
    bytes.extend_from_slice(b"{\"artifact_id\":\"REQ-0");
    std::fs::write(&store, bytes).unwrap();

    let app = app(&cfg);
    let list = get(&app, "/annotations").await.json();
    assert_eq!(list.as_array().unwrap().len(), 5);
    assert_eq!(list[0]["artifact_id"], "REQ-005");
    let r = post(&app, "/annotations", &annotation("REQ-006", &["T-0001"], &[])).await;
    assert_eq!(r.status, StatusCode::CREATED);
}

#[tokio::test]
async fn malformed_store_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    std::fs::write(cfg.annotation_store.as_ref().unwrap(), "garbage\n{}\n").unwrap();
    let app = app(&cfg);
    assert_error(&get(&app, "/annotations").await, StatusCode::CONFLICT);
    assert_error(
        &post(&app, "/annotations", &annotation("REQ-001", &["T-0001"], &[])).await,
        StatusCode::CONFLICT,
    );
    // Read-only endpoints that do not need the store keep working.
    assert_eq!(get(&app, "/taxonomies").await.status, StatusCode::OK);
}

#[tokio::test]
async fn exported_accepts_score_as_exact_hits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = app(&cfg);
    post(&app, "/annotations", &annotation("REQ-001", &["T-0004", "T-0010"], &["T-0002"])).await;
    let mut bob = annotation("REQ-001", &["T-0020"], &[]);
    bob["reviewer"] = json!("bob");
    post(&app, "/annotations", &bob).await;
    post(&app, "/annotations", &annotation("REQ-002", &["T-0005"], &[])).await;

    let r = get(&app, "/export/ground-truth?taxonomy=T").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers["content-type"], "application/x-ndjson");
    let path = dir.path().join("reviewed.jsonl");
    std::fs::write(&path, &r.bytes).unwrap();
    for line in String::from_utf8(r.bytes.clone()).unwrap().lines() {
        assert_schema(schema::GROUND_TRUTH_LINE, &serde_json::from_str(line).unwrap());
    }
    let truths = read_ground_truth(&path).unwrap();
    assert_eq!(truths.len(), 2);
    let labels: Vec<&str> = truths[0].true_labels.iter().map(String::as_str).collect();
    assert_eq!(labels, ["T-0004", "T-0010", "T-0020"]);

    let inputs = LoadedInputs::load(&cfg).unwrap();
    let tax = inputs.taxonomy("T").unwrap();
    let preds: Vec<Prediction> = truths
        .iter()
        .map(|t| Prediction {
            artifact_id: t.artifact_id.clone(),
            taxonomy_name: "T".into(),
            model_id: "review".into(),
            k: t.true_labels.len(),
            labels: t
                .true_labels
                .iter()
                .enumerate()
                .map(|(i, id)| RankedLabel {
                    node_id: id.clone(),
                    score: 1.0,
                    rank: i + 1,
                })
                .collect(),
        })
        .collect();
    let report = evaluate(&preds, &truths, tax, 189.25).unwrap();
    assert_eq!(report.distance.d_norm, Some(0.0));
    assert_eq!(report.recall, 1.0);

    assert_error(&get(&app, "/export/ground-truth?taxonomy=Z").await, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_allows_browser_origins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let state = Arc::new(AppState::from_config(&cfg).unwrap());
    let app = router(state, Some("http://localhost:5173"));
    let req = Request::get("/taxonomies")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.headers["access-control-allow-origin"], "http://localhost:5173");
}
