use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hred_core::analysis::io::write_analysis;
use hred_core::analysis::{build_context_map, TsneConfig};
use hred_core::corpus::{encode_text, TokenizedConversation};
use hred_core::embeddings::{EmbeddingMode, Vocabulary};
use hred_core::models::{Architecture, ModelConfig};
use hred_core::recurrent::HeadKind;
use hred_core::Model;
use hred_service::{router, Analysis, AppState, ServiceConfig};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

const WORDS: [&str; 12] = [
    "hello", "how", "are", "you", "fine", "thanks", "travel", "hotel", "beach", "work", "office", "boss",
];

fn model(arch: Architecture) -> Model {
    let vocab = Vocabulary::from_words(WORDS.iter().map(|s| s.to_string())).unwrap();
    let cfg = ModelConfig {
        arch,
        vocab_size: vocab.len(),
        embed_dim: 8,
        hidden_dim: 8,
        depth: 2,
        head: HeadKind::Softmax,
        embedding_mode: EmbeddingMode::Trainable,
    };
    Model::new(cfg, vocab, None, 3).unwrap()
}

fn prepare_analysis(dir: &Path, m: &Model) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    let convs: Vec<TokenizedConversation> = (0..20)
        .map(|i| {
            let turns = (0..rng.random_range(1..4))
                .map(|_| {
                    let text: Vec<&str> = (0..3).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
                    encode_text(&text.join(" "), &m.vocab)
                })
                .collect();
            TokenizedConversation {
                id: format!("c{i}"),
                topic: ["Work", "Tourism"][i % 2].to_string(),
                turns,
            }
        })
        .collect();
    let cfg = TsneConfig {
        perplexity: 5.0,
        iterations: 200,
        ..TsneConfig::default()
    };
    let (map, result) = build_context_map(m, &convs, &cfg).unwrap();
    write_analysis(dir, &map, &result).unwrap();
}

fn app(dir: Option<&Path>, config: ServiceConfig) -> Router {
    let mut models = BTreeMap::new();
    models.insert("hred".to_string(), model(Architecture::Hred));
    models.insert("encdec".to_string(), model(Architecture::EncDec));
    let analysis = dir.map(|d| {
        prepare_analysis(d, &models["hred"]);
        Analysis::load(d).unwrap()
    });
    router(Arc::new(AppState::new(models, analysis, config)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, model: &str) -> String {
    let (s, v) = json_call(app, "POST", "/api/sessions", Some(json!({"model_id": model}))).await;
    assert_eq!(s, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, session: &str, text: &str) -> Value {
    let (s, v) = json_call(app, "POST", &format!("/api/sessions/{session}/messages"), Some(json!({"text": text}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

#[tokio::test]
async fn health_and_models() {
    let app = app(None, ServiceConfig::default());
    let (s, v) = json_call(&app, "GET", "/health", None).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (_, v) = json_call(&app, "GET", "/api/models", None).await;
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["encdec", "hred"]);
}

#[tokio::test]
async fn sessions_are_distinct_and_start_empty() {
    let app = app(None, ServiceConfig::default());
    let a = new_session(&app, "hred").await;
    let b = new_session(&app, "hred").await;
    assert_ne!(a, b);
    let (_, v) = json_call(&app, "GET", &format!("/api/sessions/{a}/trajectory"), None).await;
    assert_eq!(v["trajectory"], json!([]));
    let (s, v) = json_call(&app, "POST", "/api/sessions", Some(json!({"model_id": "nope"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "not_found");
    let (s, _) = json_call(&app, "GET", "/api/sessions/missing/trajectory", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/api/sessions/missing/messages", Some(json!({"text": "hi"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn messages_grow_the_trajectory_and_report_distances() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()), ServiceConfig::default());
    let id = new_session(&app, "hred").await;
    let (_, map) = json_call(&app, "GET", "/api/context-map", None).await;
    let centroids = map["centroids"].as_object().unwrap().clone();
    let mut previous: Vec<Value> = Vec::new();
    for (k, text) in ["hello how are you", "i like the beach hotel", "work at the office"].iter().enumerate() {
        let r = say(&app, &id, text).await;
        assert_eq!(r["turn_index"], k);
        let p = r["context_point"].as_array().unwrap();
        let (x, y) = (p[0].as_f64().unwrap(), p[1].as_f64().unwrap());
        for (topic, c) in &centroids {
            let c = c.as_array().unwrap();
            let d = ((x - c[0].as_f64().unwrap()).powi(2) + (y - c[1].as_f64().unwrap()).powi(2)).sqrt();
            assert!((d - r["distances"][topic].as_f64().unwrap()).abs() < 1e-9);
        }
        let (_, t) = json_call(&app, "GET", &format!("/api/sessions/{id}/trajectory"), None).await;
        let t = t["trajectory"].as_array().unwrap().clone();
        assert_eq!(t.len(), 2 * (k + 1));
        assert_eq!(t[..previous.len()], previous[..]);
        assert_eq!(t[2 * k], r["context_point"]);
        previous = t;
    }
    let (s, v) = json_call(&app, "POST", &format!("/api/sessions/{id}/messages"), Some(json!({"text": "  "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_request");
}

#[tokio::test]
async fn replaying_a_session_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()), ServiceConfig::default());
    let texts = ["hello", "how are you", "fine thanks", "travel to the beach"];
    let a = new_session(&app, "hred").await;
    let b = new_session(&app, "hred").await;
    let mut replies = Vec::new();
    for t in texts {
        replies.push(say(&app, &a, t).await);
    }
    for (t, expected) in texts.iter().zip(&replies) {
        assert_eq!(&say(&app, &b, t).await, expected);
    }
    let (_, ta) = json_call(&app, "GET", &format!("/api/sessions/{a}/trajectory"), None).await;
    let (_, tb) = json_call(&app, "GET", &format!("/api/sessions/{b}/trajectory"), None).await;
    assert_eq!(ta["trajectory"], tb["trajectory"]);
}

#[tokio::test]
async fn interleaved_sessions_match_serial_ones() {
    let app = app(None, ServiceConfig::default());
    let texts = ["hello", "work office", "boss"];
    let serial = new_session(&app, "hred").await;
    let mut expected = Vec::new();
    for t in texts {
        expected.push(say(&app, &serial, t).await["reply"].clone());
    }
    let a = new_session(&app, "hred").await;
    let b = new_session(&app, "hred").await;
    let tasks: Vec<_> = [a, b]
        .into_iter()
        .map(|id| {
            let app = app.clone();
            tokio::spawn(async move {
                let mut out = Vec::new();
                for t in texts {
                    out.push(say(&app, &id, t).await["reply"].clone());
                }
                out
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), expected);
    }
}

#[tokio::test]
async fn context_map_serves_the_analysis_files() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()), ServiceConfig::default());
    for name in ["points.tsv", "centroids.tsv"] {
        let (s, body) = call(&app, "GET", &format!("/api/context-map/{name}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(body, std::fs::read(dir.path().join(name)).unwrap());
    }
    let (_, v) = json_call(&app, "GET", "/api/context-map", None).await;
    let points_file = std::fs::read_to_string(dir.path().join("points.tsv")).unwrap();
    let rows: Vec<&str> = points_file.lines().skip(1).collect();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), rows.len());
    for (p, row) in points.iter().zip(rows) {
        let f: Vec<&str> = row.split('\t').collect();
        assert_eq!(p["id"], f[0]);
        assert_eq!(p["x"].as_f64().unwrap(), f[2].parse::<f64>().unwrap());
        assert_eq!(p["y"].as_f64().unwrap(), f[3].parse::<f64>().unwrap());
    }
    let (_, again) = json_call(&app, "GET", "/api/context-map", None).await;
    assert_eq!(v, again);
}

#[tokio::test]
async fn context_map_without_analysis_is_a_conflict() {
    let app = app(None, ServiceConfig::default());
    let (s, v) = json_call(&app, "GET", "/api/context-map", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "not_prepared");
}

#[tokio::test]
async fn encdec_sessions_reply_without_a_context_point() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()), ServiceConfig::default());
    let id = new_session(&app, "encdec").await;
    let r = say(&app, &id, "hello").await;
    assert!(r["context_point"].is_null());
    assert!(r["reply"].is_string());
    let (_, t) = json_call(&app, "GET", &format!("/api/sessions/{id}/trajectory"), None).await;
    assert_eq!(t["trajectory"], json!([]));
}

#[tokio::test]
async fn idle_sessions_expire_and_transcripts_are_written() {
    let transcripts = tempfile::tempdir().unwrap();
    let app = app(
        None,
        ServiceConfig {
            session_ttl: Duration::from_millis(50),
            transcript_dir: Some(transcripts.path().to_path_buf()),
            ..ServiceConfig::default()
        },
    );
    let id = new_session(&app, "hred").await;
    say(&app, &id, "hello").await;
    say(&app, &id, "fine").await;
    let lines = std::fs::read_to_string(transcripts.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(lines.lines().count(), 2);
    tokio::time::sleep(Duration::from_millis(80)).await;
    let (s, _) = json_call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
