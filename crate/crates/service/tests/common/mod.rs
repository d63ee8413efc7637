#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mgrl::episodes::{load_dataset, load_photo, synth_dataset, SynthConfig};
use mgrl::index::build_index_from_photos;
use mgrl::training::{train, TrainConfig};
use mgrl::Embedder32;
use mgrl_service::{router, AppState, Engine, ServiceConfig};
use serde_json::Value;
use tempfile::TempDir;

/// Untrained model plus an index over every synthetic photo, on disk.
pub struct Fixture {
    pub dir: TempDir,
    pub config: ServiceConfig,
}

impl Fixture {
    pub fn new(photos: usize) -> Fixture {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let synth = SynthConfig {
            n_gallery: photos,
            n_episodes: photos,
            ..SynthConfig::default()
        };
        let manifest = synth_dataset(&data, &synth).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            canvas: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let ck = train::<f32>(&manifest, &cfg, &mut |_| {})
            .unwrap()
            .checkpoint;
        let ckpt = dir.path().join("model.ck");
        ck.save(&ckpt).unwrap();
        let embedder = Embedder32::from_checkpoint(&ck);
        let manifest = load_dataset(&data).unwrap();
        let images: Vec<_> = manifest
            .photos
            .iter()
            .map(|p| (p.id.clone(), load_photo(&manifest, p).unwrap()))
            .collect();
        let index_path = dir.path().join("gallery.idx");
        build_index_from_photos(&embedder, &images)
            .unwrap()
            .save(&index_path)
            .unwrap();
        let mut config = ServiceConfig::new(ckpt, index_path);
        config.data = Some(data);
        Fixture { dir, config }
    }

    pub fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    /// A freshly started service over the fixture files.
    pub fn app(&self) -> Router {
        router(Arc::new(self.state()), None)
    }

    pub fn state(&self) -> AppState {
        AppState::ready(Engine::load(&self.config).unwrap())
    }
}

pub async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    use tower::ServiceExt;
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

pub async fn call_json(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

pub async fn new_session(app: &Router) -> String {
    let (status, v) = call_json(app, Method::POST, "/api/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

pub async fn submit(app: &Router, id: &str, stroke: &Value) -> (StatusCode, Value) {
    call_json(
        app,
        Method::POST,
        &format!("/api/sessions/{id}/strokes"),
        Some(stroke.clone()),
    )
    .await
}

pub async fn undo(app: &Router, id: &str) -> (StatusCode, Value) {
    call_json(app, Method::POST, &format!("/api/sessions/{id}/undo"), None).await
}

/// A short recorded drawing: head outline, eyes, mouth.
pub fn recorded_strokes() -> Vec<Value> {
    let ring: Vec<[f64; 2]> = (0..=24)
        .map(|i| {
            let t = i as f64 / 24.0 * std::f64::consts::TAU;
            [0.5 + 0.3 * t.cos(), 0.5 + 0.38 * t.sin()]
        })
        .collect();
    vec![
        serde_json::json!({"width": 2, "points": ring}),
        serde_json::json!({"width": 2, "points": [[0.35, 0.42], [0.42, 0.42]]}),
        serde_json::json!({"width": 2, "points": [[0.58, 0.42], [0.65, 0.42]]}),
        serde_json::json!({"width": 3, "points": [[0.4, 0.7], [0.5, 0.73], [0.6, 0.7]]}),
    ]
}
