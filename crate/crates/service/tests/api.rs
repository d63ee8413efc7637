mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::http::{Method, StatusCode};
use common::*;
use mgrl_service::{router, AppState, Engine, EngineError, ServiceConfig};
use serde_json::json;

#[tokio::test]
async fn sessions_get_distinct_ids_and_start_empty() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
    let (status, v) = call_json(&app, Method::GET, &format!("/api/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"stage": 0, "results": []}));
}

#[tokio::test]
async fn first_stroke_returns_topk_with_level_breakdown() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let id = new_session(&app).await;
    let (status, v) = submit(&app, &id, &recorded_strokes()[0]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stage"], 1);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 10);
    let mut prev = f64::NEG_INFINITY;
    for r in results {
        let d = r["distance"].as_f64().unwrap();
        let levels: Vec<f64> = r["levels"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(levels.len(), 3);
        assert!((levels.iter().sum::<f64>() - d).abs() < 1e-9);
        assert!(d >= prev);
        prev = d;
    }
}

#[tokio::test]
async fn error_codes() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let stroke = &recorded_strokes()[1];
    let (status, v) = submit(&app, "feedface", stroke).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");

    let id = new_session(&app).await;
    for bad in [
        json!({"width": 2, "points": [[0.1, 0.1]]}),
        json!({"width": 2, "points": [[0.1, 0.1], [1.5, 0.2]]}),
        json!({"width": 0, "points": [[0.1, 0.1], [0.5, 0.2]]}),
        json!({"points": [[0.1, 0.1], [0.5, 0.2]]}),
        json!({"width": 2, "points": [[0.1], [0.5, 0.2]]}),
    ] {
        let (status, v) = submit(&app, &id, &bad).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(v["error"], "malformed_stroke");
        assert!(v["detail"].is_string());
    }
    // Rejected strokes leave the session untouched.
    let (_, v) = call_json(&app, Method::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(v["stage"], 0);

    let (status, v) = undo(&app, &id).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "nothing_to_undo");
}

#[tokio::test]
async fn undo_restores_previous_results() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let strokes = recorded_strokes();

    let id = new_session(&app).await;
    let (_, empty) = call_json(&app, Method::GET, &format!("/api/sessions/{id}"), None).await;
    submit(&app, &id, &strokes[0]).await;
    let (status, v) = undo(&app, &id).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, empty);

    let (_, after_a) = submit(&app, &id, &strokes[0]).await;
    submit(&app, &id, &strokes[1]).await;
    let (_, undone) = undo(&app, &id).await;
    assert_eq!(undone, after_a);

    let fresh = new_session(&app).await;
    let (_, only_a) = submit(&app, &fresh, &strokes[0]).await;
    assert_eq!(undone, only_a);
}

#[tokio::test]
async fn restart_and_replay_reproduces_results() {
    let fx = Fixture::new(16);
    let strokes = recorded_strokes();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let app = fx.app();
        let id = new_session(&app).await;
        let mut responses = Vec::new();
        for s in &strokes {
            let (status, v) = submit(&app, &id, s).await;
            assert_eq!(status, StatusCode::OK);
            responses.push(v);
        }
        runs.push(responses);
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_are_isolated() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let strokes = recorded_strokes();
    let solo = |picks: Vec<usize>| {
        let app = fx.app();
        let strokes = strokes.clone();
        async move {
            let id = new_session(&app).await;
            let mut last = None;
            for i in picks {
                last = Some(submit(&app, &id, &strokes[i]).await.1);
            }
            last.unwrap()
        }
    };
    let expect_a = solo(vec![0, 1, 2]).await;
    let expect_b = solo(vec![3, 2]).await;

    let a = new_session(&app).await;
    let b = new_session(&app).await;
    let run = |id: String, picks: Vec<usize>| {
        let app = app.clone();
        let strokes = strokes.clone();
        tokio::spawn(async move {
            let mut last = None;
            for i in picks {
                last = Some(submit(&app, &id, &strokes[i]).await.1);
            }
            last.unwrap()
        })
    };
    let (ra, rb) = tokio::join!(run(a, vec![0, 1, 2]), run(b, vec![3, 2]));
    assert_eq!(ra.unwrap(), expect_a);
    assert_eq!(rb.unwrap(), expect_b);
}

#[tokio::test]
async fn photos_config_and_delete() {
    let fx = Fixture::new(16);
    let app = fx.app();
    let (status, first) = call(&app, Method::GET, "/api/photos/p0003", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&first[..4], b"\x89PNG");
    let (_, second) = call(&app, Method::GET, "/api/photos/p0003", None).await;
    assert_eq!(first, second);
    let (status, v) = call_json(&app, Method::GET, "/api/photos/nobody", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_photo");

    let (status, v) = call_json(&app, Method::GET, "/api/config", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"topk": 10, "canvas": 256, "gallery_size": 16}));

    let id = new_session(&app).await;
    let uri = format!("/api/sessions/{id}");
    let (status, body) = call(&app, Method::DELETE, &uri, None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
    let (status, _) = call(&app, Method::DELETE, &uri, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn small_gallery_returns_every_photo() {
    let fx = Fixture::new(4);
    let app = fx.app();
    let id = new_session(&app).await;
    let (_, v) = submit(&app, &id, &recorded_strokes()[0]).await;
    assert_eq!(v["results"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let fx = Fixture::new(4);
    let state = Arc::new(fx.state().with_idle(Duration::from_millis(20)));
    let app = router(Arc::clone(&state), None);
    let id = new_session(&app).await;
    tokio::time::sleep(Duration::from_millis(60)).await;
    let (status, v) = submit(&app, &id, &recorded_strokes()[1]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn failed_load_means_not_ready() {
    let fx = Fixture::new(4);
    let mut cfg = fx.config.clone();
    cfg.index = fx.dir.path().join("missing.idx");
    let err = match Engine::load(&cfg) {
        Err(e) => e,
        Ok(_) => panic!("load should fail"),
    };
    let app = router(Arc::new(AppState::not_ready(err.to_string())), None);
    for (method, uri) in [
        (Method::POST, "/api/sessions"),
        (Method::GET, "/api/config"),
        (Method::GET, "/api/photos/p0000"),
    ] {
        let (status, v) = call_json(&app, method, uri, None).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(v["error"], "service_not_ready");
    }
}

#[test]
fn engine_rejects_foreign_index_and_zero_topk() {
    let a = Fixture::new(4);
    let b = Fixture::new(4);
    // Same architecture, different parameters: b's index does not belong
    // to a's checkpoint once a is retrained with another seed.
    let mut cfg = a.config.clone();
    cfg.index = b.config.index.clone();
    let manifest = mgrl::episodes::load_dataset(&a.data()).unwrap();
    let ck = mgrl::training::train::<f32>(
        &manifest,
        &mgrl::training::TrainConfig {
            epochs: 0,
            canvas: 32,
            seed: 4,
            ..Default::default()
        },
        &mut |_| {},
    )
    .unwrap()
    .checkpoint;
    ck.save(&cfg.checkpoint).unwrap();
    assert!(matches!(
        Engine::load(&cfg),
        Err(EngineError::DigestMismatch { .. })
    ));

    let mut cfg: ServiceConfig = b.config.clone();
    cfg.topk = 0;
    assert!(matches!(Engine::load(&cfg), Err(EngineError::ZeroTopk)));
}
