use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use kinetrail::config::EngineConfig;
use kinetrail::corpus::{build_index, generate_synthetic_corpus, BuildOptions, CorpusIndex, Family};
use kinetrail::semantics::HashEmbedder;
use kinetrail_server::{router, AppState, StartupError};

fn corpus() -> CorpusIndex {
    static INDEX: OnceLock<CorpusIndex> = OnceLock::new();
    INDEX
        .get_or_init(|| {
            let defs = generate_synthetic_corpus(&Family::ALL, 60, 5);
            build_index(&defs, &HashEmbedder::new(256), &BuildOptions::default())
                .unwrap()
                .index
        })
        .clone()
}

fn app() -> Router {
    router(Arc::new(AppState::from_index(corpus(), &EngineConfig::default()).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value, bytes)
}

fn candidate_ids(view: &Value, round: usize) -> Vec<String> {
    view["rounds"][round]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["effect_id"].as_str().unwrap().to_string())
        .collect()
}

fn drawn_intent() -> Value {
    json!({
        "shape": {"kind": "circle", "radius": 0.4},
        "strokes": [{"start": [0.4, 0.0, 0.0], "end": [0.4, 0.0, 2.0]}],
        "duration": 1.5
    })
}

#[tokio::test]
async fn text_only_session_forces_weight_one() {
    let app = app();
    let (status, view, _) = call(&app, "POST", "/sessions", Some(json!({"text": "blue ring of sparks"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(view["rounds"][0]["weight"], 1.0);
    assert_eq!(view["rounds"][0]["mode"], "local");
    assert_eq!(candidate_ids(&view, 0).len(), 4);
}

#[tokio::test]
async fn graphical_only_session_forces_weight_zero() {
    let app = app();
    let (status, view, _) = call(&app, "POST", "/sessions", Some(json!({"graphical": drawn_intent()}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(view["rounds"][0]["weight"], 0.0);
    assert!(view["rounds"][0]["candidates"][0]["kinematic_distance"].is_number());
}

#[tokio::test]
async fn full_exploration_loop() {
    let app = app();
    let (_, view, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"text": "spiral of fire", "graphical": drawn_intent(), "weight": 0.5})),
    )
    .await;
    let id = view["id"].as_str().unwrap().to_string();
    let mut last = view;
    for round in 0..5 {
        let pick = candidate_ids(&last, round)[2].clone();
        let (status, v, _) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/select"),
            Some(json!({"effect_id": pick})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        last = v;
    }
    let modes: Vec<&str> = last["rounds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["mode"].as_str().unwrap())
        .collect();
    assert_eq!(modes, ["local", "local", "directional", "local", "directional", "local"]);
    assert_eq!(last["events"].as_array().unwrap().len(), 6);

    let (status, fetched, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, last);
}

#[tokio::test]
async fn invalid_selection_is_a_conflict_and_changes_nothing() {
    let app = app();
    let (_, view, _) = call(&app, "POST", "/sessions", Some(json!({"text": "sparks"}))).await;
    let id = view["id"].as_str().unwrap();
    let (status, err, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/select"),
        Some(json!({"effect_id": "cone-9999"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "invalid_selection");
    assert_eq!(err["field"], "effect_id");
    let (_, after, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(after, view);
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let app = app();
    let (status, err, _) = call(&app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "validation");
    assert!(err["message"].is_string());

    let mut g = drawn_intent();
    g["duration"] = json!(40.0);
    let (status, err, _) = call(&app, "POST", "/sessions", Some(json!({"graphical": g}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "graphical.duration");

    let (status, err, _) = call(&app, "POST", "/sessions", Some(json!({"text": "x", "weight": 0.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "weight");

    let (status, err, _) = call(&app, "POST", "/sessions", Some(json!({"txt": "typo"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["code"].is_string());
}

#[tokio::test]
async fn malformed_json_is_rejected() {
    let app = app();
    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(body["code"], "malformed_body");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    for uri in [
        "/sessions/nope",
        "/effects/nope/kinematics",
        "/effects/nope/preview",
        "/artworks/nope/export",
    ] {
        let (status, err, _) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(err["code"], "not_found");
    }
    let (status, _, _) = call(&app, "POST", "/sessions/nope/select", Some(json!({"effect_id": "x"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn preview_caps_and_is_deterministic() {
    let app = app();
    let (status, empty, _) = call(&app, "GET", "/effects/cone-0001/preview?max=0", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["samples"].as_array().unwrap().len(), 0);

    let (_, a, bytes_a) = call(&app, "GET", "/effects/cone-0001/preview?max=10", None).await;
    let (_, _, bytes_b) = call(&app, "GET", "/effects/cone-0001/preview?max=10", None).await;
    assert_eq!(bytes_a, bytes_b);
    let ids: std::collections::BTreeSet<u64> = a["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["particle_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids.len(), 10);
    assert_eq!(a["effect_id"], "cone-0001");

    let (_, full, _) = call(&app, "GET", "/effects/cone-0001/preview?max=100000", None).await;
    let n = full["samples"].as_array().unwrap().len();
    assert_eq!(n, 1024 * 16);

    let (status, _, _) = call(&app, "GET", "/effects/cone-0001/preview?max=lots", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn kinematics_endpoint_returns_representation() {
    let app = app();
    let (status, v, _) = call(&app, "GET", "/effects/spiral-0002/kinematics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["definition"]["id"], "spiral-0002");
    assert_eq!(v["representation"]["kinematics"]["trail"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn artwork_round_trip() {
    let app = app();
    let (_, view, _) = call(&app, "POST", "/sessions", Some(json!({"graphical": drawn_intent()}))).await;
    let sid = view["id"].as_str().unwrap();
    let ids = candidate_ids(&view, 0);
    let request = json!({
        "name": "duet",
        "session_id": sid,
        "items": [
            {"effect_id": ids[0], "start_delay": 0.0},
            {"effect_id": ids[1], "start_delay": 1.5,
             "placement": {"translation": [0.0, 0.0, 1.0]}}
        ]
    });
    let (status, stored, _) = call(&app, "POST", "/artworks", Some(request)).await;
    assert_eq!(status, StatusCode::CREATED, "{stored}");
    let items = &stored["export"]["items"];
    assert_eq!(items[0]["start_delay"], 0.0);
    assert_eq!(items[1]["start_delay"], 1.5);
    assert_eq!(
        items[0]["placement"]["transformation"],
        view["rounds"][0]["candidates"][0]["best_transformation"]
    );

    let aid = stored["id"].as_str().unwrap();
    let (status, export, _) = call(&app, "GET", &format!("/artworks/{aid}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(export, stored["export"]);

    let bad = json!({"name": "broken", "items": [{"effect_id": "ghost"}]});
    let (status, err, _) = call(&app, "POST", "/artworks", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "items[0].effect_id");
}

#[test]
fn embedding_dimension_mismatch_is_a_startup_error() {
    let mut config = EngineConfig::default();
    config.providers.embedding_dim = 64;
    assert!(matches!(
        AppState::from_index(corpus(), &config),
        Err(StartupError::EmbeddingDim { got: 64, want: 256 })
    ));
}
