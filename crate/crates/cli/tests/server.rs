use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use flowsur::bundle::ModelBundle;
use flowsur::dataset::NormalizationSpec;
use flowsur_cli::server::{decode_field, router, AppState, PredictResponse};
use serde_json::Value;
use tower::ServiceExt;

const NY: usize = 20;
const NX: usize = 30;

fn app() -> Router {
    let bundle = ModelBundle::untrained(NY, NX, NormalizationSpec::default(), 3).unwrap();
    router(
        Arc::new(AppState {
            bundle,
            checksum: 0xdead_beef,
        }),
        None,
    )
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, body.to_vec())
}

fn post(body: &str) -> Request<Body> {
    Request::post("/api/predict")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn health_and_meta() {
    let app = app();
    let (s, b) = call(&app, get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["status"], "ok");

    let (s, b) = call(&app, get("/api/meta")).await;
    assert_eq!(s, StatusCode::OK);
    let m: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(m["grid"]["ny"], NY);
    assert_eq!(m["grid"]["nx"], NX);
    assert_eq!(m["model_checksum"], "deadbeef");
    assert_eq!(m["velocity_range"][0], 0.05);
    assert_eq!(m["velocity_range"][1], 1.0);
    assert_eq!(m["normalization"]["temperature_max"], 35.0);
}

#[tokio::test]
async fn predict_returns_both_fields_with_physical_ranges() {
    let app = app();
    let (s, b) = call(&app, post(r#"{"left_velocity":0.3,"right_velocity":0.8}"#)).await;
    assert_eq!(s, StatusCode::OK);
    let r: PredictResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!((r.grid.ny, r.grid.nx), (NY, NX));
    assert_eq!((r.left_velocity, r.right_velocity), (0.3, 0.8));
    assert!(r.latency_ms >= 0.0);

    let v = r.velocity.unwrap();
    let t = r.temperature.unwrap();
    assert_eq!(v.units, "m/s");
    assert_eq!(t.units, "°C");
    let vd = decode_field(&v.data).unwrap();
    let td = decode_field(&t.data).unwrap();
    assert_eq!(vd.len(), NY * NX);
    assert_eq!(td.len(), NY * NX);
    // sigmoid outputs map strictly inside the normalization bounds
    assert!(vd.iter().all(|&x| x > 0.0 && x < 1.2));
    assert!(td.iter().all(|&x| x > 10.0 && x < 35.0));
    assert_eq!(v.min, vd.iter().copied().fold(f32::INFINITY, f32::min));
    assert_eq!(t.max, td.iter().copied().fold(f32::NEG_INFINITY, f32::max));
}

#[tokio::test]
async fn predict_is_deterministic_and_honours_field_selection() {
    let app = app();
    let body = r#"{"left_velocity":0.5,"right_velocity":0.5}"#;
    let a: PredictResponse = serde_json::from_slice(&call(&app, post(body)).await.1).unwrap();
    let b: PredictResponse = serde_json::from_slice(&call(&app, post(body)).await.1).unwrap();
    assert_eq!(a.velocity, b.velocity);
    assert_eq!(a.temperature, b.temperature);

    let (s, raw) = call(
        &app,
        post(r#"{"left_velocity":0.5,"right_velocity":0.5,"fields":["temperature"]}"#),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let only: PredictResponse = serde_json::from_slice(&raw).unwrap();
    assert!(only.velocity.is_none());
    assert_eq!(only.temperature, a.temperature);
}

#[tokio::test]
async fn malformed_requests_are_400_with_field() {
    let app = app();
    for (body, field) in [
        (
            r#"{"left_velocity":"fast","right_velocity":0.5}"#,
            "left_velocity",
        ),
        (r#"{"left_velocity":0.5}"#, ""),
        (
            r#"{"left_velocity":0.5,"right_velocity":0.5,"fields":["pressure"]}"#,
            "fields[0]",
        ),
        (
            r#"{"left_velocity":0.5,"right_velocity":0.5,"extra":1}"#,
            "",
        ),
        ("not json", ""),
    ] {
        let (s, b) = call(&app, post(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        let e: Value = serde_json::from_slice(&b).unwrap();
        assert!(e["error"].as_str().is_some_and(|m| !m.is_empty()));
        if !field.is_empty() {
            assert_eq!(e["field"], field, "{body}");
        }
    }
}

#[tokio::test]
async fn out_of_range_requests_are_422() {
    let app = app();
    for (body, field) in [
        (
            r#"{"left_velocity":0.01,"right_velocity":0.5}"#,
            "left_velocity",
        ),
        (
            r#"{"left_velocity":0.5,"right_velocity":1.5}"#,
            "right_velocity",
        ),
        (
            r#"{"left_velocity":0.5,"right_velocity":-0.2}"#,
            "right_velocity",
        ),
        (
            r#"{"left_velocity":0.5,"right_velocity":0.5,"fields":[]}"#,
            "fields",
        ),
    ] {
        let (s, b) = call(&app, post(body)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        let e: Value = serde_json::from_slice(&b).unwrap();
        assert_eq!(e["field"], field);
    }
    // range endpoints are inclusive
    let (s, _) = call(&app, post(r#"{"left_velocity":0.05,"right_velocity":1.0}"#)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn static_files_are_served_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>ui</p>").unwrap();
    let bundle = ModelBundle::untrained(NY, NX, NormalizationSpec::default(), 3).unwrap();
    let app = router(
        Arc::new(AppState {
            bundle,
            checksum: 0,
        }),
        Some(dir.path().to_path_buf()),
    );
    let (s, b) = call(&app, get("/index.html")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, b"<p>ui</p>");
    let (s, _) = call(&app, get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
}
