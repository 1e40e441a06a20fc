//! HTTP prediction service.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use flowsur::bundle::{ModelBundle, PREDICT_RANGE};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldName {
    Velocity,
    Temperature,
}

fn both_fields() -> Vec<FieldName> {
    vec![FieldName::Velocity, FieldName::Temperature]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub left_velocity: f64,
    pub right_velocity: f64,
    #[serde(default = "both_fields")]
    pub fields: Vec<FieldName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub ny: usize,
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPayload {
    pub units: String,
    pub min: f32,
    pub max: f32,
    /// Base64 of little-endian f32, row-major, floor row first.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub grid: Grid,
    pub left_velocity: f64,
    pub right_velocity: f64,
    pub velocity: Option<FieldPayload>,
    pub temperature: Option<FieldPayload>,
    pub latency_ms: f64,
}

pub struct AppState {
    pub bundle: ModelBundle,
    pub checksum: u32,
}

pub fn encode_field(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(4 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_field(data: &str) -> Option<Vec<f32>> {
    let bytes = STANDARD.decode(data).ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn payload(values: &[f32], units: &str) -> FieldPayload {
    let (min, max) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    FieldPayload {
        units: units.to_string(),
        min,
        max,
        data: encode_field(values),
    }
}

fn error(status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    (
        status,
        Json(json!({ "error": message.into(), "field": field })),
    )
        .into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (ny, nx) = state.bundle.grid();
    let n = state.bundle.norm;
    Json(json!({
        "grid": { "ny": ny, "nx": nx },
        "velocity_range": [PREDICT_RANGE.0, PREDICT_RANGE.1],
        "model_checksum": format!("{:08x}", state.checksum),
        "normalization": {
            "velocity_scale": n.velocity_scale,
            "temperature_min": n.temperature_min,
            "temperature_max": n.temperature_max,
        },
        "fields": ["velocity", "temperature"],
    }))
}

fn validate(req: &PredictRequest) -> Result<(), Response> {
    for (name, v) in [
        ("left_velocity", req.left_velocity),
        ("right_velocity", req.right_velocity),
    ] {
        if !(PREDICT_RANGE.0..=PREDICT_RANGE.1).contains(&v) {
            return Err(error(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!(
                    "{name} = {v} m/s is outside [{}, {}]",
                    PREDICT_RANGE.0, PREDICT_RANGE.1
                ),
                Some(name),
            ));
        }
    }
    if req.fields.is_empty() {
        return Err(error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no fields requested",
            Some("fields"),
        ));
    }
    Ok(())
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let req: PredictRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let path = e.path().to_string();
            let field = (path != ".").then_some(path);
            return error(
                StatusCode::BAD_REQUEST,
                e.inner().to_string(),
                field.as_deref(),
            );
        }
    };
    if let Err(resp) = validate(&req) {
        return resp;
    }
    let st = state.clone();
    let (l, r) = (req.left_velocity, req.right_velocity);
    let result = tokio::task::spawn_blocking(move || st.bundle.predict_dual(l, r)).await;
    let pred = match result {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
        Err(e) => {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("inference task failed: {e}"),
                None,
            )
        }
    };
    let want = |f| req.fields.contains(&f);
    let resp = PredictResponse {
        grid: Grid {
            ny: pred.ny,
            nx: pred.nx,
        },
        left_velocity: l,
        right_velocity: r,
        velocity: want(FieldName::Velocity).then(|| payload(&pred.velocity, "m/s")),
        temperature: want(FieldName::Temperature).then(|| payload(&pred.temperature, "°C")),
        latency_ms: pred.elapsed.as_secs_f64() * 1e3,
    };
    tracing::info!(
        left = l,
        right = r,
        latency_ms = resp.latency_ms,
        "prediction"
    );
    Json(resp).into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/meta", get(meta))
        .route("/api/predict", post(predict))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(TraceLayer::new_for_http())
}

/// Serves until interrupted.
pub async fn serve(
    state: Arc<AppState>,
    port: u16,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_codec_is_bit_exact() {
        let v = vec![0.0f32, -1.5, f32::MIN_POSITIVE, 35.25, 1e-30];
        let back = decode_field(&encode_field(&v)).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode_field("AAA=").is_none());
    }

    #[test]
    fn request_defaults_to_both_fields() {
        let r: PredictRequest =
            serde_json::from_str(r#"{"left_velocity":0.5,"right_velocity":0.6}"#).unwrap();
        assert_eq!(r.fields, both_fields());
    }
}
