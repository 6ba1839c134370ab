//! HTTP inference over a frozen CDAAE checkpoint.
//!
//! Routes: `POST /synthesize`, `GET /model/info`, `GET /health`.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use cdaae_core::data::{decode_image, encode_png, postprocess, preprocess};
use cdaae_core::eval::{manifold_grid, synthesize_one, GridAxis, GridSpec};
use cdaae_core::train::Checkpoint;
use cdaae_core::{LabelMode, LabelVector, ModelParams, Z_DIM};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

/// Descriptor returned by `/model/info` and echoed in every synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub label_mode: LabelMode,
    pub label_dim: usize,
    pub skip_position: String,
    pub z_dim: usize,
    /// SHA-256 of the checkpoint file, hex.
    pub checkpoint_hash: String,
}

/// A frozen model and its descriptor.
#[derive(Debug)]
pub struct LoadedModel {
    pub params: ModelParams<f32>,
    pub info: ModelInfo,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> cdaae_core::Result<Self> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        let params = ckpt.params;
        let info = ModelInfo {
            label_mode: params.label_mode,
            label_dim: params.label_dim(),
            skip_position: params.skip.name().to_string(),
            z_dim: Z_DIM,
            checkpoint_hash: hex::encode(Sha256::digest(bytes)),
        };
        Ok(Self { params, info })
    }

    pub fn load(path: &Path) -> cdaae_core::Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Shared handler state. The model is set once and then only read.
#[derive(Clone, Debug, Default)]
pub struct AppState {
    model: Arc<OnceLock<LoadedModel>>,
}

impl AppState {
    /// State with no model; `/health` answers 503 until [`AppState::install`].
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let state = Self::empty();
        state.install(model);
        state
    }

    /// Installs the model. Returns false if one was already present.
    pub fn install(&self, model: LoadedModel) -> bool {
        self.model.set(model).is_ok()
    }

    pub fn model(&self) -> Option<&LoadedModel> {
        self.model.get()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisRequest {
    /// Base64 PNG of any size; resized to 32×32 on ingest.
    pub image: String,
    pub label: Vec<f64>,
    /// Sweep two label slots instead of synthesizing once.
    #[serde(default)]
    pub grid: Option<GridRequest>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRequest {
    pub axis_x: GridAxis,
    pub axis_y: GridAxis,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisResponse {
    /// Base64 PNG: 32×32, or the tiled grid when one was requested.
    pub image: String,
    pub latency_ms: f64,
    pub model_info: ModelInfo,
}

/// A JSON error body: `{"error": {"code", "message"}}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_loaded() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model_not_loaded",
            "no model is loaded",
        )
    }
}

impl From<cdaae_core::Error> for ApiError {
    fn from(e: cdaae_core::Error) -> Self {
        use cdaae_core::Error as E;
        match e {
            E::Numeric(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "numeric_failure", e.to_string()),
            E::Validation(_) => Self::bad_request("invalid_request", e.to_string()),
            E::Image(_) => Self::bad_request("bad_image", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

/// Checks a raw label against the model before building a [`LabelVector`].
pub fn validate_label(info: &ModelInfo, label: &[f64]) -> Result<LabelVector, ApiError> {
    if label.len() != info.label_dim {
        return Err(ApiError::bad_request(
            "label_length",
            format!(
                "label has {} entries; this {} model expects {}",
                label.len(),
                info.label_mode,
                info.label_dim
            ),
        ));
    }
    if let Some((i, v)) = label.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(ApiError::bad_request(
            "label_out_of_range",
            format!("label entry {i} is {v}; entries must lie in [0, 1]"),
        ));
    }
    LabelVector::new(info.label_mode, label.to_vec()).map_err(|e| ApiError::bad_request("invalid_label", e.to_string()))
}

/// Runs one request against a loaded model. Pure; used by the handler.
pub fn run_synthesis(model: &LoadedModel, req: &SynthesisRequest) -> Result<Vec<u8>, ApiError> {
    let label = validate_label(&model.info, &req.label)?;
    let bytes = BASE64
        .decode(req.image.trim())
        .map_err(|e| ApiError::bad_request("bad_image", format!("image is not valid base64: {e}")))?;
    let img =
        decode_image(&bytes).map_err(|e| ApiError::bad_request("bad_image", format!("cannot decode image: {e}")))?;
    let source = preprocess(&img);
    let out = match &req.grid {
        None => postprocess(&synthesize_one(&model.params, &source, &label)?)?,
        Some(grid) => {
            let spec = GridSpec {
                axis_x: grid.axis_x.clone(),
                axis_y: grid.axis_y.clone(),
                base: label,
            };
            spec.validate()
                .map_err(|e| ApiError::bad_request("invalid_grid", e.to_string()))?;
            manifold_grid(&model.params, &source, &spec)?.image
        }
    };
    Ok(encode_png(&out)?)
}

async fn synthesize(State(state): State<AppState>, body: Bytes) -> Result<Json<SynthesisResponse>, ApiError> {
    let start = Instant::now();
    let req: SynthesisRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed_json", e.to_string()))?;
    if state.model().is_none() {
        return Err(ApiError::not_loaded());
    }
    let worker = state.clone();
    let png = tokio::task::spawn_blocking(move || {
        let model = worker.model().expect("checked above");
        run_synthesis(model, &req)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(SynthesisResponse {
        image: BASE64.encode(png),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
        model_info: state.model().expect("checked above").info.clone(),
    }))
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    state
        .model()
        .map(|m| Json(m.info.clone()))
        .ok_or_else(ApiError::not_loaded)
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(_) => (StatusCode::OK, Json(serde_json::json!({ "status": "ok" }))).into_response(),
        None => ApiError::not_loaded().into_response(),
    }
}

/// CORS for the editor: `None` allows any origin.
pub fn cors(origin: Option<&str>) -> Result<CorsLayer, String> {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    Ok(match origin {
        None => layer.allow_origin(Any),
        Some(o) => {
            let value = HeaderValue::from_str(o).map_err(|e| format!("bad CORS origin {o:?}: {e}"))?;
            layer.allow_origin(AllowOrigin::exact(value))
        }
    })
}

pub fn router(state: AppState, cors: CorsLayer) -> Router {
    Router::new()
        .route("/synthesize", post(synthesize))
        .route("/model/info", get(model_info))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState, cors: CorsLayer) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, cors)).await
}
