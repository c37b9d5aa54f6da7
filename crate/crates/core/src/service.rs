//! HTTP API over one immutable model: detection and steerable
//! neutralization, with an append-only request log.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::detector::DetectorInput;
use crate::model::Model;
use crate::systems::{Control, MergeRule};
use crate::text::{diff_words, tokenize};
use crate::vocab::UNKNOWN_CATEGORY;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub tokens: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeutralizeRequest {
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
    /// One value per token of the detect response.
    #[serde(default)]
    pub control: Option<Vec<f64>>,
    #[serde(default)]
    pub merge: Option<MergeRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeutralizeResponse {
    pub tokens: Vec<String>,
    /// Probabilities that steered the rewrite; absent for systems without a
    /// detector.
    pub probabilities: Option<Vec<f64>>,
    pub output_tokens: Vec<String>,
    pub output_text: String,
    /// Half-open output-side token ranges that differ from the input; a
    /// deletion is an empty range at the point of removal.
    pub changed_spans: Vec<[usize; 2]>,
}

/// Structured error body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::EmptyInput => "empty_input",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Config(_) => "invalid_request",
            Error::TooFewPairs { .. } => "too_few_pairs",
            Error::Lexicon(_) => "lexicon",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Checkpoint(_) => "checkpoint",
            Error::Engine(_) => "internal",
        };
        ApiError::new(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.code.as_str() {
            "internal" | "io" | "checkpoint" => StatusCode::INTERNAL_SERVER_ERROR,
            "not_found" => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(self)).into_response()
    }
}

fn category_or_default(category: &Option<String>) -> &str {
    category
        .as_deref()
        .filter(|c| !c.is_empty())
        .unwrap_or(UNKNOWN_CATEGORY)
}

/// Detector probabilities for each token of `text`.
pub fn detect_text(
    model: &Model,
    req: &DetectRequest,
) -> std::result::Result<DetectResponse, ApiError> {
    let sentence = tokenize(&req.text)?;
    let tokens = sentence.norm_strings();
    let input = DetectorInput::new(
        &model.vocab,
        model.lexicons(),
        &tokens,
        category_or_default(&req.category),
    );
    let probabilities = match (&model.arch, model.system()) {
        (crate::model::Architecture::Detector(d), _) => d.detect(&model.store, &input)?,
        (_, Some(s)) => s.detect(&model.store, &input)?.ok_or_else(|| {
            ApiError::new(
                "no_detector",
                "this model has no detector; use /api/neutralize",
            )
        })?,
        _ => {
            return Err(ApiError::new(
                "no_detector",
                "this checkpoint cannot detect",
            ))
        }
    };
    Ok(DetectResponse {
        tokens,
        probabilities,
    })
}

/// Rewrites `text`, optionally steered by a control vector.
pub fn neutralize_text(
    model: &Model,
    req: &NeutralizeRequest,
) -> std::result::Result<NeutralizeResponse, ApiError> {
    let system = model.system().ok_or_else(|| {
        ApiError::new(
            "not_a_system",
            "this checkpoint is not a neutralization system",
        )
    })?;
    let sentence = tokenize(&req.text)?;
    let tokens = sentence.norm_strings();
    if req.merge.is_some() && req.control.is_none() {
        return Err(ApiError::new(
            "invalid_request",
            "merge given without control",
        ));
    }
    let control = req.control.as_deref().map(|values| Control {
        values,
        merge: req.merge.unwrap_or(model.meta.run.merge),
    });
    let out = system.neutralize(
        &model.store,
        &model.vocab,
        model.lexicons(),
        &tokens,
        category_or_default(&req.category),
        control,
        &model.meta.run.decode,
    )?;
    let script = diff_words(&tokens, &out.output);
    let changed_spans = script
        .changed()
        .map(|op| [op.tgt.start, op.tgt.end])
        .collect();
    Ok(NeutralizeResponse {
        tokens,
        probabilities: out.probabilities,
        output_text: out.output.join(" "),
        output_tokens: out.output,
        changed_spans,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub timestamp_ms: u128,
    pub endpoint: String,
    pub text: String,
    pub control: Option<Vec<f64>>,
}

/// One service process: an id, the model it serves, and its request log.
#[derive(Debug)]
pub struct ApiSession {
    pub id: String,
    pub model: Model,
    pub digest: String,
    log: Mutex<Vec<LogEntry>>,
}

impl ApiSession {
    pub fn new(model: Model, digest: String) -> Self {
        Self {
            id: uuid::Uuid::new_v4().to_string(),
            model,
            digest,
            log: Mutex::new(Vec::new()),
        }
    }

    fn record(&self, endpoint: &str, text: &str, control: Option<&[f64]>) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        log.push(LogEntry {
            timestamp_ms,
            endpoint: endpoint.into(),
            text: text.into(),
            control: control.map(<[f64]>::to_vec),
        });
    }

    /// A snapshot of the log in arrival order.
    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

type Shared = Arc<ApiSession>;

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new("malformed_body", e.to_string()))
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model": s.digest }))
}

async fn model_info(State(s): State<Shared>) -> Json<serde_json::Value> {
    let m = &s.model;
    Json(serde_json::json!({
        "model": s.digest,
        "session": s.id,
        "kind": m.meta.kind,
        "mode": m.system().map(|sys| sys.mode()),
        "join": m.meta.run.join,
        "merge": m.meta.run.merge,
        "has_detector": m.system().is_some_and(|sys| sys.detector().is_some())
            || matches!(m.arch, crate::model::Architecture::Detector(_)),
        "categories": m.vocab.categories(),
        "vocab_size": m.vocab.len(),
        "lexicons": m.lexicons().iter().map(|l| l.name.clone()).collect::<Vec<_>>(),
        "run": m.meta.run,
    }))
}

async fn blocking<T, F>(s: Shared, f: F) -> std::result::Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&ApiSession) -> std::result::Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&s))
        .await
        .map_err(|e| ApiError::new("internal", e.to_string()))?
        .map(Json)
}

async fn detect(
    State(s): State<Shared>,
    body: Bytes,
) -> std::result::Result<Json<DetectResponse>, ApiError> {
    let req: DetectRequest = parse(&body)?;
    s.record("detect", &req.text, None);
    blocking(s, move |s| detect_text(&s.model, &req)).await
}

async fn neutralize(
    State(s): State<Shared>,
    body: Bytes,
) -> std::result::Result<Json<NeutralizeResponse>, ApiError> {
    let req: NeutralizeRequest = parse(&body)?;
    s.record("neutralize", &req.text, req.control.as_deref());
    blocking(s, move |s| neutralize_text(&s.model, &req)).await
}

async fn not_found() -> ApiError {
    ApiError::new("not_found", "no such endpoint")
}

pub fn router(session: Shared) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model-info", get(model_info))
        .route("/api/detect", post(detect))
        .route("/api/neutralize", post(neutralize))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(session)
}

/// Serves `session` on `addr` until the process is stopped.
pub async fn serve(session: ApiSession, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("serving {} on http://{addr}", session.digest);
    axum::serve(listener, router(Arc::new(session)))
        .await
        .map_err(|e| Error::Config(format!("server stopped: {e}")))
}
