//! Read-only HTTP service over one baked model: metadata, point queries and
//! axis-aligned slices.

mod query;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use drr_core::model::BakedStructure;

pub use query::{
    model_info, query_points, query_slice, ModelInfo, PointsRequest, PointsResponse, QueryError, SliceRequest,
    SliceResponse, MAX_EXTENT,
};

pub const DEFAULT_MAX_POINTS: usize = 1_000_000;
pub const OCTET: &str = "application/octet-stream";

#[derive(Clone)]
pub struct AppState {
    pub baked: Arc<BakedStructure>,
    pub max_points: usize,
}

impl AppState {
    pub fn new(baked: BakedStructure) -> Self {
        Self {
            baked: Arc::new(baked),
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

impl IntoResponse for QueryError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            QueryError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            QueryError::TooLarge(m) => (StatusCode::PAYLOAD_TOO_LARGE, m),
            QueryError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, axum::Json(serde_json::json!({ "error": msg }))).into_response()
    }
}

fn wants_binary(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains(OCTET))
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, QueryError> {
    serde_json::from_slice(body).map_err(|e| QueryError::BadRequest(format!("malformed request: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, QueryError> + Send + 'static,
) -> Result<T, QueryError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| QueryError::Internal(e.to_string()))?
}

async fn health() -> &'static str {
    "ok"
}

async fn info(State(st): State<AppState>) -> Response {
    axum::Json(model_info(&st.baked)).into_response()
}

async fn points(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, QueryError> {
    let req: PointsRequest = parse(&body)?;
    let out = blocking(move || query_points(&st.baked, &req, st.max_points)).await?;
    if wants_binary(&headers) {
        return Ok(([(header::CONTENT_TYPE, OCTET)], f32_bytes(&out.values)).into_response());
    }
    Ok(axum::Json(out).into_response())
}

async fn slice(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, QueryError> {
    let req: SliceRequest = parse(&body)?;
    let out = blocking(move || query_slice(&st.baked, &req, st.max_points)).await?;
    if wants_binary(&headers) {
        let shape: Vec<String> = out.shape.iter().map(|s| s.to_string()).collect();
        return Ok((
            [
                (header::CONTENT_TYPE, OCTET.to_string()),
                (header::HeaderName::from_static("x-slice-shape"), shape.join(",")),
                (header::HeaderName::from_static("x-slice-min"), out.min.to_string()),
                (header::HeaderName::from_static("x-slice-max"), out.max.to_string()),
            ],
            f32_bytes(&out.values),
        )
            .into_response());
    }
    Ok(axum::Json(out).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/info", get(info))
        .route("/query/points", post(points))
        .route("/query/slice", post(slice))
        .layer(DefaultBodyLimit::max(512 << 20))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("serving model {} on {addr}", state.baked.fingerprint());
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}
