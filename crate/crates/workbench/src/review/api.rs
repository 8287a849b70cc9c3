//! HTTP/JSON API of the review service.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::store::{Decision, ReviewStore, StoreError};

pub const TOKEN_HEADER: &str = "x-review-token";
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

#[derive(Clone)]
struct AppState {
    store: Arc<RwLock<ReviewStore>>,
    token: Option<Arc<str>>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownScreen(_) | StoreError::UnknownElement { .. } => {
                StatusCode::NOT_FOUND
            }
            StoreError::Malformed(_) => StatusCode::CONFLICT,
            _ => StatusCode::SERVICE_UNAVAILABLE,
        };
        ApiError(status, e.to_string())
    }
}

fn unavailable() -> ApiError {
    ApiError(
        StatusCode::SERVICE_UNAVAILABLE,
        "store lock poisoned".into(),
    )
}

#[derive(Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    decision: Decision,
    reviewer: String,
}

async fn healthz(State(st): State<AppState>) -> Result<Response, ApiError> {
    let store = st.store.read().map_err(|_| unavailable())?;
    Ok(Json(json!({
        "status": "ok",
        "screens": store.screen_count(),
        "verdicts": store.verdict_count(),
    }))
    .into_response())
}

async fn list_screens(
    State(st): State<AppState>,
    Query(q): Query<PageQuery>,
) -> Result<Response, ApiError> {
    let store = st.store.read().map_err(|_| unavailable())?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    Ok(Json(store.page(q.offset.unwrap_or(0), limit)).into_response())
}

async fn get_screen(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let store = st.store.read().map_err(|_| unavailable())?;
    Ok(Json(store.screen(&id)?).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

async fn get_image(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let path = st
        .store
        .read()
        .map_err(|_| unavailable())?
        .image_path(&id)?;
    let path =
        path.ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "service has no image root".into()))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("image for `{id}` not found")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn post_verdict(
    State(st): State<AppState>,
    UrlPath((id, eid)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let parsed: Result<VerdictBody, _> = serde_json::from_slice(&body);
    let mut store = st.store.write().map_err(|_| unavailable())?;
    // Unknown ids take precedence over body problems so clients see 404.
    store.screen(&id)?;
    let body =
        parsed.map_err(|e| ApiError(StatusCode::CONFLICT, format!("malformed verdict: {e}")))?;
    let verdict = store.record(&id, &eid, body.decision, &body.reviewer)?;
    Ok(Json(verdict).into_response())
}

async fn export(State(st): State<AppState>) -> Result<Response, ApiError> {
    let store = st.store.read().map_err(|_| unavailable())?;
    let mut out = Vec::new();
    for s in store.export() {
        serde_json::to_writer(&mut out, &s)
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        out.push(b'\n');
    }
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from(out),
    )
        .into_response())
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let ok = req.headers().get(TOKEN_HEADER).is_some_and(|v| {
            v == HeaderValue::from_str(token).unwrap_or(HeaderValue::from_static(""))
        });
        if !ok {
            return ApiError(
                StatusCode::UNAUTHORIZED,
                format!("missing or wrong {TOKEN_HEADER}"),
            )
            .into_response();
        }
    }
    next.run(req).await
}

/// Builds the review API. When `token` is set every route except
/// `/healthz` requires it in the `x-review-token` header.
pub fn router(store: ReviewStore, token: Option<String>) -> Router {
    let state = AppState {
        store: Arc::new(RwLock::new(store)),
        token: token.map(Arc::from),
    };
    let protected = Router::new()
        .route("/screens", get(list_screens))
        .route("/screens/{id}", get(get_screen))
        .route("/screens/{id}/image", get(get_image))
        .route("/screens/{id}/elements/{eid}/verdict", post(post_verdict))
        .route("/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(
    store: ReviewStore,
    bind: SocketAddr,
    token: Option<String>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!(
        "review service listening on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, router(store, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
