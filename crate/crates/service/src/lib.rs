//! HTTP/JSON front end over the blocking operations in `wuglab_core::ops`.
//! Every operation runs on the blocking pool; grids are serialised so two
//! requests never write the same output tree at once.

use std::sync::Arc;

use axum::extract::{Json, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use wuglab_core::ops;
use wuglab_core::runner::RunnerError;

#[derive(Default)]
struct AppState {
    grid: Mutex<()>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl From<RunnerError> for ApiError {
    fn from(e: RunnerError) -> Self {
        let status = match e {
            RunnerError::Config(_) | RunnerError::InsufficientSeeds { .. } | RunnerError::EmptyStore => {
                StatusCode::BAD_REQUEST
            }
            _ if missing_file(&e) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string() }
    }
}

fn missing_file(e: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur = Some(e);
    while let Some(err) = cur {
        if err.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::NotFound) {
            return true;
        }
        cur = err.source();
    }
    false
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

async fn blocking<Req, Res, F>(req: Req, f: F) -> Result<Json<Res>, ApiError>
where
    Req: Send + 'static,
    Res: Serialize + Send + 'static,
    F: FnOnce(&Req) -> Result<Res, RunnerError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&req)).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: format!("operation panicked: {e}") }),
    }
}

fn op<Req, Res>(f: fn(&Req) -> Result<Res, RunnerError>) -> axum::routing::MethodRouter<Arc<AppState>>
where
    Req: DeserializeOwned + Send + 'static,
    Res: Serialize + Send + 'static,
{
    post(move |Json(req): Json<Req>| async move { blocking(req, f).await })
}

async fn grid(State(st): State<Arc<AppState>>, Json(req): Json<ops::GridRequest>) -> Result<Json<ops::GridResponse>, ApiError> {
    let _guard = st.grid.lock().await;
    blocking(req, ops::grid).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") })) }))
        .route("/forge", op(ops::forge))
        .route("/gen", op(ops::gen))
        .route("/inject", op(ops::inject))
        .route("/tok-train", op(ops::tok_train))
        .route("/train", op(ops::train))
        .route("/eval", op(ops::eval))
        .route("/grid", post(grid))
        .route("/report", op(ops::report))
        .with_state(Arc::new(AppState::default()))
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router()).await
}
