//! HTTP API over [`Service`].

use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower::ServiceExt;
use tower_http::cors::CorsLayer;
use tower_http::services::{ServeDir, ServeFile};
use tower_http::trace::TraceLayer;

use clipweave_core::pipeline::IngestRequest;
use clipweave_core::plan::SkimMode;
use clipweave_core::retrieval::PlaybackMode;

use crate::service::{AppError, Service};

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match &self {
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AppError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<Service>;

async fn blocking<T, F>(f: F) -> Result<T, AppError>
where
    F: FnOnce() -> Result<T, AppError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::Internal(e.to_string()))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewVideo {
    pub video_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub source: std::path::PathBuf,
    #[serde(default)]
    pub transcript: Option<std::path::PathBuf>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "yes")]
    pub annotate: bool,
}

fn yes() -> bool {
    true
}

async fn create_video(State(svc): State<Shared>, Json(body): Json<NewVideo>) -> Result<Response, AppError> {
    let request = IngestRequest {
        title: body.title.unwrap_or_else(|| body.video_id.clone()),
        video_id: body.video_id,
        source: body.source,
        transcript: body.transcript,
        duration: body.duration,
    };
    let status = blocking(move || svc.ingest(&request, body.annotate)).await?;
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

async fn list_videos(State(svc): State<Shared>) -> Result<Response, AppError> {
    Ok(Json(blocking(move || svc.videos()).await?).into_response())
}

async fn get_video(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, AppError> {
    Ok(Json(blocking(move || svc.video(&id)).await?).into_response())
}

async fn annotate_video(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, AppError> {
    Ok(Json(blocking(move || svc.annotate(&id)).await?).into_response())
}

async fn media(State(svc): State<Shared>, Path(id): Path<String>, req: Request) -> Result<Response, AppError> {
    let path = svc.media_path(&id)?;
    let res = ServeFile::new(path)
        .oneshot(req)
        .await
        .map_err(|e| AppError::Internal(e.to_string()))?;
    Ok(res.into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewQuery {
    pub text: String,
    pub mode: String,
}

async fn create_query(
    State(svc): State<Shared>,
    Path(video_id): Path<String>,
    Json(body): Json<NewQuery>,
) -> Result<Response, AppError> {
    let mode: PlaybackMode = body.mode.parse().map_err(AppError::BadRequest)?;
    let worker = svc.clone();
    let (session, start) = blocking(move || worker.submit(&video_id, &body.text, mode)).await?;
    if !start {
        return Ok((StatusCode::OK, Json(session)).into_response());
    }
    let sid = session.session_id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = svc.execute(&sid) {
            tracing::error!(session = %sid, "query execution failed: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(session)).into_response())
}

async fn get_query(State(svc): State<Shared>, Path(sid): Path<String>) -> Result<Response, AppError> {
    let s = svc
        .session(&sid)
        .ok_or_else(|| AppError::NotFound(format!("query {sid} not found")))?;
    Ok(Json(s).into_response())
}

async fn get_plan(State(svc): State<Shared>, Path(sid): Path<String>) -> Result<Response, AppError> {
    Ok(Json(svc.plan(&sid)?).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkimRequest {
    pub mode: String,
}

async fn skim(
    State(svc): State<Shared>,
    Path(sid): Path<String>,
    Json(body): Json<SkimRequest>,
) -> Result<Response, AppError> {
    let mode: SkimMode = body.mode.parse().map_err(AppError::BadRequest)?;
    Ok(Json(svc.skim(&sid, mode)?).into_response())
}

pub fn router(service: Arc<Service>) -> Router {
    let audio = ServeDir::new(service.layout().audio());
    Router::new()
        .route("/videos", post(create_video).get(list_videos))
        .route("/videos/{id}", get(get_video))
        .route("/videos/{id}/annotate", post(annotate_video))
        .route("/videos/{id}/queries", post(create_query))
        .route("/queries/{sid}", get(get_query))
        .route("/queries/{sid}/plan", get(get_plan))
        .route("/queries/{sid}/skim", post(skim))
        .route("/media/{id}", get(media))
        .nest_service("/audio", audio)
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
