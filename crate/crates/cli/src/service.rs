//! Storage-backed operations shared by the command line and the HTTP server.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::Serialize;
use tracing::{info, warn};

use clipweave_core::annotation::load_store;
use clipweave_core::config::{Config, Layout};
use clipweave_core::gateway::Gateway;
use clipweave_core::ingest::IngestError;
use clipweave_core::pipeline::{
    self, load_annotated, load_video, run_query, skim_plan, IngestRequest, PipelineError,
    QuerySettings, Stage, StageError,
};
use clipweave_core::plan::{PlaybackPlan, SkimMode};
use clipweave_core::retrieval::PlaybackMode;
use clipweave_core::session::{QuerySession, SessionStatus};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownVideo(_) => AppError::NotFound(e.to_string()),
            PipelineError::NotAnnotated(_) => AppError::Conflict(e.to_string()),
            PipelineError::Invalid(_) => AppError::BadRequest(e.to_string()),
            PipelineError::Ingest(IngestError::InvalidArgument(_) | IngestError::Unreadable { .. }) => {
                AppError::BadRequest(e.to_string())
            }
            other => AppError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Internal(e.to_string())
    }
}

/// What clients see about a registered video.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoStatus {
    pub video_id: String,
    pub title: String,
    pub duration: f64,
    pub frame_interval: f64,
    pub frames: usize,
    pub annotated: bool,
    pub annotated_frames: usize,
    pub failed_frames: usize,
    pub media_url: String,
}

pub struct Service {
    pub config: Config,
    gateway: Gateway,
    layout: Layout,
    sessions: Mutex<HashMap<String, QuerySession>>,
}

impl Service {
    /// Opens the storage root and reloads persisted sessions. Sessions left
    /// unfinished by an earlier process are marked failed.
    pub fn open(config: Config) -> Result<Self, AppError> {
        let gateway = pipeline::build_gateway(&config)?;
        let layout = config.layout();
        layout.create_all()?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(layout.sessions())? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            match QuerySession::load(&path) {
                Ok(mut s) => {
                    if !s.status.is_terminal() {
                        let _ = s.finish(Err(StageError {
                            stage: Stage::Retrieving,
                            message: "interrupted before completion".into(),
                        }));
                        s.save(&path)?;
                    }
                    sessions.insert(s.session_id.clone(), s);
                }
                Err(e) => warn!(path = %path.display(), "skipping unreadable session: {e}"),
            }
        }
        info!(root = %layout.root.display(), sessions = sessions.len(), "storage opened");
        Ok(Self {
            config,
            gateway,
            layout,
            sessions: Mutex::new(sessions),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ingest(&self, request: &IngestRequest, annotate: bool) -> Result<VideoStatus, AppError> {
        pipeline::ingest(&self.config, &self.gateway, request)?;
        if annotate {
            self.annotate(&request.video_id)?;
        }
        self.video(&request.video_id)
    }

    pub fn annotate(&self, video_id: &str) -> Result<VideoStatus, AppError> {
        pipeline::annotate(&self.config, &self.gateway, video_id)?;
        self.video(video_id)
    }

    pub fn video(&self, video_id: &str) -> Result<VideoStatus, AppError> {
        if !pipeline::valid_id(video_id) {
            return Err(AppError::NotFound(format!("video {video_id} is not registered")));
        }
        let record = load_video(&self.layout, video_id)?;
        let store_path = self.layout.store(video_id);
        let (annotated, done, failed) = if store_path.is_file() {
            let store = load_store(&store_path).map_err(|e| AppError::Internal(e.to_string()))?;
            (true, store.annotations.len(), store.failed.len())
        } else {
            (false, 0, 0)
        };
        Ok(VideoStatus {
            frames: record.meta.frame_timestamps().len(),
            video_id: record.meta.video_id,
            title: record.meta.title,
            duration: record.meta.duration,
            frame_interval: record.meta.frame_interval,
            annotated,
            annotated_frames: done,
            failed_frames: failed,
            media_url: format!("/media/{video_id}"),
        })
    }

    pub fn videos(&self) -> Result<Vec<VideoStatus>, AppError> {
        let mut ids: Vec<String> = fs::read_dir(self.layout.videos())?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .collect();
        ids.sort();
        ids.iter().map(|id| self.video(id)).collect()
    }

    pub fn media_path(&self, video_id: &str) -> Result<PathBuf, AppError> {
        if !pipeline::valid_id(video_id) {
            return Err(AppError::NotFound(format!("video {video_id} is not registered")));
        }
        Ok(load_video(&self.layout, video_id)?.source)
    }

    /// Registers a query. Returns the session and whether it still has to be
    /// executed; a finished or running session for the same (video, mode,
    /// text) is returned as is, a failed one is started again.
    pub fn submit(
        &self,
        video_id: &str,
        text: &str,
        mode: PlaybackMode,
    ) -> Result<(QuerySession, bool), AppError> {
        if text.trim().is_empty() {
            return Err(AppError::BadRequest("query text is empty".into()));
        }
        if !pipeline::valid_id(video_id) {
            return Err(AppError::NotFound(format!("video {video_id} is not registered")));
        }
        load_video(&self.layout, video_id)?;
        if !self.layout.store(video_id).is_file() {
            return Err(PipelineError::NotAnnotated(video_id.into()).into());
        }
        let fresh = QuerySession::new(video_id, text, mode);
        let mut sessions = self.sessions.lock().expect("session lock");
        if let Some(existing) = sessions.get(&fresh.session_id) {
            if existing.status != SessionStatus::Failed {
                return Ok((existing.clone(), false));
            }
        }
        fresh.save(&self.layout.session(&fresh.session_id))?;
        sessions.insert(fresh.session_id.clone(), fresh.clone());
        Ok((fresh, true))
    }

    fn update(&self, session_id: &str, f: impl FnOnce(&mut QuerySession)) -> Result<(), AppError> {
        let mut sessions = self.sessions.lock().expect("session lock");
        let s = sessions
            .get_mut(session_id)
            .ok_or_else(|| AppError::NotFound(format!("query {session_id} not found")))?;
        f(s);
        s.save(&self.layout.session(session_id))?;
        Ok(())
    }

    /// Runs the pipeline for a submitted session, persisting each status change.
    pub fn execute(&self, session_id: &str) -> Result<QuerySession, AppError> {
        let query = self
            .session(session_id)
            .ok_or_else(|| AppError::NotFound(format!("query {session_id} not found")))?
            .query;
        let result = match load_annotated(&self.layout, &query.video_id) {
            Ok((store, words)) => {
                let settings = QuerySettings::from(&self.config);
                let mut progress = |stage: Stage| {
                    let _ = self.update(session_id, |s| {
                        let _ = s.advance(stage.into());
                    });
                };
                run_query(
                    &store,
                    &words,
                    &query,
                    &self.gateway,
                    &settings,
                    &self.layout.audio(),
                    &mut progress,
                )
            }
            Err(e) => Err(StageError {
                stage: Stage::Retrieving,
                message: e.to_string(),
            }),
        };
        if let Err(e) = &result {
            warn!(session = session_id, "query failed: {e}");
        }
        self.update(session_id, |s| {
            if let Err(e) = s.finish(result) {
                warn!(session = session_id, "{e}");
            }
        })?;
        Ok(self.session(session_id).expect("session present"))
    }

    pub fn session(&self, session_id: &str) -> Option<QuerySession> {
        self.sessions.lock().expect("session lock").get(session_id).cloned()
    }

    fn ready(&self, session_id: &str) -> Result<QuerySession, AppError> {
        let s = self
            .session(session_id)
            .ok_or_else(|| AppError::NotFound(format!("query {session_id} not found")))?;
        match s.status {
            SessionStatus::Ready => Ok(s),
            SessionStatus::Failed => Err(AppError::Conflict(format!(
                "query {session_id} failed: {}",
                s.error.as_ref().map_or("unknown error".into(), |e| e.to_string())
            ))),
            other => Err(AppError::Conflict(format!(
                "query {session_id} is not ready (status {other:?})"
            ))),
        }
    }

    pub fn plan(&self, session_id: &str) -> Result<PlaybackPlan, AppError> {
        let s = self.ready(session_id)?;
        Ok(s.artifacts.expect("ready sessions carry artifacts").plan)
    }

    pub fn skim(&self, session_id: &str, mode: SkimMode) -> Result<PlaybackPlan, AppError> {
        let s = self.ready(session_id)?;
        let artifacts = s.artifacts.expect("ready sessions carry artifacts");
        skim_plan(&artifacts, session_id, mode).map_err(|e| AppError::Internal(e.to_string()))
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }
}
