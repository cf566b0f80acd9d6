//! Query sessions: one query's status and artifacts, persisted as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::{QueryArtifacts, Stage, StageError};
use crate::retrieval::{PlaybackMode, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Pending,
    Retrieving,
    Narrating,
    Ready,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Ready | SessionStatus::Failed)
    }

    /// Status moves forward only; `failed` is reachable from any non-terminal state.
    pub fn can_advance_to(self, next: SessionStatus) -> bool {
        if self.is_terminal() {
            return false;
        }
        next == SessionStatus::Failed || next > self
    }
}

impl From<Stage> for SessionStatus {
    fn from(stage: Stage) -> Self {
        match stage {
            Stage::Retrieving => SessionStatus::Retrieving,
            Stage::Narrating | Stage::Planning => SessionStatus::Narrating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("session cannot move from {from:?} to {to:?}")]
pub struct TransitionError {
    pub from: SessionStatus,
    pub to: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySession {
    pub session_id: String,
    pub video_id: String,
    pub query: Query,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<QueryArtifacts>,
}

/// Stable id for a (video, mode, text) triple, so repeated submissions share a session.
pub fn session_id(video_id: &str, text: &str, mode: PlaybackMode) -> String {
    let mode = match mode {
        PlaybackMode::VideoCentric => "video_centric",
        PlaybackMode::NarrativeCentric => "narrative_centric",
    };
    let mut h = Sha256::new();
    for part in [video_id, mode, text.trim()] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("s{}", &hex::encode(h.finalize())[..15])
}

impl QuerySession {
    pub fn new(video_id: &str, text: &str, mode: PlaybackMode) -> Self {
        let id = session_id(video_id, text, mode);
        Self {
            session_id: id.clone(),
            video_id: video_id.to_string(),
            query: Query {
                query_id: id,
                video_id: video_id.to_string(),
                text: text.trim().to_string(),
                mode,
            },
            status: SessionStatus::Pending,
            error: None,
            artifacts: None,
        }
    }

    pub fn advance(&mut self, next: SessionStatus) -> Result<(), TransitionError> {
        if next == self.status {
            return Ok(());
        }
        if !self.status.can_advance_to(next) {
            return Err(TransitionError {
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        Ok(())
    }

    pub fn finish(&mut self, result: Result<QueryArtifacts, StageError>) -> Result<(), TransitionError> {
        match result {
            Ok(a) => {
                self.advance(SessionStatus::Ready)?;
                self.artifacts = Some(a);
            }
            Err(e) => {
                self.advance(SessionStatus::Failed)?;
                self.error = Some(e);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}
