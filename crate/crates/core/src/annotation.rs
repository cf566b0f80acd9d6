//! Per-frame multimodal annotations and their on-disk store.
//!
//! Store file layout, one JSON record per line:
//!
//! ```text
//! {"kind":"header","video_id":"v1","title":"...","duration":60.0,"frame_interval":3.0}
//! {"kind":"frame","timestamp":0.0,"description":"...","transcript_window":"..."}
//! {"kind":"failed","timestamp":3.0,"error":"..."}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::{names, CompletionRequest, Gateway, GatewayError};
use crate::ingest::{transcript_window_within, FrameRef, TimedWord, VideoMeta};
use crate::par::parallel_map;
use crate::time::{format_seconds, truncate_words, word_count};

pub const MAX_DESCRIPTION_WORDS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}, line {line}: {reason}")]
    Load {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub timestamp: f64,
    pub description: String,
    pub transcript_window: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFrame {
    pub timestamp: f64,
    pub error: String,
}

/// Annotations of one video, sorted by timestamp, at most one per sampled frame.
/// Frames whose annotation failed are listed in `failed` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStore {
    pub meta: VideoMeta,
    pub annotations: Vec<FrameAnnotation>,
    #[serde(default)]
    pub failed: Vec<FailedFrame>,
}

impl AnnotationStore {
    pub fn new(meta: VideoMeta) -> Self {
        Self {
            meta,
            annotations: Vec::new(),
            failed: Vec::new(),
        }
    }

    pub fn video_id(&self) -> &str {
        &self.meta.video_id
    }

    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.annotations.iter().map(|a| a.timestamp).collect()
    }

    pub fn get(&self, timestamp: f64) -> Option<&FrameAnnotation> {
        self.annotations
            .binary_search_by(|a| a.timestamp.total_cmp(&timestamp))
            .ok()
            .map(|i| &self.annotations[i])
    }

    /// Annotations whose frame lies in `[start, end)`.
    pub fn within(&self, start: f64, end: f64) -> impl Iterator<Item = &FrameAnnotation> {
        self.annotations
            .iter()
            .filter(move |a| a.timestamp >= start && a.timestamp < end)
    }

    /// Checks ordering, grid membership and the description length bound.
    pub fn validate(&self) -> Result<(), String> {
        let grid = self.meta.frame_timestamps();
        let mut prev: Option<f64> = None;
        for a in &self.annotations {
            if prev.is_some_and(|p| p >= a.timestamp) {
                return Err(format!("timestamp {} out of order or duplicated", a.timestamp));
            }
            if !grid.contains(&a.timestamp) {
                return Err(format!("timestamp {} is not a sampled frame", a.timestamp));
            }
            if word_count(&a.description) > MAX_DESCRIPTION_WORDS {
                return Err(format!("description at {} exceeds 50 words", a.timestamp));
            }
            prev = Some(a.timestamp);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub annotation: FrameAnnotation,
    pub truncated: bool,
}

fn annotate_request(frame: &FrameRef, window: &str, meta: &VideoMeta) -> CompletionRequest {
    CompletionRequest::new(names::ANNOTATE_FRAME)
        .bind("video_title", &meta.title)
        .bind("timestamp", format_seconds(frame.timestamp))
        .bind("transcript_window", window)
        .image(&frame.image_ref)
}

/// Describes one frame. An over-long description is requested once more,
/// then cut to 50 words.
pub fn annotate_frame(
    frame: &FrameRef,
    window: &str,
    meta: &VideoMeta,
    gateway: &Gateway,
) -> Result<AnnotatedFrame, GatewayError> {
    let request = annotate_request(frame, window, meta);
    let mut text = gateway.complete(&request)?.text;
    let mut truncated = false;
    if word_count(&text) > MAX_DESCRIPTION_WORDS {
        text = gateway.complete(&request)?.text;
        if word_count(&text) > MAX_DESCRIPTION_WORDS {
            warn!(
                timestamp = frame.timestamp,
                words = word_count(&text),
                "frame description over 50 words after retry, truncating"
            );
            truncated = true;
        }
    }
    Ok(AnnotatedFrame {
        annotation: FrameAnnotation {
            timestamp: frame.timestamp,
            description: truncate_words(&text, MAX_DESCRIPTION_WORDS),
            transcript_window: window.to_string(),
        },
        truncated,
    })
}

/// Annotates every frame with up to `parallelism` concurrent calls. Failed
/// frames land in `store.failed`; the output does not depend on completion order.
pub fn annotate_video(
    meta: &VideoMeta,
    frames: &[FrameRef],
    words: &[TimedWord],
    window_radius: f64,
    gateway: &Gateway,
    parallelism: usize,
) -> AnnotationStore {
    let mut frames = frames.to_vec();
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    frames.dedup_by(|a, b| a.timestamp == b.timestamp);
    let results = parallel_map(&frames, parallelism, |frame| {
        let window =
            transcript_window_within(words, frame.timestamp, window_radius, meta.duration);
        annotate_frame(frame, &window, meta, gateway)
    });
    let mut store = AnnotationStore::new(meta.clone());
    for (frame, result) in frames.iter().zip(results) {
        match result {
            Ok(a) => store.annotations.push(a.annotation),
            Err(e) => {
                warn!(timestamp = frame.timestamp, "frame annotation failed: {e}");
                store.failed.push(FailedFrame {
                    timestamp: frame.timestamp,
                    error: e.to_string(),
                });
            }
        }
    }
    store
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(VideoMeta),
    Frame(FrameAnnotation),
    Failed(FailedFrame),
}

pub fn save_store(store: &AnnotationStore, path: &Path) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        let mut put = |r: &Record| -> Result<(), StoreError> {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        put(&Record::Header(store.meta.clone()))?;
        for a in &store.annotations {
            put(&Record::Frame(a.clone()))?;
        }
        for f in &store.failed {
            put(&Record::Failed(f.clone()))?;
        }
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<AnnotationStore, StoreError> {
    let file = fs::File::open(path)?;
    let err = |line: usize, reason: String| StoreError::Load {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut store: Option<AnnotationStore> = None;
    let mut last_line = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let line = line?;
        let record: Record =
            serde_json::from_str(&line).map_err(|e| err(n, format!("corrupt record: {e}")))?;
        match (record, store.as_mut()) {
            (Record::Header(meta), None) => {
                VideoMeta::new(
                    meta.video_id.clone(),
                    meta.title.clone(),
                    meta.duration,
                    meta.frame_interval,
                )
                .map_err(|e| err(n, e.to_string()))?;
                store = Some(AnnotationStore::new(meta));
            }
            (Record::Header(_), Some(_)) => return Err(err(n, "second header record".into())),
            (_, None) => return Err(err(n, "first record must be the header".into())),
            (Record::Frame(a), Some(s)) => {
                s.annotations.push(a);
                s.validate().map_err(|reason| err(n, reason))?;
            }
            (Record::Failed(f), Some(s)) => s.failed.push(f),
        }
    }
    store.ok_or_else(|| err(last_line.max(1), "missing header record".into()))
}
