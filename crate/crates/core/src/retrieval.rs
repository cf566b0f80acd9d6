//! Query-driven frame retrieval over an annotation store.
//!
//! The store is split into disjoint, time-ordered batches; each batch is
//! judged by one completion whose answer is a bracketed timestamp list.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::annotation::{AnnotationStore, FrameAnnotation};
use crate::gateway::{names, CompletionRequest, Gateway};
use crate::par::parallel_map;
use crate::time::format_seconds;

/// Five minutes of video at the default 3 s frame spacing.
pub const DEFAULT_BATCH_SIZE: usize = 100;
/// Maximum distance for snapping a returned timestamp onto a batch frame.
pub const SNAP_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("annotation store for {0} has no annotated frames")]
    EmptyStore(String),
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("every retrieval batch failed: {}", .0.join("; "))]
    AllBatchesFailed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no bracketed timestamp list in response: {excerpt}")]
pub struct TimestampParseError {
    pub excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaybackMode {
    VideoCentric,
    NarrativeCentric,
}

impl std::str::FromStr for PlaybackMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "video_centric" | "video" => Ok(PlaybackMode::VideoCentric),
            "narrative_centric" | "narrative" => Ok(PlaybackMode::NarrativeCentric),
            other => Err(format!("unknown playback mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub video_id: String,
    pub text: String,
    pub mode: PlaybackMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub first_timestamp: f64,
    pub last_timestamp: f64,
    /// Raw provider responses, in call order (a reprompt adds a second one).
    pub responses: Vec<String>,
    pub selected: Vec<f64>,
    /// Returned values that matched no frame of the batch.
    pub dropped: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceResult {
    pub query_id: String,
    pub relevant_timestamps: Vec<f64>,
    pub batches: Vec<BatchOutcome>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One line per frame: `<timestamp> | frame: <description> | voiceover: <window>`.
pub fn build_frame_voice_list(batch: &[FrameAnnotation]) -> String {
    let mut sorted: Vec<&FrameAnnotation> = batch.iter().collect();
    sorted.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    sorted
        .iter()
        .map(|a| {
            format!(
                "{} | frame: {} | voiceover: {}",
                format_seconds(a.timestamp),
                one_line(&a.description),
                one_line(&a.transcript_window)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_item(item: &str) -> Option<f64> {
    let item = item
        .trim()
        .trim_matches(|c| c == '"' || c == '\'')
        .trim_end_matches(['s', 'S'])
        .trim();
    if item.contains(':') {
        // mm:ss or hh:mm:ss
        return item.split(':').try_fold(0.0, |acc, part| {
            part.trim().parse::<f64>().ok().map(|v| acc * 60.0 + v)
        });
    }
    item.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads the first bracketed, comma-separated number list in `raw`, ignoring
/// surrounding prose and bracket groups that do not hold numbers.
pub fn parse_timestamp_list(raw: &str) -> Result<Vec<f64>, TimestampParseError> {
    let mut rest = raw;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let body = &after[..close];
        if body.trim().is_empty() {
            return Ok(Vec::new());
        }
        let parsed: Option<Vec<f64>> = body.split(',').map(parse_item).collect();
        if let Some(values) = parsed {
            return Ok(values);
        }
        rest = &after[close + 1..];
    }
    Err(TimestampParseError {
        excerpt: raw.chars().take(120).collect(),
    })
}

/// Moves each value onto the nearest frame within [`SNAP_TOLERANCE`]; the
/// rest are returned separately.
pub fn snap_to_frames(values: &[f64], frames: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &v in values {
        let nearest = frames
            .iter()
            .copied()
            .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()));
        match nearest {
            Some(f) if (f - v).abs() <= SNAP_TOLERANCE => kept.push(f),
            _ => dropped.push(v),
        }
    }
    kept.sort_by(f64::total_cmp);
    kept.dedup();
    (kept, dropped)
}

fn judge_batch(
    batch: &[FrameAnnotation],
    store: &AnnotationStore,
    query: &Query,
    gateway: &Gateway,
) -> BatchOutcome {
    let frames: Vec<f64> = batch.iter().map(|a| a.timestamp).collect();
    let mut outcome = BatchOutcome {
        first_timestamp: frames[0],
        last_timestamp: frames[frames.len() - 1],
        responses: Vec::new(),
        selected: Vec::new(),
        dropped: Vec::new(),
        error: None,
    };
    let request = CompletionRequest::new(names::RETRIEVE_FRAMES)
        .bind("video_title", &store.meta.title)
        .bind("user_interest", &query.text)
        .bind("frame_voice_list", build_frame_voice_list(batch));

    for attempt in 0..2 {
        let raw = match gateway.complete(&request) {
            Ok(c) => c.text,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        outcome.responses.push(raw.clone());
        match parse_timestamp_list(&raw) {
            Ok(values) => {
                let (kept, dropped) = snap_to_frames(&values, &frames);
                if !dropped.is_empty() {
                    warn!(
                        query = %query.query_id,
                        ?dropped,
                        "retrieval returned timestamps outside its batch, dropping them"
                    );
                }
                outcome.selected = kept;
                outcome.dropped = dropped;
                outcome.error = None;
                return outcome;
            }
            Err(e) => {
                if attempt == 0 {
                    warn!(query = %query.query_id, "unparseable retrieval response, reprompting");
                }
                outcome.error = Some(e.to_string());
            }
        }
    }
    outcome
}

/// Judges the store in disjoint batches of `batch_size` frames and unions the picks.
pub fn retrieve_relevant_frames(
    store: &AnnotationStore,
    query: &Query,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<RelevanceResult, RetrievalError> {
    if query.text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if batch_size == 0 {
        return Err(RetrievalError::InvalidBatchSize);
    }
    if store.annotations.is_empty() {
        return Err(RetrievalError::EmptyStore(store.video_id().to_string()));
    }
    let batches: Vec<&[FrameAnnotation]> = store.annotations.chunks(batch_size).collect();
    let parallelism = gateway.vision_profile().map_or(1, |p| p.max_concurrency);
    let outcomes = parallel_map(&batches, parallelism, |b| judge_batch(b, store, query, gateway));

    if outcomes.iter().all(|o| o.error.is_some()) {
        return Err(RetrievalError::AllBatchesFailed(
            outcomes.into_iter().filter_map(|o| o.error).collect(),
        ));
    }
    let mut relevant: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.error.is_none())
        .flat_map(|o| o.selected.iter().copied())
        .collect();
    relevant.sort_by(f64::total_cmp);
    relevant.dedup();
    Ok(RelevanceResult {
        query_id: query.query_id.clone(),
        relevant_timestamps: relevant,
        batches: outcomes,
    })
}
