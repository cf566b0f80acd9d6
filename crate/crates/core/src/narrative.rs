//! Model-written narrative artifacts: segment titles and summaries, the
//! chunked overall narrative, the video-centric playback order, the
//! chunk-to-segment assignment and title-card text.
//!
//! Every structured answer is validated; a violation is asked for once more
//! and then either falls back (order, summaries, cards) or fails (narrative,
//! assignment).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::annotation::AnnotationStore;
use crate::gateway::{names, CompletionRequest, Gateway, GatewayError};
use crate::ingest::TimedWord;
use crate::par::parallel_map;
use crate::segments::{Interval, Segment};
use crate::time::{format_seconds, truncate_words, word_count};

pub const MAX_SUMMARY_WORDS: usize = 40;
pub const MAX_NARRATIVE_WORDS: usize = 300;
pub const DEFAULT_CARD_DURATION: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum NarrativeError {
    #[error("no relevant segments to narrate")]
    NoSegments,
    #[error("narrative chunk ids are invalid: {0}")]
    Schema(String),
    #[error("narrative rejected: {0}")]
    Narrative(String),
    #[error("chunk assignment rejected: {0}")]
    Assignment(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A segment with the context the prompts need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub interval: Interval,
    pub relevant: bool,
    pub title: String,
    pub summary: String,
    pub transcript: String,
    pub frame_descriptions: Vec<String>,
}

impl SegmentInfo {
    pub fn from_segment(segment: &Segment, store: &AnnotationStore, words: &[TimedWord]) -> Self {
        let iv = segment.interval;
        let transcript = words
            .iter()
            .filter(|w| iv.contains(w.start))
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            interval: iv,
            relevant: segment.relevant,
            title: segment.title.clone(),
            summary: segment.summary.clone(),
            transcript,
            frame_descriptions: store
                .within(iv.start(), iv.end())
                .map(|a| a.description.clone())
                .collect(),
        }
    }

    pub fn to_segment(&self) -> Segment {
        Segment {
            interval: self.interval,
            relevant: self.relevant,
            title: self.title.clone(),
            summary: self.summary.clone(),
        }
    }

    fn prompt_value(&self) -> Value {
        json!({
            "start": self.interval.start(),
            "end": self.interval.end(),
            "title": self.title,
            "summary": self.summary,
            "transcript": self.transcript,
            "frame_descriptions": self.frame_descriptions,
        })
    }

    fn fallback_title(&self) -> String {
        format!(
            "Segment {}-{}",
            format_seconds(self.interval.start()),
            format_seconds(self.interval.end())
        )
    }
}

fn segments_json(segments: &[SegmentInfo]) -> String {
    Value::Array(segments.iter().map(SegmentInfo::prompt_value).collect()).to_string()
}

/// Pulls the JSON object out of a model answer, tolerating code fences and
/// prose around it.
pub fn extract_json(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let (Some(open), Some(close)) = (trimmed.find('{'), trimmed.rfind('}')) else {
        return Err("no JSON object in response".into());
    };
    if close < open {
        return Err("no JSON object in response".into());
    }
    serde_json::from_str(&trimmed[open..=close]).map_err(|e| format!("malformed JSON: {e}"))
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

// ---------------------------------------------------------------- summaries

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFailure {
    pub interval: Interval,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub segments: Vec<SegmentInfo>,
    pub failures: Vec<SummaryFailure>,
}

#[derive(Deserialize)]
struct TitleSummary {
    title: String,
    summary: String,
}

fn summarize_one(
    info: &SegmentInfo,
    video_title: &str,
    gateway: &Gateway,
) -> Result<(String, String), String> {
    let payload = json!({
        "start": info.interval.start(),
        "end": info.interval.end(),
        "transcript": info.transcript,
        "frame_descriptions": info.frame_descriptions,
    });
    let request = CompletionRequest::new(names::SUMMARIZE_SEGMENT)
        .bind("video_title", video_title)
        .bind("segment", payload.to_string());
    let mut last: Option<(String, String)> = None;
    let mut last_err = String::new();
    for _ in 0..2 {
        let raw = gateway.complete(&request).map_err(|e| e.to_string())?.text;
        match extract_json(&raw).and_then(|v| {
            serde_json::from_value::<TitleSummary>(v).map_err(|e| e.to_string())
        }) {
            Ok(ts) => {
                let title = ts.title.trim().to_string();
                let pair = (title, ts.summary.trim().to_string());
                if word_count(&pair.1) <= MAX_SUMMARY_WORDS {
                    return Ok(pair);
                }
                last = Some(pair);
            }
            Err(e) => last_err = e,
        }
    }
    match last {
        Some((title, summary)) => {
            warn!(interval = %info.interval, "summary over 40 words after retry, truncating");
            Ok((title, truncate_words(&summary, MAX_SUMMARY_WORDS)))
        }
        None => Err(last_err),
    }
}

/// Titles and summarizes every segment, relevant or not. Failed segments get
/// a time-range title and an empty summary and are listed in the report.
pub fn summarize_segments(
    segments: &[SegmentInfo],
    video_title: &str,
    gateway: &Gateway,
    parallelism: usize,
) -> SummaryReport {
    let results = parallel_map(segments, parallelism, |s| summarize_one(s, video_title, gateway));
    let mut out = Vec::with_capacity(segments.len());
    let mut failures = Vec::new();
    for (info, result) in segments.iter().zip(results) {
        let mut info = info.clone();
        match result {
            Ok((title, summary)) => {
                info.title = if title.is_empty() { info.fallback_title() } else { title };
                info.summary = summary;
            }
            Err(error) => {
                warn!(interval = %info.interval, %error, "segment summary failed");
                failures.push(SummaryFailure {
                    interval: info.interval,
                    error,
                });
                info.title = info.fallback_title();
                info.summary = String::new();
            }
        }
        out.push(info);
    }
    SummaryReport {
        segments: out,
        failures,
    }
}

// ---------------------------------------------------------------- narrative

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeChunk {
    pub chunk_id: u32,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narrative {
    #[serde(rename = "overall_narrative")]
    pub overall: String,
    pub chunks: Vec<NarrativeChunk>,
}

enum Violation {
    Ids(String),
    Other(String),
}

impl Narrative {
    fn check(&self) -> Result<(), Violation> {
        if self.chunks.is_empty() {
            return Err(Violation::Ids("no chunks".into()));
        }
        let ids: Vec<u32> = self.chunks.iter().map(|c| c.chunk_id).collect();
        if ids.iter().enumerate().any(|(i, &id)| id as usize != i + 1) {
            return Err(Violation::Ids(format!(
                "expected 1..{} in order, got {ids:?}",
                ids.len()
            )));
        }
        let words = word_count(&self.overall);
        if words > MAX_NARRATIVE_WORDS {
            return Err(Violation::Other(format!(
                "overall narrative has {words} words, limit {MAX_NARRATIVE_WORDS}"
            )));
        }
        let joined: Vec<&str> = self.chunks.iter().flat_map(|c| tokens(&c.narrative)).collect();
        if joined != tokens(&self.overall) {
            return Err(Violation::Other(
                "chunk texts do not concatenate to the overall narrative".into(),
            ));
        }
        Ok(())
    }

    /// Checks consecutive chunk ids, the word limit and chunk concatenation.
    pub fn validate(&self) -> Result<(), NarrativeError> {
        self.check().map_err(|v| match v {
            Violation::Ids(d) => NarrativeError::Schema(d),
            Violation::Other(d) => NarrativeError::Narrative(d),
        })
    }

    fn chunks_json(&self) -> String {
        json!({ "chunks": self.chunks }).to_string()
    }
}

fn parse_narrative(raw: &str) -> Result<Narrative, NarrativeError> {
    let value = extract_json(raw).map_err(NarrativeError::Narrative)?;
    let n: Narrative = serde_json::from_value(value)
        .map_err(|e| NarrativeError::Narrative(format!("unexpected structure: {e}")))?;
    n.validate()?;
    Ok(n)
}

/// Writes the overall narrative for the relevant segments and its chunks.
pub fn generate_narrative(
    segments: &[SegmentInfo],
    user_interest: &str,
    gateway: &Gateway,
) -> Result<Narrative, NarrativeError> {
    if segments.is_empty() {
        return Err(NarrativeError::NoSegments);
    }
    let request = CompletionRequest::new(names::NARRATIVE)
        .bind("user_interest", user_interest)
        .bind("segments", segments_json(segments));
    let mut last = None;
    for attempt in 0..2 {
        let raw = gateway.complete(&request)?.text;
        match parse_narrative(&raw) {
            Ok(n) => return Ok(n),
            Err(e) => {
                if attempt == 0 {
                    warn!(error = %e, "narrative rejected, reprompting");
                }
                last = Some(e);
            }
        }
    }
    Err(last.expect("two attempts made"))
}

// ---------------------------------------------------------------- order

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderedSegment {
    pub interval: Interval,
    pub playback_order: u32,
}

/// Segments sorted by `playback_order`, which runs 1..n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackOrder {
    pub entries: Vec<OrderedSegment>,
    /// True when the model's answers were unusable and chronological order was used.
    pub fallback: bool,
}

impl PlaybackOrder {
    pub fn chronological(segments: &[SegmentInfo]) -> Self {
        let mut ivs: Vec<Interval> = segments.iter().map(|s| s.interval).collect();
        ivs.sort_by(|a, b| a.start().total_cmp(&b.start()));
        Self {
            entries: ivs
                .into_iter()
                .enumerate()
                .map(|(i, interval)| OrderedSegment {
                    interval,
                    playback_order: i as u32 + 1,
                })
                .collect(),
            fallback: true,
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        self.entries.iter().map(|e| e.interval).collect()
    }
}

fn interval_field(v: &Value) -> Result<Interval, String> {
    let start = v.get("start").and_then(Value::as_f64);
    let end = v.get("end").and_then(Value::as_f64);
    match (start, end) {
        (Some(s), Some(e)) => Interval::new(s, e).map_err(|e| e.to_string()),
        _ => Err(format!("segment entry without numeric start/end: {v}")),
    }
}

fn segment_array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>, String> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("missing array field {key:?}"))
}

/// Validates an ordering answer against the input segments.
pub fn parse_playback_order(raw: &str, segments: &[SegmentInfo]) -> Result<PlaybackOrder, String> {
    let value = extract_json(raw)?;
    let entries = segment_array(&value, "segments")?;
    let inputs: Vec<Interval> = segments.iter().map(|s| s.interval).collect();
    let mut seen = vec![false; inputs.len()];
    let mut orders = BTreeSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let iv = interval_field(e)?;
        let Some(k) = inputs.iter().position(|x| *x == iv) else {
            return Err(format!("{iv} is not one of the input segments"));
        };
        if std::mem::replace(&mut seen[k], true) {
            return Err(format!("{iv} appears more than once"));
        }
        let order = e
            .get("playback_order")
            .and_then(Value::as_u64)
            .ok_or_else(|| format!("{iv} has no integer playback_order"))?;
        if order == 0 || order > inputs.len() as u64 || !orders.insert(order) {
            return Err(format!("playback_order {order} is out of range or repeated"));
        }
        out.push(OrderedSegment {
            interval: iv,
            playback_order: order as u32,
        });
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(format!("{} is missing", inputs[k]));
    }
    out.sort_by_key(|e| e.playback_order);
    Ok(PlaybackOrder {
        entries: out,
        fallback: false,
    })
}

/// Asks for the playback order that best supports the narrative. Never fails:
/// after two unusable answers the chronological order is returned.
pub fn order_segments(
    narrative: &Narrative,
    segments: &[SegmentInfo],
    gateway: &Gateway,
) -> PlaybackOrder {
    if segments.is_empty() {
        return PlaybackOrder {
            entries: Vec::new(),
            fallback: false,
        };
    }
    let request = CompletionRequest::new(names::ORDER_SEGMENTS)
        .bind("overall_narrative", &narrative.overall)
        .bind("segments", segments_json(segments));
    for attempt in 0..2 {
        let problem = match gateway.complete(&request) {
            Ok(c) => match parse_playback_order(&c.text, segments) {
                Ok(order) => return order,
                Err(e) => e,
            },
            Err(e) => e.to_string(),
        };
        if attempt == 0 {
            warn!(%problem, "playback order rejected, reprompting");
        } else {
            warn!(%problem, "playback order rejected twice, using chronological order");
        }
    }
    PlaybackOrder::chronological(segments)
}

// ---------------------------------------------------------------- assignment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedChunk {
    pub chunk_id: u32,
    pub narrative: String,
    pub segments: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAssignment {
    pub chunks: Vec<AssignedChunk>,
    /// Segments the model left out, added to the chunk nearest in time.
    pub appended: Vec<Interval>,
}

impl ChunkAssignment {
    pub fn assigned(&self) -> impl Iterator<Item = &Interval> {
        self.chunks.iter().flat_map(|c| c.segments.iter())
    }
}

/// Validates an assignment answer: chunk ids as given, segments verbatim
/// from the input and each in at most one chunk.
pub fn parse_chunk_assignment(
    raw: &str,
    narrative: &Narrative,
    segments: &[SegmentInfo],
) -> Result<Vec<AssignedChunk>, String> {
    let value = extract_json(raw)?;
    let answer = segment_array(&value, "chunks")?;
    let inputs: Vec<Interval> = segments.iter().map(|s| s.interval).collect();
    let mut used = vec![false; inputs.len()];
    let mut per_chunk: Vec<Option<Vec<Interval>>> = vec![None; narrative.chunks.len()];
    for c in answer {
        let id = c
            .get("chunk_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| format!("chunk without integer chunk_id: {c}"))?;
        let slot = narrative
            .chunks
            .iter()
            .position(|n| n.chunk_id as u64 == id)
            .ok_or_else(|| format!("unknown chunk_id {id}"))?;
        if per_chunk[slot].is_some() {
            return Err(format!("chunk_id {id} listed twice"));
        }
        let mut ivs = Vec::new();
        let listed = match c.get("segments") {
            None | Some(Value::Null) => &[][..],
            Some(Value::Array(a)) => &a[..],
            Some(other) => return Err(format!("chunk {id} segments is not a list: {other}")),
        };
        for s in listed {
            let iv = interval_field(s)?;
            let k = inputs
                .iter()
                .position(|x| *x == iv)
                .ok_or_else(|| format!("{iv} in chunk {id} is not one of the input segments"))?;
            if std::mem::replace(&mut used[k], true) {
                return Err(format!("{iv} is assigned more than once"));
            }
            ivs.push(iv);
        }
        per_chunk[slot] = Some(ivs);
    }
    if let Some(k) = per_chunk.iter().position(Option::is_none) {
        return Err(format!("chunk_id {} is missing", narrative.chunks[k].chunk_id));
    }
    Ok(narrative
        .chunks
        .iter()
        .zip(per_chunk)
        .map(|(n, segs)| AssignedChunk {
            chunk_id: n.chunk_id,
            narrative: n.narrative.clone(),
            segments: segs.unwrap_or_default(),
        })
        .collect())
}

/// Adds every unassigned segment to the chunk holding the segment nearest to
/// it in time (earliest chunk on ties; the first chunk if none has any).
pub fn append_unassigned(chunks: &mut [AssignedChunk], segments: &[SegmentInfo]) -> Vec<Interval> {
    let mut missing: Vec<Interval> = segments
        .iter()
        .map(|s| s.interval)
        .filter(|iv| !chunks.iter().any(|c| c.segments.contains(iv)))
        .collect();
    missing.sort_by(|a, b| a.start().total_cmp(&b.start()));
    if chunks.is_empty() {
        return Vec::new();
    }
    let anchors: Vec<(usize, Interval)> = chunks
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.segments.iter().map(move |iv| (i, *iv)))
        .collect();
    for iv in &missing {
        let target = anchors
            .iter()
            .min_by(|a, b| {
                iv.distance(&a.1)
                    .total_cmp(&iv.distance(&b.1))
                    .then(a.0.cmp(&b.0))
            })
            .map_or(0, |a| a.0);
        warn!(interval = %iv, chunk = chunks[target].chunk_id, "segment left unassigned, appending to nearest chunk");
        chunks[target].segments.push(*iv);
    }
    missing
}

/// Associates segments with narrative chunks.
pub fn assign_chunks(
    narrative: &Narrative,
    segments: &[SegmentInfo],
    gateway: &Gateway,
) -> Result<ChunkAssignment, NarrativeError> {
    narrative.validate()?;
    let request = CompletionRequest::new(names::ASSIGN_CHUNKS)
        .bind("overall_narrative", narrative.chunks_json())
        .bind("segments", segments_json(segments));
    let mut problem = String::new();
    for attempt in 0..2 {
        let raw = gateway.complete(&request)?.text;
        match parse_chunk_assignment(&raw, narrative, segments) {
            Ok(mut chunks) => {
                for c in chunks.iter().filter(|c| c.segments.is_empty()) {
                    warn!(chunk = c.chunk_id, "narrative chunk has no segments");
                }
                let appended = append_unassigned(&mut chunks, segments);
                return Ok(ChunkAssignment { chunks, appended });
            }
            Err(e) => {
                if attempt == 0 {
                    warn!(problem = %e, "chunk assignment rejected, reprompting");
                }
                problem = e;
            }
        }
    }
    Err(NarrativeError::Assignment(problem))
}

// ---------------------------------------------------------------- title cards

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitleCard {
    /// Position in playback order of the segment the card follows; `None`
    /// for the opening card.
    pub after_segment: Option<usize>,
    pub text: String,
    pub display_duration: f64,
    #[serde(default)]
    pub fallback: bool,
}

fn first_sentences(text: &str, n: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
        if word.ends_with(['.', '!', '?']) {
            count += 1;
            if count == n {
                break;
            }
        }
    }
    out
}

fn card_value(s: &SegmentInfo) -> String {
    json!({
        "start": s.interval.start(),
        "end": s.interval.end(),
        "title": s.title,
        "summary": s.summary,
    })
    .to_string()
}

/// Transition text shown before `next`; without `prev` it only previews.
pub fn generate_title_card(
    prev: Option<&SegmentInfo>,
    next: &SegmentInfo,
    after_segment: Option<usize>,
    video_title: &str,
    display_duration: f64,
    gateway: &Gateway,
) -> TitleCard {
    let request = CompletionRequest::new(names::TITLE_CARD)
        .bind("video_title", video_title)
        .bind("previous_segment", prev.map_or_else(|| "none".into(), card_value))
        .bind("next_segment", card_value(next));
    let text = match gateway.complete(&request) {
        Ok(c) => first_sentences(&c.text, 2),
        Err(e) => {
            warn!(error = %e, "title card generation failed");
            String::new()
        }
    };
    let fallback = text.is_empty();
    TitleCard {
        after_segment,
        text: if fallback {
            format!("Next: {}", next.title)
        } else {
            text
        },
        display_duration,
        fallback,
    }
}

/// An opening card plus one card between each pair of consecutive segments
/// in `played` (segments in playback order).
pub fn generate_title_cards(
    played: &[SegmentInfo],
    video_title: &str,
    display_duration: f64,
    gateway: &Gateway,
    parallelism: usize,
) -> Vec<TitleCard> {
    let slots: Vec<usize> = (0..played.len()).collect();
    parallel_map(&slots, parallelism, |&i| {
        let prev = i.checked_sub(1).map(|p| &played[p]);
        generate_title_card(prev, &played[i], i.checked_sub(1), video_title, display_duration, gateway)
    })
}
