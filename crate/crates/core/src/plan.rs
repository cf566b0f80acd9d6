//! Executable playback plans and their virtual timeline.
//!
//! A plan is a list of items whose `virtual_span`s tile `[0, total_duration)`.
//! Video items map linearly onto a source interval at their rate; cards,
//! holds and slates carry item-local time instead.
//!
//! Offsets are computed from exact per-rate sums of source time
//! (`Σ acc_r / r`) rather than by adding item lengths one at a time, so a
//! skim plan's total is `relevant + irrelevant / N` with a single rounding.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::Gateway;
use crate::narrative::{ChunkAssignment, TitleCard};
use crate::par::parallel_map;
use crate::segments::{Interval, Segment};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("virtual time {t} is outside [0, {total})")]
    OutOfRange { t: f64, total: f64 },
    #[error("source time {t} is outside item {item}")]
    SourceOutOfRange { item: usize, t: f64 },
    #[error("plan has no item {0}")]
    NoSuchItem(usize),
    #[error("item {0} has a zero-length virtual span")]
    Degenerate(usize),
    #[error("invalid plan input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    VideoCentric,
    NarrativeCentric,
    RelevantOnly,
    Speed2x,
    Speed5x,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkimMode {
    RelevantOnly,
    Speed2x,
    Speed5x,
}

impl SkimMode {
    pub fn irrelevant_rate(self) -> Option<f64> {
        match self {
            SkimMode::RelevantOnly => None,
            SkimMode::Speed2x => Some(2.0),
            SkimMode::Speed5x => Some(5.0),
        }
    }

    fn plan_mode(self) -> PlanMode {
        match self {
            SkimMode::RelevantOnly => PlanMode::RelevantOnly,
            SkimMode::Speed2x => PlanMode::Speed2x,
            SkimMode::Speed5x => PlanMode::Speed5x,
        }
    }
}

impl std::str::FromStr for SkimMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "relevant_only" | "relevant" => Ok(SkimMode::RelevantOnly),
            "speed2x" | "2x" => Ok(SkimMode::Speed2x),
            "speed5x" | "5x" => Ok(SkimMode::Speed5x),
            other => Err(format!("unknown skim mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    PlaySegment,
    TitleCard,
    NarratedGroup,
    SpeededSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioDirective {
    Original,
    /// Original audio muted, narration playing.
    Narration,
    OriginalSpeeded,
    Silent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationRef {
    pub asset: String,
    /// Narration time at the start of this item.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub kind: ItemKind,
    /// Source interval for video items; `None` for cards, holds and slates.
    pub source: Option<Interval>,
    pub audio: AudioDirective,
    pub rate: f64,
    pub virtual_span: Interval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Source frame shown frozen for the item's whole span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_frame: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<NarrationRef>,
}

impl PlanItem {
    pub fn virtual_len(&self) -> f64 {
        self.virtual_span.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationGroup {
    pub group: u32,
    pub chunk_id: u32,
    pub text: String,
    pub asset: Option<String>,
    pub narration_duration: Option<f64>,
    pub video_duration: f64,
    pub rate: f64,
    pub virtual_span: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackPlan {
    pub schema_version: u32,
    pub query_id: String,
    pub mode: PlanMode,
    pub items: Vec<PlanItem>,
    pub total_duration: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<NarrationGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A position on a plan's timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub item: usize,
    /// Source time for video items, item-local time otherwise.
    pub t_source: f64,
}

impl PlaybackPlan {
    /// Checks that spans tile `[0, total_duration)` exactly and that each
    /// video item's span length matches its source length over its rate.
    pub fn validate(&self) -> Result<(), String> {
        let mut cursor = 0.0;
        for (i, item) in self.items.iter().enumerate() {
            if item.virtual_span.start() != cursor {
                return Err(format!(
                    "item {i} starts at {} instead of {cursor}",
                    item.virtual_span.start()
                ));
            }
            if !(item.rate > 0.0) {
                return Err(format!("item {i} has rate {}", item.rate));
            }
            if let Some(src) = item.source {
                let expected = src.len() / item.rate;
                if (item.virtual_len() - expected).abs() > 1e-9 * expected.max(1.0) {
                    return Err(format!(
                        "item {i} spans {} but its source needs {expected}",
                        item.virtual_len()
                    ));
                }
            }
            cursor = item.virtual_span.end();
        }
        if cursor != self.total_duration {
            return Err(format!(
                "items end at {cursor}, total is {}",
                self.total_duration
            ));
        }
        Ok(())
    }

    /// Source intervals of all video items, in plan order.
    pub fn source_intervals(&self) -> Vec<Interval> {
        self.items.iter().filter_map(|i| i.source).collect()
    }

    pub fn virtual_to_source(&self, t: f64) -> Result<Location, PlanError> {
        if !(t >= 0.0 && t < self.total_duration) {
            return Err(PlanError::OutOfRange {
                t,
                total: self.total_duration,
            });
        }
        let k = self
            .items
            .partition_point(|it| it.virtual_span.end() <= t)
            .min(self.items.len() - 1);
        let item = &self.items[k];
        let local = t - item.virtual_span.start();
        let t_source = match item.source {
            Some(src) => src.start() + local * (src.len() / item.virtual_len()),
            None => local,
        };
        Ok(Location { item: k, t_source })
    }

    pub fn source_to_virtual(&self, item: usize, t_source: f64) -> Result<f64, PlanError> {
        let it = self.items.get(item).ok_or(PlanError::NoSuchItem(item))?;
        let local = match it.source {
            Some(src) => {
                if t_source < src.start() || t_source > src.end() {
                    return Err(PlanError::SourceOutOfRange { item, t: t_source });
                }
                (t_source - src.start()) * (it.virtual_len() / src.len())
            }
            None => {
                if t_source < 0.0 || t_source > it.virtual_len() {
                    return Err(PlanError::SourceOutOfRange { item, t: t_source });
                }
                t_source
            }
        };
        Ok(it.virtual_span.start() + local)
    }
}

/// Accumulates items and assigns virtual spans from exact per-rate sums.
struct TimelineBuilder {
    /// Rate bits -> accumulated source (or item-local) seconds.
    acc: BTreeMap<u64, f64>,
    offset: f64,
    items: Vec<PlanItem>,
}

struct Pending {
    kind: ItemKind,
    source: Option<Interval>,
    length: f64,
    audio: AudioDirective,
    rate: f64,
    group: Option<u32>,
    text: Option<String>,
    hold_frame: Option<f64>,
    narration_asset: Option<String>,
    group_start: f64,
}

impl Pending {
    fn video(kind: ItemKind, source: Interval, rate: f64, audio: AudioDirective) -> Self {
        Self {
            kind,
            source: Some(source),
            length: source.len(),
            audio,
            rate,
            group: None,
            text: None,
            hold_frame: None,
            narration_asset: None,
            group_start: 0.0,
        }
    }

    fn still(kind: ItemKind, length: f64, audio: AudioDirective) -> Self {
        Self {
            kind,
            source: None,
            length,
            audio,
            rate: 1.0,
            group: None,
            text: None,
            hold_frame: None,
            narration_asset: None,
            group_start: 0.0,
        }
    }
}

impl TimelineBuilder {
    fn new() -> Self {
        Self {
            acc: BTreeMap::new(),
            offset: 0.0,
            items: Vec::new(),
        }
    }

    fn current(&self) -> f64 {
        let unit = self.acc.get(&1.0f64.to_bits()).copied().unwrap_or(0.0);
        let others: Vec<(f64, f64)> = self
            .acc
            .iter()
            .map(|(bits, sum)| (f64::from_bits(*bits), *sum))
            .filter(|(r, _)| *r != 1.0)
            .collect();
        match others.as_slice() {
            [] => unit,
            // one rounding: (R·r + I) / r
            [(r, sum)] => (unit * r + sum) / r,
            _ => {
                let mut sorted = others;
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                sorted.iter().fold(unit, |t, (r, sum)| t + sum / r)
            }
        }
    }

    fn push(&mut self, p: Pending) -> Result<(), PlanError> {
        *self.acc.entry(p.rate.to_bits()).or_insert(0.0) += p.length;
        let start = self.offset;
        let end = self.current();
        let index = self.items.len();
        let span = Interval::new(start, end).map_err(|_| PlanError::Degenerate(index))?;
        self.offset = end;
        self.items.push(PlanItem {
            kind: p.kind,
            source: p.source,
            audio: p.audio,
            rate: p.rate,
            virtual_span: span,
            group: p.group,
            text: p.text,
            hold_frame: p.hold_frame,
            narration: p.narration_asset.map(|asset| NarrationRef {
                asset,
                offset: start - p.group_start,
            }),
        });
        Ok(())
    }

    fn finish(self, query_id: &str, mode: PlanMode) -> PlaybackPlan {
        PlaybackPlan {
            schema_version: PLAN_SCHEMA_VERSION,
            query_id: query_id.to_string(),
            mode,
            total_duration: self.offset,
            items: self.items,
            groups: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------- video-centric

/// Segments in playback order at 1.0 with original audio, each preceded by
/// its title card when cards are given (`after_segment` `None` opens the
/// plan, `Some(i)` follows segment `i`).
pub fn compile_video_centric(
    query_id: &str,
    order: &[Interval],
    cards: &[TitleCard],
) -> Result<PlaybackPlan, PlanError> {
    let mut b = TimelineBuilder::new();
    let card_before = |i: usize| {
        cards.iter().find(|c| match c.after_segment {
            None => i == 0,
            Some(prev) => prev + 1 == i,
        })
    };
    for (i, iv) in order.iter().enumerate() {
        if let Some(card) = card_before(i) {
            if !(card.display_duration > 0.0) {
                return Err(PlanError::InvalidInput(format!(
                    "title card duration {}",
                    card.display_duration
                )));
            }
            let mut p = Pending::still(ItemKind::TitleCard, card.display_duration, AudioDirective::Silent);
            p.text = Some(card.text.clone());
            b.push(p)?;
        }
        b.push(Pending::video(ItemKind::PlaySegment, *iv, 1.0, AudioDirective::Original))?;
    }
    Ok(b.finish(query_id, PlanMode::VideoCentric))
}

// ---------------------------------------------------------------- narrative-centric

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RateBounds {
    fn default() -> Self {
        Self { min: 0.75, max: 1.25 }
    }
}

impl RateBounds {
    pub fn validate(&self) -> Result<(), String> {
        if self.min > 0.0 && self.min <= 1.0 && self.max >= 1.0 && self.max.is_finite() {
            Ok(())
        } else {
            Err(format!("rate bounds [{}, {}] must satisfy 0 < min <= 1 <= max", self.min, self.max))
        }
    }
}

/// Synthesized narration for one chunk; `duration` is `None` when synthesis failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkNarration {
    pub chunk_id: u32,
    pub asset: Option<String>,
    pub duration: Option<f64>,
}

/// Video rate that stretches `video` seconds toward `narration` seconds, within bounds.
pub fn matched_rate(video: f64, narration: f64, bounds: RateBounds) -> f64 {
    (video / narration).clamp(bounds.min, bounds.max)
}

/// One narrated group per chunk with segments, played in assignment order
/// with original audio muted. The video rate is matched to the narration
/// within `bounds`; narration left over plays on the held last frame.
/// A chunk without segments narrates over the previous group's last frame,
/// or over a slate when it comes first.
/// Narration overflow shorter than this is not worth a hold item.
pub const MIN_HOLD: f64 = 1e-6;

pub fn compile_narrative_centric(
    query_id: &str,
    assignment: &ChunkAssignment,
    narrations: &[ChunkNarration],
    bounds: RateBounds,
) -> Result<PlaybackPlan, PlanError> {
    bounds.validate().map_err(PlanError::InvalidInput)?;
    let mut b = TimelineBuilder::new();
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    let mut last_frame: Option<f64> = None;

    for (g, chunk) in assignment.chunks.iter().enumerate() {
        let group = g as u32 + 1;
        let narration = narrations.iter().find(|n| n.chunk_id == chunk.chunk_id);
        let duration = narration.and_then(|n| n.duration).filter(|d| *d > 0.0);
        let asset = narration.and_then(|n| n.asset.clone());
        let video: f64 = chunk.segments.iter().map(Interval::len).sum();
        let group_start = b.offset;

        if chunk.segments.is_empty() {
            let Some(n) = duration else {
                let w = format!("chunk {} has neither segments nor narration, skipped", chunk.chunk_id);
                warn!("{w}");
                warnings.push(w);
                continue;
            };
            let (kind, hold_frame, text) = match last_frame {
                Some(f) => (ItemKind::NarratedGroup, Some(f), None),
                None => (ItemKind::TitleCard, None, Some(chunk.narrative.clone())),
            };
            let mut p = Pending::still(kind, n, AudioDirective::Narration);
            p.group = Some(group);
            p.hold_frame = hold_frame;
            p.text = text;
            p.narration_asset = asset.clone();
            p.group_start = group_start;
            b.push(p)?;
            groups.push(NarrationGroup {
                group,
                chunk_id: chunk.chunk_id,
                text: chunk.narrative.clone(),
                asset,
                narration_duration: Some(n),
                video_duration: 0.0,
                rate: 1.0,
                virtual_span: Interval::new(group_start, b.offset)
                    .map_err(|_| PlanError::Degenerate(b.items.len() - 1))?,
            });
            continue;
        }

        let (rate, audio) = match duration {
            Some(n) => (matched_rate(video, n, bounds), AudioDirective::Narration),
            None => {
                let w = format!(
                    "no narration for chunk {}, playing original audio",
                    chunk.chunk_id
                );
                warn!("{w}");
                warnings.push(w);
                (1.0, AudioDirective::Original)
            }
        };
        for iv in &chunk.segments {
            let mut p = Pending::video(ItemKind::NarratedGroup, *iv, rate, audio);
            p.group = Some(group);
            if duration.is_some() {
                p.narration_asset = asset.clone();
                p.group_start = group_start;
            }
            b.push(p)?;
            last_frame = Some(iv.end());
        }
        if let Some(n) = duration {
            let shown = b.offset - group_start;
            if n - shown > MIN_HOLD {
                let mut p = Pending::still(ItemKind::NarratedGroup, n - shown, AudioDirective::Narration);
                p.group = Some(group);
                p.hold_frame = last_frame;
                p.narration_asset = asset.clone();
                p.group_start = group_start;
                b.push(p)?;
            }
        }
        groups.push(NarrationGroup {
            group,
            chunk_id: chunk.chunk_id,
            text: chunk.narrative.clone(),
            asset: if duration.is_some() { asset } else { None },
            narration_duration: duration,
            video_duration: video,
            rate,
            virtual_span: Interval::new(group_start, b.offset)
                .map_err(|_| PlanError::Degenerate(b.items.len() - 1))?,
        });
    }
    let mut plan = b.finish(query_id, PlanMode::NarrativeCentric);
    plan.groups = groups;
    plan.warnings = warnings;
    Ok(plan)
}

/// Synthesizes one narration per chunk to `audio_root/<prefix>/chunk_<id>.mp3`;
/// assets are recorded relative to `audio_root`. Chunks with segments ask
/// for their video length as the target duration.
pub fn synthesize_narrations(
    assignment: &ChunkAssignment,
    gateway: &Gateway,
    audio_root: &Path,
    prefix: &str,
    parallelism: usize,
) -> Vec<ChunkNarration> {
    if let Err(e) = std::fs::create_dir_all(audio_root.join(prefix)) {
        warn!(error = %e, "cannot create narration directory");
    }
    parallel_map(&assignment.chunks, parallelism, |chunk| {
        let video: f64 = chunk.segments.iter().map(Interval::len).sum();
        let target = (video > 0.0).then_some(video);
        let asset = format!("{prefix}/chunk_{}.mp3", chunk.chunk_id);
        let out: PathBuf = audio_root.join(&asset);
        match gateway.synthesize(&chunk.narrative, target, &out) {
            Ok(audio) => ChunkNarration {
                chunk_id: chunk.chunk_id,
                asset: Some(asset),
                duration: Some(audio.duration),
            },
            Err(e) => {
                warn!(chunk = chunk.chunk_id, error = %e, "narration synthesis failed");
                ChunkNarration {
                    chunk_id: chunk.chunk_id,
                    asset: None,
                    duration: None,
                }
            }
        }
    })
}

// ---------------------------------------------------------------- skim

/// Skim plans over segments that tile the video: relevant segments only, or
/// everything with irrelevant spans sped up.
pub fn compile_skim(
    query_id: &str,
    segments: &[Segment],
    mode: SkimMode,
) -> Result<PlaybackPlan, PlanError> {
    let mut sorted: Vec<&Segment> = segments.iter().collect();
    sorted.sort_by(|a, b| a.interval.start().total_cmp(&b.interval.start()));
    for w in sorted.windows(2) {
        if w[0].interval.end() > w[1].interval.start() {
            return Err(PlanError::InvalidInput(format!(
                "segments {} and {} overlap",
                w[0].interval, w[1].interval
            )));
        }
    }
    let mut b = TimelineBuilder::new();
    for s in sorted {
        if s.relevant {
            b.push(Pending::video(ItemKind::PlaySegment, s.interval, 1.0, AudioDirective::Original))?;
        } else if let Some(rate) = mode.irrelevant_rate() {
            b.push(Pending::video(
                ItemKind::SpeededSpan,
                s.interval,
                rate,
                AudioDirective::OriginalSpeeded,
            ))?;
        }
    }
    Ok(b.finish(query_id, mode.plan_mode()))
}
