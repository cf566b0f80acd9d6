//! End-to-end orchestration: video registration and frame/transcript
//! ingest, annotation, and the per-query chain from retrieval to plan.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::annotation::{annotate_video, load_store, save_store, AnnotationStore, StoreError};
use crate::config::{Config, Layout, ProviderKind};
use crate::gateway::{
    Capability, FakeProvider, Gateway, GatewayError, HttpProvider, TemplateSet,
};
use crate::ingest::{
    build_sentence_index, probe_duration, read_timed_words, write_timed_words, FrameExtractor,
    FrameRef, IngestError, TimedWord, VideoMeta,
};
use crate::narrative::{
    assign_chunks, generate_narrative, generate_title_cards, order_segments, summarize_segments,
    ChunkAssignment, Narrative, NarrativeError, PlaybackOrder, SegmentInfo, SummaryFailure,
    TitleCard,
};
use crate::plan::{
    compile_narrative_centric, compile_skim, compile_video_centric, synthesize_narrations,
    ChunkNarration, PlanError, PlanMode, PlaybackPlan, RateBounds, SkimMode,
};
use crate::retrieval::{retrieve_relevant_frames, PlaybackMode, Query, RelevanceResult, RetrievalError};
use crate::segments::{partition_timeline, relevant_intervals, Interval, Segment};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("video {0} is not registered")]
    UnknownVideo(String),
    #[error("video {0} has no annotation store")]
    NotAnnotated(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the model gateway described by the configuration.
pub fn build_gateway(config: &Config) -> Result<Gateway, PipelineError> {
    let templates = match &config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir).map_err(GatewayError::from)?,
        None => TemplateSet::builtin(),
    };
    let p = &config.provider;
    let gateway = match p.kind {
        ProviderKind::Fake => {
            let fake = Arc::new(FakeProvider::rule_based());
            let profile = |c| {
                let mut prof = p.profile(c);
                prof.retry.initial_backoff_secs = 0.0;
                prof
            };
            Gateway::new(templates)
                .with_vision(fake.clone(), profile(Capability::VisionLanguage))
                .with_transcription(fake.clone(), profile(Capability::Transcription))
                .with_synthesis(fake, profile(Capability::Synthesis))
        }
        ProviderKind::Http => {
            let http = |s| {
                HttpProvider::new(s, p.timeout_secs)
                    .map_err(|e| PipelineError::Invalid(e.to_string()))
            };
            Gateway::new(templates)
                .with_vision(
                    Arc::new(http(p.vision.clone())?),
                    p.profile(Capability::VisionLanguage),
                )
                .with_transcription(
                    Arc::new(http(p.transcription.clone())?),
                    p.profile(Capability::Transcription),
                )
                .with_synthesis(
                    Arc::new(http(p.synthesis.clone())?),
                    p.profile(Capability::Synthesis),
                )
        }
    };
    if p.archive {
        Ok(gateway.with_archive(&config.root.join("archive.jsonl"))?)
    } else {
        Ok(gateway)
    }
}

// ---------------------------------------------------------------- videos

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub meta: VideoMeta,
    pub source: PathBuf,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.')
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(tmp, path)
}

pub fn load_video(layout: &Layout, video_id: &str) -> Result<VideoRecord, PipelineError> {
    let path = layout.video_record(video_id);
    let bytes = fs::read(&path).map_err(|_| PipelineError::UnknownVideo(video_id.into()))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct IngestRequest {
    pub video_id: String,
    pub title: String,
    pub source: PathBuf,
    /// Timed-word JSONL; the audio track is transcribed when absent.
    pub transcript: Option<PathBuf>,
    /// Skips the probe command when given.
    pub duration: Option<f64>,
}

fn run_tool(template: &str, input: &Path, output: &Path) -> Result<(), IngestError> {
    let args: Vec<String> = template
        .split_whitespace()
        .map(|a| {
            a.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect();
    let Some(program) = args.first() else {
        return Err(IngestError::InvalidArgument("empty tool command".into()));
    };
    let out = Command::new(program)
        .args(&args[1..])
        .output()
        .map_err(|e| IngestError::Unreadable {
            path: input.to_path_buf(),
            reason: format!("{program}: {e}"),
        })?;
    if !out.status.success() {
        return Err(IngestError::Unreadable {
            path: input.to_path_buf(),
            reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(())
}

/// Registers a video: probes its duration, grabs frames on the sampling grid
/// and stores the word-timed transcript.
pub fn ingest(
    config: &Config,
    gateway: &Gateway,
    request: &IngestRequest,
) -> Result<VideoRecord, PipelineError> {
    if !valid_id(&request.video_id) {
        return Err(PipelineError::Invalid(format!(
            "invalid video id {:?}",
            request.video_id
        )));
    }
    let layout = config.layout();
    layout.create_all()?;
    let duration = match request.duration {
        Some(d) => d,
        None => probe_duration(&config.tools.probe_command, &request.source)?,
    };
    let meta = VideoMeta::new(&request.video_id, &request.title, duration, config.frame_interval)?;
    let extractor = FrameExtractor::new(&config.tools.frame_command, layout.frames(&meta.video_id))?;
    let frames = extractor.extract_frames(&request.source, &meta.frame_timestamps())?;
    info!(video = %meta.video_id, frames = frames.len(), "frames extracted");

    let words = match &request.transcript {
        Some(path) => read_timed_words(path)?,
        None => {
            let audio = layout.frames(&meta.video_id).join("audio.mp3");
            run_tool(&config.tools.audio_command, &request.source, &audio)?;
            gateway.transcribe(&audio)?
        }
    };
    write_timed_words(&layout.transcript(&meta.video_id), &words)?;
    let record = VideoRecord {
        meta,
        source: request.source.clone(),
    };
    write_json_atomic(&layout.video_record(&record.meta.video_id), &record)?;
    Ok(record)
}

/// Frame references of an ingested video, from the frame cache.
pub fn cached_frames(config: &Config, meta: &VideoMeta) -> Result<Vec<FrameRef>, PipelineError> {
    let extractor =
        FrameExtractor::new(&config.tools.frame_command, config.layout().frames(&meta.video_id))?;
    meta.frame_timestamps()
        .into_iter()
        .map(|t| {
            let image_ref = extractor.output_path(t);
            if image_ref.is_file() {
                Ok(FrameRef { timestamp: t, image_ref })
            } else {
                Err(PipelineError::Invalid(format!(
                    "frame {} missing, ingest the video again",
                    image_ref.display()
                )))
            }
        })
        .collect()
}

/// Annotates an ingested video and writes its store.
pub fn annotate(
    config: &Config,
    gateway: &Gateway,
    video_id: &str,
) -> Result<AnnotationStore, PipelineError> {
    let layout = config.layout();
    let record = load_video(&layout, video_id)?;
    let frames = cached_frames(config, &record.meta)?;
    let words = read_timed_words(&layout.transcript(video_id))?;
    let store = annotate_video(
        &record.meta,
        &frames,
        &words,
        config.window_radius,
        gateway,
        config.parallelism,
    );
    if !store.failed.is_empty() {
        warn!(video = video_id, failed = store.failed.len(), "some frames were not annotated");
    }
    fs::create_dir_all(layout.stores())?;
    save_store(&store, &layout.store(video_id))?;
    Ok(store)
}

pub fn load_annotated(
    layout: &Layout,
    video_id: &str,
) -> Result<(AnnotationStore, Vec<TimedWord>), PipelineError> {
    let path = layout.store(video_id);
    if !path.is_file() {
        load_video(layout, video_id)?;
        return Err(PipelineError::NotAnnotated(video_id.into()));
    }
    let store = load_store(&path)?;
    let words = read_timed_words(&layout.transcript(video_id))?;
    Ok((store, words))
}

// ---------------------------------------------------------------- queries

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySettings {
    pub batch_size: usize,
    pub title_cards: bool,
    pub card_duration: f64,
    pub rate_bounds: RateBounds,
    pub parallelism: usize,
}

impl From<&Config> for QuerySettings {
    fn from(c: &Config) -> Self {
        Self {
            batch_size: c.batch_size,
            title_cards: c.title_cards,
            card_duration: c.card_duration,
            rate_bounds: c.rate_bounds,
            parallelism: c.parallelism,
        }
    }
}

impl Default for QuerySettings {
    fn default() -> Self {
        (&Config::default()).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieving,
    Narrating,
    Planning,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Retrieving => "retrieving",
            Stage::Narrating => "narrating",
            Stage::Planning => "planning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("{stage} failed: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

/// Everything one query produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryArtifacts {
    pub relevance: RelevanceResult,
    /// All segments tiling the video, titled and summarized.
    pub segments: Vec<SegmentInfo>,
    #[serde(default)]
    pub summary_failures: Vec<SummaryFailure>,
    pub narrative: Option<Narrative>,
    #[serde(default)]
    pub order: Option<PlaybackOrder>,
    #[serde(default)]
    pub cards: Vec<TitleCard>,
    #[serde(default)]
    pub assignment: Option<ChunkAssignment>,
    #[serde(default)]
    pub narrations: Vec<ChunkNarration>,
    pub plan: PlaybackPlan,
}

impl QueryArtifacts {
    pub fn relevant(&self) -> Vec<&SegmentInfo> {
        self.segments.iter().filter(|s| s.relevant).collect()
    }

    pub fn plain_segments(&self) -> Vec<Segment> {
        self.segments.iter().map(SegmentInfo::to_segment).collect()
    }

    /// Plan segments are refined segments, and the narrative and assignment
    /// agree on their chunks.
    pub fn check_consistency(&self) -> Result<(), String> {
        let refined: Vec<Interval> = self.segments.iter().map(|s| s.interval).collect();
        for iv in self.plan.source_intervals() {
            if !refined.contains(&iv) {
                return Err(format!("plan interval {iv} is not a refined segment"));
            }
        }
        if let (Some(n), Some(a)) = (&self.narrative, &self.assignment) {
            let ids: Vec<u32> = n.chunks.iter().map(|c| c.chunk_id).collect();
            let assigned: Vec<u32> = a.chunks.iter().map(|c| c.chunk_id).collect();
            if ids != assigned {
                return Err(format!("narrative chunks {ids:?} but assignment keys {assigned:?}"));
            }
        }
        Ok(())
    }
}

/// Frame retrieval followed by refinement and sentence alignment: the
/// query's relevant intervals, sorted and disjoint.
pub fn retrieve_segments(
    store: &AnnotationStore,
    words: &[TimedWord],
    query: &Query,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<(RelevanceResult, Vec<Interval>), RetrievalError> {
    let meta = &store.meta;
    let relevance = retrieve_relevant_frames(store, query, gateway, batch_size)?;
    let relevant = relevant_intervals(
        &meta.frame_timestamps(),
        meta.frame_interval,
        meta.duration,
        &relevance.relevant_timestamps,
        &build_sentence_index(words),
    );
    Ok((relevance, relevant))
}

/// Retrieval, refinement and alignment, then summaries, narrative,
/// ordering or assignment, and the plan for the query's mode. `progress`
/// is told when each stage begins.
pub fn run_query(
    store: &AnnotationStore,
    words: &[TimedWord],
    query: &Query,
    gateway: &Gateway,
    settings: &QuerySettings,
    audio_root: &Path,
    progress: &mut dyn FnMut(Stage),
) -> Result<QueryArtifacts, StageError> {
    let meta = &store.meta;

    progress(Stage::Retrieving);
    let err = stage_err(Stage::Retrieving);
    let (relevance, relevant) = retrieve_segments(store, words, query, gateway, settings.batch_size)
        .map_err(|e: RetrievalError| err(&e))?;
    let timeline = partition_timeline(&relevant, meta.duration);

    progress(Stage::Narrating);
    let err = stage_err(Stage::Narrating);
    let infos: Vec<SegmentInfo> = timeline
        .iter()
        .map(|s| SegmentInfo::from_segment(s, store, words))
        .collect();
    let summaries = summarize_segments(&infos, &meta.title, gateway, settings.parallelism);
    let segments = summaries.segments;
    let relevant: Vec<SegmentInfo> = segments.iter().filter(|s| s.relevant).cloned().collect();

    let mut artifacts = QueryArtifacts {
        relevance,
        segments: segments.clone(),
        summary_failures: summaries.failures,
        narrative: None,
        order: None,
        cards: Vec::new(),
        assignment: None,
        narrations: Vec::new(),
        plan: PlaybackPlan {
            schema_version: crate::plan::PLAN_SCHEMA_VERSION,
            query_id: query.query_id.clone(),
            mode: match query.mode {
                PlaybackMode::VideoCentric => PlanMode::VideoCentric,
                PlaybackMode::NarrativeCentric => PlanMode::NarrativeCentric,
            },
            items: Vec::new(),
            total_duration: 0.0,
            groups: Vec::new(),
            warnings: Vec::new(),
        },
    };
    if relevant.is_empty() {
        warn!(query = %query.query_id, "no relevant segments found");
        artifacts.plan.warnings.push("no relevant segments found".into());
        progress(Stage::Planning);
        return Ok(artifacts);
    }
    let narrative =
        generate_narrative(&relevant, &query.text, gateway).map_err(|e: NarrativeError| err(&e))?;

    match query.mode {
        PlaybackMode::VideoCentric => {
            let order = order_segments(&narrative, &relevant, gateway);
            let played: Vec<SegmentInfo> = order
                .intervals()
                .iter()
                .filter_map(|iv| relevant.iter().find(|s| s.interval == *iv).cloned())
                .collect();
            if settings.title_cards {
                artifacts.cards = generate_title_cards(
                    &played,
                    &meta.title,
                    settings.card_duration,
                    gateway,
                    settings.parallelism,
                );
            }
            progress(Stage::Planning);
            let err = stage_err(Stage::Planning);
            artifacts.plan = compile_video_centric(&query.query_id, &order.intervals(), &artifacts.cards)
                .map_err(|e: PlanError| err(&e))?;
            artifacts.order = Some(order);
        }
        PlaybackMode::NarrativeCentric => {
            let assignment =
                assign_chunks(&narrative, &relevant, gateway).map_err(|e: NarrativeError| err(&e))?;
            artifacts.narrations = synthesize_narrations(
                &assignment,
                gateway,
                audio_root,
                &query.query_id,
                settings.parallelism,
            );
            progress(Stage::Planning);
            let err = stage_err(Stage::Planning);
            artifacts.plan = compile_narrative_centric(
                &query.query_id,
                &assignment,
                &artifacts.narrations,
                settings.rate_bounds,
            )
            .map_err(|e: PlanError| err(&e))?;
            artifacts.assignment = Some(assignment);
        }
    }
    artifacts.narrative = Some(narrative);
    Ok(artifacts)
}

/// Skim plan over a finished query's segments.
pub fn skim_plan(
    artifacts: &QueryArtifacts,
    query_id: &str,
    mode: SkimMode,
) -> Result<PlaybackPlan, PlanError> {
    compile_skim(query_id, &artifacts.plain_segments(), mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::FrameAnnotation;

    fn store() -> (AnnotationStore, Vec<TimedWord>) {
        let meta = VideoMeta::new("v", "Phone review", 30.0, 3.0).unwrap();
        let mut s = AnnotationStore::new(meta);
        let topics = ["intro", "intro", "battery", "battery", "battery", "camera", "camera", "outro", "outro", "outro"];
        for (k, t) in topics.iter().enumerate() {
            s.annotations.push(FrameAnnotation {
                timestamp: k as f64 * 3.0,
                description: format!("A slide about {t}."),
                transcript_window: String::new(),
            });
        }
        let words = vec![
            TimedWord::new("Hello.", 0.0, 1.0),
            TimedWord::new("Battery", 6.0, 7.0),
            TimedWord::new("lasts.", 7.0, 8.0),
        ];
        (s, words)
    }

    fn query(mode: PlaybackMode) -> Query {
        Query {
            query_id: "q1".into(),
            video_id: "v".into(),
            text: "battery and camera".into(),
            mode,
        }
    }

    #[test]
    fn both_modes_with_rule_fake() {
        let (s, w) = store();
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::fake(FakeProvider::rule_based());
        let mut stages = Vec::new();
        let a = run_query(&s, &w, &query(PlaybackMode::VideoCentric), &gw, &QuerySettings::default(), dir.path(), &mut |st| stages.push(st))
            .unwrap();
        assert_eq!(stages, vec![Stage::Retrieving, Stage::Narrating, Stage::Planning]);
        assert_eq!(a.relevant().len(), 1);
        assert_eq!(a.relevant()[0].interval, Interval::new(6.0, 21.0).unwrap());
        a.plan.validate().unwrap();
        a.check_consistency().unwrap();
        assert_eq!(a.plan.total_duration, 4.0 + 15.0);

        let b = run_query(&s, &w, &query(PlaybackMode::NarrativeCentric), &gw, &QuerySettings::default(), dir.path(), &mut |_| {})
            .unwrap();
        b.plan.validate().unwrap();
        b.check_consistency().unwrap();
        assert_eq!(b.plan.total_duration, 15.0);
        let skim = skim_plan(&b, "q1", SkimMode::Speed5x).unwrap();
        assert_eq!(skim.total_duration, 15.0 + 15.0 / 5.0);
    }

    #[test]
    fn no_relevant_frames_gives_empty_plan() {
        let (s, w) = store();
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::fake(FakeProvider::rule_based());
        let mut q = query(PlaybackMode::VideoCentric);
        q.text = "submarines".into();
        let a = run_query(&s, &w, &q, &gw, &QuerySettings::default(), dir.path(), &mut |_| {}).unwrap();
        assert!(a.plan.items.is_empty());
        assert!(a.narrative.is_none());
        assert_eq!(a.segments.len(), 1);
    }

    #[test]
    fn stage_failure_is_named() {
        let (s, w) = store();
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::fake(FakeProvider::new());
        let e = run_query(&s, &w, &query(PlaybackMode::VideoCentric), &gw, &QuerySettings::default(), dir.path(), &mut |_| {})
            .unwrap_err();
        assert_eq!(e.stage, Stage::Retrieving);
    }

    #[test]
    fn ids() {
        assert!(valid_id("talk-01.v2"));
        assert!(!valid_id("../etc"));
        assert!(!valid_id(""));
        assert!(!valid_id("a b"));
    }
}
