//! Media ingest: frame sampling, frame extraction through an external tool,
//! timed-word transcripts, per-frame transcript windows and the sentence index.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::time::format_seconds;

/// Default spacing between sampled frames, in seconds.
pub const DEFAULT_FRAME_INTERVAL: f64 = 3.0;

/// Default half-width of the transcript window around each frame, in seconds.
pub const DEFAULT_WINDOW_RADIUS: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frame extraction failed at {timestamp}s: {diagnostics}")]
    Tool { timestamp: f64, diagnostics: String },
    #[error("unreadable media source {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("timed-word file {path}, line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub title: String,
    pub duration: f64,
    pub frame_interval: f64,
}

impl VideoMeta {
    pub fn new(
        video_id: impl Into<String>,
        title: impl Into<String>,
        duration: f64,
        frame_interval: f64,
    ) -> Result<Self, IngestError> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(IngestError::InvalidArgument(format!(
                "duration must be a non-negative number, got {duration}"
            )));
        }
        if !(frame_interval > 0.0) || !frame_interval.is_finite() {
            return Err(IngestError::InvalidArgument(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            title: title.into(),
            duration,
            frame_interval,
        })
    }

    pub fn frame_timestamps(&self) -> Vec<f64> {
        // Validated at construction.
        sample_frame_timestamps(self.duration, self.frame_interval).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub timestamp: f64,
    pub image_ref: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl TimedWord {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            text: text.into(),
            start,
            end: end.max(start),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

/// Punctuation-delimited sentences, sorted and non-overlapping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceIndex {
    pub sentences: Vec<Sentence>,
}

impl SentenceIndex {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    /// Sentence `s` with `s.start <= t < s.end`.
    pub fn containing(&self, t: f64) -> Option<&Sentence> {
        let idx = self.sentences.partition_point(|s| s.start <= t);
        idx.checked_sub(1)
            .map(|i| &self.sentences[i])
            .filter(|s| t < s.end)
    }

    /// Sentence `s` with `s.start < t <= s.end`, i.e. the one holding the
    /// last instant before `t`.
    pub fn containing_before(&self, t: f64) -> Option<&Sentence> {
        let idx = self.sentences.partition_point(|s| s.start < t);
        idx.checked_sub(1)
            .map(|i| &self.sentences[i])
            .filter(|s| t <= s.end && s.start < s.end)
    }
}

/// Timestamps `k * interval` for every `k >= 0` with `k * interval < duration`.
pub fn sample_frame_timestamps(duration: f64, interval: f64) -> Result<Vec<f64>, IngestError> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(IngestError::InvalidArgument(format!(
            "frame interval must be positive, got {interval}"
        )));
    }
    if !(duration >= 0.0) {
        return Err(IngestError::InvalidArgument(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    Ok((0u64..)
        .map(|k| k as f64 * interval)
        .take_while(|&t| t < duration)
        .collect())
}

/// Words whose `[start, end]` touches `[max(0, center - radius), center + radius]`,
/// joined by single spaces in time order.
pub fn transcript_window(words: &[TimedWord], center: f64, radius: f64) -> String {
    transcript_window_within(words, center, radius, f64::INFINITY)
}

/// Same as [`transcript_window`] with the window also clamped to `duration`.
pub fn transcript_window_within(
    words: &[TimedWord],
    center: f64,
    radius: f64,
    duration: f64,
) -> String {
    let lo = (center - radius).max(0.0);
    let hi = (center + radius).min(duration);
    let mut hits: Vec<&TimedWord> = words
        .iter()
        .filter(|w| w.start <= hi && w.end >= lo)
        .collect();
    hits.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then_with(|| a.text.cmp(&b.text))
    });
    hits.iter()
        .map(|w| w.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn ends_sentence(token: &str) -> bool {
    let stripped = token
        .trim()
        .trim_end_matches(['"', '\'', ')', ']', '»', '”', '’']);
    stripped.ends_with(['.', '?', '!'])
}

/// Splits time-sorted words into sentences after tokens ending in `.`, `?` or `!`.
/// Trailing unterminated words form a final sentence.
pub fn build_sentence_index(words: &[TimedWord]) -> SentenceIndex {
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut current: Vec<&TimedWord> = Vec::new();

    let flush = |current: &mut Vec<&TimedWord>, sentences: &mut Vec<Sentence>| {
        if current.is_empty() {
            return;
        }
        let text = current
            .iter()
            .map(|w| w.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let start = current[0].start;
        let end = current.iter().map(|w| w.end).fold(start, f64::max);
        sentences.push(Sentence { text, start, end });
        current.clear();
    };

    for word in words {
        current.push(word);
        if ends_sentence(&word.text) {
            flush(&mut current, &mut sentences);
        }
    }
    flush(&mut current, &mut sentences);

    // Overlapping word timings at a boundary would make sentences overlap;
    // the earlier sentence yields.
    for i in 1..sentences.len() {
        let next_start = sentences[i].start;
        let prev = &mut sentences[i - 1];
        if prev.end > next_start {
            prev.end = next_start.max(prev.start);
        }
    }
    SentenceIndex { sentences }
}

/// Reads a line-delimited timed-word file (`{"text":..,"start":..,"end":..}` per line).
pub fn read_timed_words(path: &Path) -> Result<Vec<TimedWord>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut words = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let word: TimedWord = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !(word.start <= word.end) || word.start < 0.0 {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("bad timing [{}, {}]", word.start, word.end),
            });
        }
        words.push(word);
    }
    Ok(words)
}

pub fn write_timed_words(path: &Path, words: &[TimedWord]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for w in words {
        serde_json::to_writer(&mut out, w).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Runs an external command template once per timestamp to pull stills out
/// of a video. Placeholders `{input}`, `{timestamp}` and `{output}` are
/// substituted per argument, so paths containing spaces stay intact.
#[derive(Debug, Clone)]
pub struct FrameExtractor {
    pub command: Vec<String>,
    pub cache_dir: PathBuf,
}

impl FrameExtractor {
    pub const DEFAULT_COMMAND: &'static str =
        "ffmpeg -nostdin -loglevel error -y -ss {timestamp} -i {input} -frames:v 1 {output}";

    pub fn new(template: &str, cache_dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let command: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        if command.is_empty() {
            return Err(IngestError::InvalidArgument(
                "empty frame extraction command".into(),
            ));
        }
        if !command.iter().any(|a| a.contains("{output}")) {
            return Err(IngestError::InvalidArgument(
                "frame extraction command must reference {output}".into(),
            ));
        }
        Ok(Self {
            command,
            cache_dir: cache_dir.into(),
        })
    }

    pub fn output_path(&self, timestamp: f64) -> PathBuf {
        self.cache_dir
            .join(format!("frame_{:010.3}.jpg", timestamp))
    }

    pub fn extract_frames(
        &self,
        source: &Path,
        timestamps: &[f64],
    ) -> Result<Vec<FrameRef>, IngestError> {
        if timestamps.is_empty() {
            return Ok(Vec::new());
        }
        fs::metadata(source)
            .and_then(|m| {
                if m.is_file() {
                    Ok(())
                } else {
                    Err(std::io::Error::other("not a regular file"))
                }
            })
            .map_err(|e| IngestError::Unreadable {
                path: source.to_path_buf(),
                reason: e.to_string(),
            })?;
        fs::create_dir_all(&self.cache_dir)?;

        let mut frames = Vec::with_capacity(timestamps.len());
        for &t in timestamps {
            let output = self.output_path(t);
            let args: Vec<String> = self
                .command
                .iter()
                .map(|a| {
                    a.replace("{input}", &source.to_string_lossy())
                        .replace("{timestamp}", &format_seconds(t))
                        .replace("{output}", &output.to_string_lossy())
                })
                .collect();
            debug!(?args, "extracting frame");
            let result = Command::new(&args[0]).args(&args[1..]).output();
            let out = result.map_err(|e| IngestError::Tool {
                timestamp: t,
                diagnostics: format!("{}: {e}", args[0]),
            })?;
            if !out.status.success() {
                return Err(IngestError::Tool {
                    timestamp: t,
                    diagnostics: format!(
                        "{} exited with {}: {}",
                        args[0],
                        out.status,
                        String::from_utf8_lossy(&out.stderr).trim()
                    ),
                });
            }
            if !output.is_file() {
                return Err(IngestError::Tool {
                    timestamp: t,
                    diagnostics: format!("{} produced no file", output.display()),
                });
            }
            frames.push(FrameRef {
                timestamp: t,
                image_ref: output,
            });
        }
        Ok(frames)
    }
}

/// Runs a probe command (with `{input}`) whose stdout is the duration in seconds.
pub fn probe_duration(template: &str, source: &Path) -> Result<f64, IngestError> {
    let args: Vec<String> = template
        .split_whitespace()
        .map(|a| a.replace("{input}", &source.to_string_lossy()))
        .collect();
    let Some(program) = args.first() else {
        return Err(IngestError::InvalidArgument("empty probe command".into()));
    };
    let out = Command::new(program)
        .args(&args[1..])
        .output()
        .map_err(|e| IngestError::Unreadable {
            path: source.to_path_buf(),
            reason: format!("{program}: {e}"),
        })?;
    let text = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() {
        return Err(IngestError::Unreadable {
            path: source.to_path_buf(),
            reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|d| *d >= 0.0 && d.is_finite())
        .ok_or_else(|| IngestError::Unreadable {
            path: source.to_path_buf(),
            reason: format!("probe printed {:?}, expected seconds", text.trim()),
        })
}
