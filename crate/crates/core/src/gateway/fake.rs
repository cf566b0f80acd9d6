//! Deterministic offline provider for tests and demos.
//!
//! Lookup order for a completion: a reply scripted for the exact request
//! fingerprint, then a reply scripted for the template, then a rule for the
//! template, then the default reply. Anything else is a [`ProviderError::FakeMiss`].
//!
//! Scripted replies are sequences: each call takes the next one and the last
//! repeats forever, so `[fail, fail, ok]` models a provider that recovers.
//!
//! [`FakeProvider::rule_based`] answers every pipeline template from its
//! bindings alone. Relevance is a case-insensitive substring match between
//! query terms and each frame line; other templates echo structure back in
//! the expected schema. Speech lasts 0.4 s per word unless a target duration
//! is requested, which is honoured exactly.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::template::names;
use super::{
    CompletionProvider, CompletionRequest, ProviderError, RenderedRequest, SpeechProvider,
    TranscriptionProvider,
};
use crate::ingest::{read_timed_words, TimedWord};
use crate::time::{format_seconds, truncate_words};

pub const FAKE_SECONDS_PER_WORD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub enum FakeReply {
    Text(String),
    Transient(String),
    Fatal(String),
}

impl FakeReply {
    pub fn text(s: impl Into<String>) -> Self {
        FakeReply::Text(s.into())
    }

    pub fn transient(s: impl Into<String>) -> Self {
        FakeReply::Transient(s.into())
    }

    pub fn fatal(s: impl Into<String>) -> Self {
        FakeReply::Fatal(s.into())
    }

    fn into_result(self) -> Result<String, ProviderError> {
        match self {
            FakeReply::Text(t) => Ok(t),
            FakeReply::Transient(e) => Err(ProviderError::Transient(e)),
            FakeReply::Fatal(e) => Err(ProviderError::Fatal(e)),
        }
    }
}

type Rule = Arc<dyn Fn(&RenderedRequest) -> Result<String, ProviderError> + Send + Sync>;

#[derive(Default)]
struct Inner {
    sequences: Mutex<HashMap<String, (Vec<FakeReply>, usize)>>,
    rules: HashMap<String, Rule>,
    default_reply: Option<String>,
    transcripts: HashMap<PathBuf, Vec<TimedWord>>,
    honor_target: bool,
    calls: AtomicUsize,
}

#[derive(Clone)]
pub struct FakeProvider {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for FakeProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FakeProvider")
            .field("rules", &self.inner.rules.keys().collect::<Vec<_>>())
            .field("calls", &self.calls())
            .finish()
    }
}

impl Default for FakeProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl FakeProvider {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Inner {
                honor_target: true,
                ..Inner::default()
            }),
        }
    }

    /// Rules for every pipeline template.
    pub fn rule_based() -> Self {
        Self::new()
            .rule(names::ANNOTATE_FRAME, annotate_rule)
            .rule(names::RETRIEVE_FRAMES, retrieve_rule)
            .rule(names::SUMMARIZE_SEGMENT, summarize_rule)
            .rule(names::NARRATIVE, narrative_rule)
            .rule(names::ORDER_SEGMENTS, order_rule)
            .rule(names::ASSIGN_CHUNKS, assign_rule)
            .rule(names::TITLE_CARD, title_card_rule)
    }

    fn inner_mut(&mut self) -> &mut Inner {
        Arc::get_mut(&mut self.inner).expect("configure the fake before sharing it")
    }

    pub fn script(mut self, request: &CompletionRequest, replies: Vec<FakeReply>) -> Self {
        let key = format!("fp:{}", request.fingerprint());
        self.inner_mut()
            .sequences
            .get_mut()
            .unwrap()
            .insert(key, (replies, 0));
        self
    }

    pub fn script_template(mut self, template: &str, replies: Vec<FakeReply>) -> Self {
        let key = format!("tpl:{template}");
        self.inner_mut()
            .sequences
            .get_mut()
            .unwrap()
            .insert(key, (replies, 0));
        self
    }

    pub fn rule<F>(mut self, template: &str, rule: F) -> Self
    where
        F: Fn(&RenderedRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        self.inner_mut()
            .rules
            .insert(template.to_string(), Arc::new(rule));
        self
    }

    pub fn with_default_reply(mut self, reply: impl Into<String>) -> Self {
        self.inner_mut().default_reply = Some(reply.into());
        self
    }

    pub fn with_transcript(mut self, audio: &Path, words: Vec<TimedWord>) -> Self {
        self.inner_mut()
            .transcripts
            .insert(audio.to_path_buf(), words);
        self
    }

    /// When false, requested durations are ignored and the word rule applies.
    pub fn honor_target_duration(mut self, honor: bool) -> Self {
        self.inner_mut().honor_target = honor;
        self
    }

    /// Completion calls served so far, including failures.
    pub fn calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    fn next_scripted(&self, key: &str) -> Option<FakeReply> {
        let mut seqs = self.inner.sequences.lock().unwrap();
        let (replies, cursor) = seqs.get_mut(key)?;
        let reply = replies.get(*cursor).or_else(|| replies.last())?.clone();
        *cursor += 1;
        Some(reply)
    }
}

impl CompletionProvider for FakeProvider {
    fn complete(&self, request: &RenderedRequest) -> Result<String, ProviderError> {
        self.inner.calls.fetch_add(1, Ordering::SeqCst);
        let req = &request.request;
        if let Some(r) = self.next_scripted(&format!("fp:{}", req.fingerprint())) {
            return r.into_result();
        }
        if let Some(r) = self.next_scripted(&format!("tpl:{}", req.template)) {
            return r.into_result();
        }
        if let Some(rule) = self.inner.rules.get(&req.template) {
            return rule(request);
        }
        if let Some(d) = &self.inner.default_reply {
            return Ok(d.clone());
        }
        Err(ProviderError::FakeMiss(req.fingerprint()))
    }
}

impl TranscriptionProvider for FakeProvider {
    fn transcribe(&self, audio: &Path) -> Result<Vec<TimedWord>, ProviderError> {
        if let Some(words) = self.inner.transcripts.get(audio) {
            return Ok(words.clone());
        }
        if !audio.is_file() {
            return Err(ProviderError::Fatal(format!(
                "cannot read audio {}",
                audio.display()
            )));
        }
        if audio.extension().is_some_and(|e| e == "jsonl") {
            return read_timed_words(audio).map_err(|e| ProviderError::Fatal(e.to_string()));
        }
        Err(ProviderError::FakeMiss(audio.display().to_string()))
    }
}

impl SpeechProvider for FakeProvider {
    fn synthesize(
        &self,
        text: &str,
        target_duration: Option<f64>,
        out: &Path,
    ) -> Result<f64, ProviderError> {
        let words = text.split_whitespace().count();
        let duration = match target_duration {
            Some(t) if self.inner.honor_target => t,
            _ => words as f64 * FAKE_SECONDS_PER_WORD,
        };
        let stub = json!({ "fake_speech": text, "duration": duration });
        fs::write(out, stub.to_string()).map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(duration)
    }
}

fn binding<'a>(req: &'a RenderedRequest, key: &str) -> Result<&'a str, ProviderError> {
    req.request
        .bindings
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| ProviderError::Fatal(format!("fake rule needs binding {key}")))
}

fn parse_json(text: &str) -> Result<Value, ProviderError> {
    serde_json::from_str(text).map_err(|e| ProviderError::Fatal(format!("fake rule: {e}")))
}

fn annotate_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let t = binding(req, "timestamp")?;
    let window = binding(req, "transcript_window")?;
    let mut parts = vec![format!("Frame at {t}s.")];
    // Generated test frames carry a short caption as their content.
    if let Some(caption) = req
        .request
        .images
        .first()
        .and_then(|p| fs::read(p).ok())
        .filter(|b| b.len() <= 200)
        .and_then(|b| String::from_utf8(b).ok())
    {
        parts.push(format!("Shows {}.", caption.trim()));
    }
    if window.trim().is_empty() {
        parts.push("No speech.".into());
    } else {
        parts.push(format!("Speaker: {window}"));
    }
    Ok(truncate_words(&parts.join(" "), 50))
}

const STOP_WORDS: &[&str] = &[
    "the", "and", "for", "about", "what", "how", "with", "does", "this", "that", "are", "is",
    "from", "into", "why", "who", "when", "which", "their", "there", "was",
];

pub(crate) fn query_terms(interest: &str) -> Vec<String> {
    interest
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 3 && !STOP_WORDS.contains(&t.as_str()))
        .collect()
}

fn retrieve_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let terms = query_terms(binding(req, "user_interest")?);
    let list = binding(req, "frame_voice_list")?;
    let hits: Vec<&str> = list
        .lines()
        .filter_map(|line| {
            let (ts, rest) = line.split_once(" | ")?;
            let rest = rest.to_lowercase();
            terms
                .iter()
                .any(|t| rest.contains(t.as_str()))
                .then_some(ts.trim())
        })
        .collect();
    Ok(format!("[{}]", hits.join(", ")))
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn num_field(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(0.0)
}

fn summarize_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let seg = parse_json(binding(req, "segment")?)?;
    let (start, end) = (num_field(&seg, "start"), num_field(&seg, "end"));
    let transcript = str_field(&seg, "transcript");
    let title = if transcript.trim().is_empty() {
        format!("Segment {}-{}", format_seconds(start), format_seconds(end))
    } else {
        truncate_words(transcript, 5)
            .trim_end_matches(['.', ',', '?', '!'])
            .to_string()
    };
    let source = if transcript.trim().is_empty() {
        seg.get("frame_descriptions")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(Value::as_str)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default()
    } else {
        transcript.to_string()
    };
    let summary = truncate_words(&source, 40);
    Ok(json!({ "title": title, "summary": summary }).to_string())
}

fn segments_binding(req: &RenderedRequest) -> Result<Vec<Value>, ProviderError> {
    match parse_json(binding(req, "segments")?)? {
        Value::Array(a) => Ok(a),
        other => Err(ProviderError::Fatal(format!(
            "fake rule expected a segment array, got {other}"
        ))),
    }
}

fn narrative_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let segments = segments_binding(req)?;
    let budget = (280 / segments.len().max(1)).max(3);
    let chunks: Vec<String> = segments
        .iter()
        .map(|s| {
            let mut source = str_field(s, "summary").to_string();
            if source.trim().is_empty() {
                source = str_field(s, "title").to_string();
            }
            let text = truncate_words(&source, budget);
            let text = text.trim_end_matches(['.', ',', '?', '!', ';', ':']);
            if text.is_empty() {
                "This part continues the story.".to_string()
            } else {
                format!("{text}.")
            }
        })
        .collect();
    let overall = chunks.join(" ");
    let chunk_values: Vec<Value> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| json!({ "chunk_id": i + 1, "narrative": c }))
        .collect();
    Ok(json!({ "overall_narrative": overall, "chunks": chunk_values }).to_string())
}

fn order_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let segments = segments_binding(req)?;
    let ordered: Vec<Value> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| json!({ "start": s["start"], "end": s["end"], "playback_order": i + 1 }))
        .collect();
    Ok(json!({ "segments": ordered }).to_string())
}

fn assign_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let segments = segments_binding(req)?;
    let chunks_doc = parse_json(binding(req, "overall_narrative")?)?;
    let chunks = chunks_doc
        .get("chunks")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let (n, c) = (segments.len(), chunks.len().max(1));
    let mut per_chunk: Vec<Vec<Value>> = vec![Vec::new(); chunks.len()];
    for (j, s) in segments.iter().enumerate() {
        let k = j * c / n.max(1);
        if let Some(slot) = per_chunk.get_mut(k) {
            slot.push(json!({ "start": s["start"], "end": s["end"] }));
        }
    }
    let out: Vec<Value> = chunks
        .iter()
        .zip(per_chunk)
        .map(|(ch, segs)| {
            json!({ "chunk_id": ch["chunk_id"], "narrative": ch["narrative"], "segments": segs })
        })
        .collect();
    Ok(json!({ "chunks": out }).to_string())
}

fn title_card_rule(req: &RenderedRequest) -> Result<String, ProviderError> {
    let next = parse_json(binding(req, "next_segment")?)?;
    let prev = binding(req, "previous_segment")?;
    let next_title = str_field(&next, "title");
    match serde_json::from_str::<Value>(prev) {
        Ok(p) if p.is_object() => Ok(format!(
            "That was {}. Next up: {}.",
            str_field(&p, "title"),
            next_title
        )),
        _ => Ok(format!("Coming up: {next_title}.")),
    }
}
