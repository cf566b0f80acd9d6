//! Provider-agnostic access to vision-language completion, speech
//! transcription and speech synthesis, with prompt templating, a context
//! budget check, retries, a per-capability concurrency cap and an archive of
//! raw responses.

mod fake;
mod http;
mod template;

pub use fake::{FakeProvider, FakeReply};
pub use http::{HttpProvider, HttpSettings};
pub use template::{names, render_prompt, PromptTemplate, TemplateError, TemplateSet};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::ingest::TimedWord;

/// Characters per token used to estimate prompt size.
pub const CHARS_PER_TOKEN: usize = 4;
/// Token cost charged per attached image.
pub const IMAGE_TOKEN_ESTIMATE: usize = 765;
/// Default input context window, in tokens.
pub const DEFAULT_CONTEXT_BUDGET: usize = 128_000;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, rate limits, server errors.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    /// The fake provider has no script entry or rule for the request.
    #[error("fake provider has no response for {0}")]
    FakeMiss(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("request needs ~{estimated} tokens, budget is {budget}")]
    Budget { estimated: usize, budget: usize },
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no {0:?} provider configured")]
    NotConfigured(Capability),
}

impl GatewayError {
    pub fn is_fake_miss(&self) -> bool {
        matches!(
            self,
            GatewayError::Provider {
                source: ProviderError::FakeMiss(_),
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    VisionLanguage,
    Transcription,
    Synthesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_secs: f64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_secs: 1.0,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff_secs: 0.0,
            multiplier: 1.0,
        }
    }

    fn backoff(&self, failed_attempts: u32) -> Duration {
        let secs = self.initial_backoff_secs
            * self.multiplier.powi(failed_attempts.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }
}

/// Settings for one capability's provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderProfile {
    pub capability: Capability,
    pub retry: RetryPolicy,
    pub timeout_secs: f64,
    pub max_concurrency: usize,
    pub context_budget_tokens: usize,
}

impl ProviderProfile {
    pub fn new(capability: Capability) -> Self {
        Self {
            capability,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry.max_attempts < 1 {
            return Err(GatewayError::InvalidArgument(
                "retry.max_attempts must be at least 1".into(),
            ));
        }
        if self.max_concurrency < 1 || !(self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidArgument(
                "max_concurrency and timeout_secs must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ProviderProfile {
    fn default() -> Self {
        Self {
            capability: Capability::VisionLanguage,
            retry: RetryPolicy::default(),
            timeout_secs: 120.0,
            max_concurrency: 4,
            context_budget_tokens: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

/// A template invocation: which template, what to bind, which images to attach.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template: String,
    pub bindings: BTreeMap<String, String>,
    pub images: Vec<PathBuf>,
}

impl CompletionRequest {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            ..Self::default()
        }
    }

    pub fn bind(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.bindings.insert(key.into(), value.into());
        self
    }

    pub fn image(mut self, path: impl Into<PathBuf>) -> Self {
        self.images.push(path.into());
        self
    }

    /// Template name plus a hash of the bindings and image refs.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.template.as_bytes());
        hasher.update([0]);
        for (k, v) in &self.bindings {
            hasher.update(k.as_bytes());
            hasher.update([0]);
            hasher.update(v.as_bytes());
            hasher.update([0]);
        }
        for img in &self.images {
            hasher.update(img.to_string_lossy().as_bytes());
            hasher.update([0]);
        }
        format!("{}:{}", self.template, hex::encode(&hasher.finalize()[..8]))
    }
}

/// What a completion provider actually receives.
#[derive(Debug, Clone)]
pub struct RenderedRequest {
    pub request: CompletionRequest,
    pub prompt: String,
}

pub fn estimate_tokens(prompt: &str, images: usize) -> usize {
    prompt.chars().count().div_ceil(CHARS_PER_TOKEN) + images * IMAGE_TOKEN_ESTIMATE
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedAudio {
    pub path: PathBuf,
    pub duration: f64,
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &RenderedRequest) -> Result<String, ProviderError>;
}

pub trait TranscriptionProvider: Send + Sync {
    fn transcribe(&self, audio: &Path) -> Result<Vec<TimedWord>, ProviderError>;
}

pub trait SpeechProvider: Send + Sync {
    /// Writes audio for `text` to `out` and returns its duration in seconds.
    fn synthesize(
        &self,
        text: &str,
        target_duration: Option<f64>,
        out: &Path,
    ) -> Result<f64, ProviderError>;
}

/// Counting semaphore bounding concurrent calls per capability.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

struct Lane<P: ?Sized> {
    provider: Arc<P>,
    profile: ProviderProfile,
    limiter: Limiter,
}

impl<P: ?Sized> Lane<P> {
    fn new(provider: Arc<P>, profile: ProviderProfile) -> Self {
        let limiter = Limiter::new(profile.max_concurrency);
        Self {
            provider,
            profile,
            limiter,
        }
    }
}

#[derive(Debug, Serialize)]
struct ArchiveRecord<'a> {
    fingerprint: &'a str,
    template: &'a str,
    attempt: u32,
    response: Option<&'a str>,
    error: Option<String>,
}

/// Shared entry point for all model calls. Cheap to share behind an `Arc`.
pub struct Gateway {
    templates: TemplateSet,
    vision: Option<Lane<dyn CompletionProvider>>,
    transcription: Option<Lane<dyn TranscriptionProvider>>,
    synthesis: Option<Lane<dyn SpeechProvider>>,
    archive: Option<Mutex<File>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("vision", &self.vision.as_ref().map(|l| &l.profile))
            .field("transcription", &self.transcription.as_ref().map(|l| &l.profile))
            .field("synthesis", &self.synthesis.as_ref().map(|l| &l.profile))
            .finish()
    }
}

impl Gateway {
    pub fn new(templates: TemplateSet) -> Self {
        Self {
            templates,
            vision: None,
            transcription: None,
            synthesis: None,
            archive: None,
        }
    }

    /// A gateway whose three capabilities are all served by `fake`, with
    /// immediate retries.
    pub fn fake(fake: FakeProvider) -> Self {
        let fake = Arc::new(fake);
        let profile = |capability| ProviderProfile {
            capability,
            retry: RetryPolicy::immediate(3),
            ..ProviderProfile::default()
        };
        Self::new(TemplateSet::builtin())
            .with_vision(fake.clone(), profile(Capability::VisionLanguage))
            .with_transcription(fake.clone(), profile(Capability::Transcription))
            .with_synthesis(fake, profile(Capability::Synthesis))
    }

    pub fn with_vision(
        mut self,
        provider: Arc<dyn CompletionProvider>,
        profile: ProviderProfile,
    ) -> Self {
        self.vision = Some(Lane::new(provider, profile));
        self
    }

    pub fn with_transcription(
        mut self,
        provider: Arc<dyn TranscriptionProvider>,
        profile: ProviderProfile,
    ) -> Self {
        self.transcription = Some(Lane::new(provider, profile));
        self
    }

    pub fn with_synthesis(
        mut self,
        provider: Arc<dyn SpeechProvider>,
        profile: ProviderProfile,
    ) -> Self {
        self.synthesis = Some(Lane::new(provider, profile));
        self
    }

    /// Appends every raw provider response to a line-delimited archive file.
    pub fn with_archive(mut self, path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.archive = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn vision_profile(&self) -> Option<&ProviderProfile> {
        self.vision.as_ref().map(|l| &l.profile)
    }

    pub fn render(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let template = self.templates.get(&request.template)?;
        Ok(render_prompt(template, &request.bindings)?)
    }

    fn archive(&self, record: ArchiveRecord<'_>) {
        if let Some(file) = &self.archive {
            let mut file = file.lock().unwrap();
            let line = serde_json::to_string(&record).unwrap_or_default();
            if let Err(e) = writeln!(file, "{line}") {
                warn!("cannot append to response archive: {e}");
            }
        }
    }

    /// Renders, checks the context budget, then calls the vision-language
    /// provider with retries.
    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let lane = self
            .vision
            .as_ref()
            .ok_or(GatewayError::NotConfigured(Capability::VisionLanguage))?;
        let prompt = self.render(request)?;
        let estimated = estimate_tokens(&prompt, request.images.len());
        if estimated > lane.profile.context_budget_tokens {
            return Err(GatewayError::Budget {
                estimated,
                budget: lane.profile.context_budget_tokens,
            });
        }
        let fingerprint = request.fingerprint();
        let rendered = RenderedRequest {
            request: request.clone(),
            prompt,
        };
        let (text, attempts) = with_retries(&lane.profile, &fingerprint, |attempt| {
            let result = {
                let _permit = lane.limiter.acquire();
                lane.provider.complete(&rendered)
            };
            self.archive(ArchiveRecord {
                fingerprint: &fingerprint,
                template: &request.template,
                attempt,
                response: result.as_ref().ok().map(String::as_str),
                error: result.as_ref().err().map(ToString::to_string),
            });
            result
        })?;
        Ok(Completion {
            text,
            attempts,
            fingerprint,
        })
    }

    pub fn transcribe(&self, audio: &Path) -> Result<Vec<TimedWord>, GatewayError> {
        let lane = self
            .transcription
            .as_ref()
            .ok_or(GatewayError::NotConfigured(Capability::Transcription))?;
        let key = audio.display().to_string();
        let (mut words, _) = with_retries(&lane.profile, &key, |_| {
            let _permit = lane.limiter.acquire();
            lane.provider.transcribe(audio)
        })?;
        words.retain(|w| w.start >= 0.0 && w.end >= w.start);
        words.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        Ok(words)
    }

    pub fn synthesize(
        &self,
        text: &str,
        target_duration: Option<f64>,
        out: &Path,
    ) -> Result<SynthesizedAudio, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidArgument(
                "cannot synthesize empty text".into(),
            ));
        }
        if let Some(t) = target_duration {
            if !(t > 0.0) {
                return Err(GatewayError::InvalidArgument(format!(
                    "target duration must be positive, got {t}"
                )));
            }
        }
        let lane = self
            .synthesis
            .as_ref()
            .ok_or(GatewayError::NotConfigured(Capability::Synthesis))?;
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::Provider {
                attempts: 0,
                source: ProviderError::Fatal(e.to_string()),
            })?;
        }
        let key = out.display().to_string();
        let (duration, _) = with_retries(&lane.profile, &key, |_| {
            let _permit = lane.limiter.acquire();
            lane.provider.synthesize(text, target_duration, out)
        })?;
        if !(duration > 0.0) {
            return Err(GatewayError::Provider {
                attempts: 1,
                source: ProviderError::Fatal(format!("non-positive audio duration {duration}")),
            });
        }
        Ok(SynthesizedAudio {
            path: out.to_path_buf(),
            duration,
        })
    }
}

fn with_retries<T>(
    profile: &ProviderProfile,
    key: &str,
    mut call: impl FnMut(u32) -> Result<T, ProviderError>,
) -> Result<(T, u32), GatewayError> {
    let max = profile.retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match call(attempt) {
            Ok(v) => {
                debug!(key, attempt, "provider call succeeded");
                return Ok((v, attempt));
            }
            Err(ProviderError::Transient(msg)) if attempt < max => {
                let wait = profile.retry.backoff(attempt);
                warn!(key, attempt, ?wait, "provider call failed, retrying: {msg}");
                std::thread::sleep(wait);
            }
            Err(source) => {
                return Err(GatewayError::Provider {
                    attempts: attempt,
                    source,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_gateway(fake: FakeProvider) -> Gateway {
        Gateway::fake(fake)
    }

    fn retrieval_request() -> CompletionRequest {
        CompletionRequest::new(names::RETRIEVE_FRAMES)
            .bind("video_title", "Demo")
            .bind("user_interest", "battery")
            .bind("frame_voice_list", "3 | frame: battery")
    }

    #[test]
    fn scripted_echo() {
        let req = retrieval_request();
        let fake = FakeProvider::new().script(&req, vec![FakeReply::text("[3, 6]")]);
        let gw = fake_gateway(fake);
        let c = gw.complete(&req).unwrap();
        assert_eq!(c.text, "[3, 6]");
        assert_eq!(c.attempts, 1);
    }

    #[test]
    fn retries_until_success() {
        let req = retrieval_request();
        let fake = FakeProvider::new().script(
            &req,
            vec![
                FakeReply::transient("boom"),
                FakeReply::transient("boom"),
                FakeReply::text("[3]"),
            ],
        );
        let gw = fake_gateway(fake);
        let c = gw.complete(&req).unwrap();
        assert_eq!((c.text.as_str(), c.attempts), ("[3]", 3));
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let req = retrieval_request();
        let fake = FakeProvider::new().script(&req, vec![FakeReply::transient("down")]);
        let gw = fake_gateway(fake.clone());
        match gw.complete(&req) {
            Err(GatewayError::Provider { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(fake.calls(), 3);
    }

    #[test]
    fn over_budget_makes_no_call() {
        let fake = FakeProvider::new().with_default_reply("[]");
        let gw = Gateway::new(TemplateSet::builtin()).with_vision(
            Arc::new(fake.clone()),
            ProviderProfile {
                context_budget_tokens: 10,
                ..ProviderProfile::default()
            },
        );
        assert!(matches!(
            gw.complete(&retrieval_request()),
            Err(GatewayError::Budget { .. })
        ));
        assert_eq!(fake.calls(), 0);
    }

    #[test]
    fn missing_binding_fails_before_call() {
        let fake = FakeProvider::new().with_default_reply("[]");
        let gw = fake_gateway(fake.clone());
        let req = CompletionRequest::new(names::NARRATIVE).bind("user_interest", "x");
        assert!(matches!(
            gw.complete(&req),
            Err(GatewayError::Template(TemplateError::Missing(ref s))) if s == "segments"
        ));
        assert_eq!(fake.calls(), 0);
    }

    #[test]
    fn unscripted_is_a_loud_miss() {
        let gw = fake_gateway(FakeProvider::new());
        let err = gw.complete(&retrieval_request()).unwrap_err();
        assert!(err.is_fake_miss(), "{err}");
    }

    #[test]
    fn fingerprints_are_stable_and_distinct() {
        let a = retrieval_request();
        let b = retrieval_request().bind("user_interest", "camera");
        assert_eq!(a.fingerprint(), retrieval_request().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert!(a.fingerprint().starts_with("retrieve_frames:"));
    }

    #[test]
    fn synthesis_contract() {
        let dir = tempfile::tempdir().unwrap();
        let gw = fake_gateway(FakeProvider::new());
        let out = dir.path().join("a.json");
        let audio = gw.synthesize("one two three four five", None, &out).unwrap();
        assert_eq!(audio.duration, 5.0 * 0.4);
        assert!(out.is_file());
        let exact = gw.synthesize("short", Some(10.0), &out).unwrap();
        assert_eq!(exact.duration, 10.0);
        assert!(matches!(
            gw.synthesize("  ", None, &out),
            Err(GatewayError::InvalidArgument(_))
        ));
    }

    #[test]
    fn transcription_contract() {
        let dir = tempfile::tempdir().unwrap();
        let words = vec![TimedWord::new("b", 1.0, 2.0), TimedWord::new("a", 0.0, 1.0)];
        let audio = dir.path().join("talk.wav");
        let silent = dir.path().join("silent.wav");
        let fake = FakeProvider::new()
            .with_transcript(&audio, words.clone())
            .with_transcript(&silent, vec![]);
        let gw = fake_gateway(fake);
        let got = gw.transcribe(&audio).unwrap();
        assert_eq!(got[0].text, "a");
        assert!(gw.transcribe(&silent).unwrap().is_empty());
        assert!(matches!(
            gw.transcribe(&dir.path().join("nope.wav")),
            Err(GatewayError::Provider { .. })
        ));
    }

    #[test]
    fn archive_records_responses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let req = retrieval_request();
        let fake = FakeProvider::new().script(&req, vec![FakeReply::text("[3]")]);
        let gw = fake_gateway(fake).with_archive(&path).unwrap();
        gw.complete(&req).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"response\":\"[3]\""));
    }

    #[test]
    fn concurrency_cap_is_enforced() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Slow {
            live: AtomicUsize,
            peak: AtomicUsize,
        }
        impl CompletionProvider for Slow {
            fn complete(&self, _: &RenderedRequest) -> Result<String, ProviderError> {
                let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.live.fetch_sub(1, Ordering::SeqCst);
                Ok("[]".into())
            }
        }
        let slow = Arc::new(Slow {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(TemplateSet::builtin()).with_vision(
            slow.clone(),
            ProviderProfile {
                max_concurrency: 2,
                ..ProviderProfile::default()
            },
        );
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.complete(&retrieval_request()).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
