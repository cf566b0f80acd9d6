//! OpenAI-compatible HTTP provider: chat completions with inline images,
//! word-timestamped transcription, and text-to-speech.

use std::fs;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{multipart, Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    CompletionProvider, ProviderError, RenderedRequest, SpeechProvider, TranscriptionProvider,
};
use crate::ingest::{probe_duration, TimedWord};

/// Typical speaking rate used to pick a TTS speed and to estimate duration
/// when no probe command is configured.
const WORDS_PER_SECOND: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// TTS voice; ignored by the other capabilities.
    pub voice: String,
    /// Command printing an audio file's duration in seconds (`{input}` placeholder).
    pub duration_probe: Option<String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            voice: "alloy".into(),
            duration_probe: None,
        }
    }
}

pub struct HttpProvider {
    settings: HttpSettings,
    client: Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.settings.base_url)
            .field("model", &self.settings.model)
            .finish()
    }
}

fn classify(err: reqwest::Error) -> ProviderError {
    if err.is_timeout() || err.is_connect() {
        ProviderError::Transient(err.to_string())
    } else {
        ProviderError::Fatal(err.to_string())
    }
}

fn check(resp: Response) -> Result<Response, ProviderError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    let msg = format!("HTTP {status}: {}", body.chars().take(500).collect::<String>());
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        Err(ProviderError::Transient(msg))
    } else {
        Err(ProviderError::Fatal(msg))
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    }
}

impl HttpProvider {
    pub fn new(settings: HttpSettings, timeout_secs: f64) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(timeout_secs))
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(Self { settings, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn key(&self) -> Result<String, ProviderError> {
        std::env::var(&self.settings.api_key_env).map_err(|_| {
            ProviderError::Fatal(format!(
                "environment variable {} is not set",
                self.settings.api_key_env
            ))
        })
    }

    /// Builds the chat-completions body; images go inline as base64 data URLs.
    pub fn chat_body(&self, request: &RenderedRequest) -> Result<Value, ProviderError> {
        let mut content = vec![json!({ "type": "text", "text": request.prompt })];
        for img in &request.request.images {
            let bytes = fs::read(img).map_err(|e| {
                ProviderError::Fatal(format!("cannot read image {}: {e}", img.display()))
            })?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{};base64,{b64}", mime_for(img)) }
            }));
        }
        Ok(json!({
            "model": self.settings.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": content }],
        }))
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, request: &RenderedRequest) -> Result<String, ProviderError> {
        let body = self.chat_body(request)?;
        let resp = self
            .client
            .post(self.url("chat/completions"))
            .bearer_auth(self.key()?)
            .json(&body)
            .send()
            .map_err(classify)?;
        let value: Value = check(resp)?.json().map_err(classify)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Fatal(format!("no message content in {value}")))
    }
}

#[derive(Deserialize)]
struct VerboseTranscript {
    #[serde(default)]
    words: Vec<WireWord>,
}

#[derive(Deserialize)]
struct WireWord {
    word: String,
    start: f64,
    end: f64,
}

impl TranscriptionProvider for HttpProvider {
    fn transcribe(&self, audio: &Path) -> Result<Vec<TimedWord>, ProviderError> {
        let bytes = fs::read(audio).map_err(|e| {
            ProviderError::Fatal(format!("cannot read audio {}: {e}", audio.display()))
        })?;
        let name = audio
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "audio".into());
        let form = multipart::Form::new()
            .text("model", self.settings.model.clone())
            .text("response_format", "verbose_json")
            .text("timestamp_granularities[]", "word")
            .part("file", multipart::Part::bytes(bytes).file_name(name));
        let resp = self
            .client
            .post(self.url("audio/transcriptions"))
            .bearer_auth(self.key()?)
            .multipart(form)
            .send()
            .map_err(classify)?;
        let parsed: VerboseTranscript = check(resp)?.json().map_err(classify)?;
        Ok(parsed
            .words
            .into_iter()
            .map(|w| TimedWord::new(w.word, w.start, w.end))
            .collect())
    }
}

impl SpeechProvider for HttpProvider {
    fn synthesize(
        &self,
        text: &str,
        target_duration: Option<f64>,
        out: &Path,
    ) -> Result<f64, ProviderError> {
        let natural = text.split_whitespace().count() as f64 / WORDS_PER_SECOND;
        let speed = target_duration
            .map(|t| (natural / t).clamp(0.25, 4.0))
            .unwrap_or(1.0);
        let resp = self
            .client
            .post(self.url("audio/speech"))
            .bearer_auth(self.key()?)
            .json(&json!({
                "model": self.settings.model,
                "voice": self.settings.voice,
                "input": text,
                "speed": speed,
            }))
            .send()
            .map_err(classify)?;
        let bytes = check(resp)?.bytes().map_err(classify)?;
        fs::write(out, &bytes).map_err(|e| ProviderError::Fatal(e.to_string()))?;
        match &self.settings.duration_probe {
            Some(cmd) => probe_duration(cmd, out).map_err(|e| ProviderError::Fatal(e.to_string())),
            None => Ok(natural / speed),
        }
    }
}
