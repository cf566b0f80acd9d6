//! Service and CLI configuration: a TOML file plus `CLIPWEAVE_*` environment
//! overrides, validated before use.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{Capability, HttpSettings, ProviderProfile, RetryPolicy};
use crate::ingest::{FrameExtractor, DEFAULT_FRAME_INTERVAL, DEFAULT_WINDOW_RADIUS};
use crate::narrative::DEFAULT_CARD_DURATION;
use crate::plan::RateBounds;
use crate::retrieval::DEFAULT_BATCH_SIZE;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("environment variable {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic offline provider.
    Fake,
    /// OpenAI-compatible HTTP endpoints.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub vision: HttpSettings,
    pub transcription: HttpSettings,
    pub synthesis: HttpSettings,
    pub max_attempts: u32,
    pub initial_backoff_secs: f64,
    pub timeout_secs: f64,
    pub max_concurrency: usize,
    pub context_budget_tokens: usize,
    /// Appends every raw response to `<root>/archive.jsonl`.
    pub archive: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        let base = ProviderProfile::new(Capability::VisionLanguage);
        Self {
            kind: ProviderKind::Fake,
            vision: HttpSettings::default(),
            transcription: HttpSettings {
                model: "whisper-1".into(),
                ..HttpSettings::default()
            },
            synthesis: HttpSettings {
                model: "tts-1".into(),
                ..HttpSettings::default()
            },
            max_attempts: base.retry.max_attempts,
            initial_backoff_secs: base.retry.initial_backoff_secs,
            timeout_secs: base.timeout_secs,
            max_concurrency: base.max_concurrency,
            context_budget_tokens: base.context_budget_tokens,
            archive: false,
        }
    }
}

impl ProviderConfig {
    pub fn profile(&self, capability: Capability) -> ProviderProfile {
        ProviderProfile {
            capability,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                initial_backoff_secs: self.initial_backoff_secs,
                ..RetryPolicy::default()
            },
            timeout_secs: self.timeout_secs,
            max_concurrency: self.max_concurrency,
            context_budget_tokens: self.context_budget_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    /// Frame grab command with `{input}`, `{timestamp}`, `{output}`.
    pub frame_command: String,
    /// Prints a media file's duration in seconds; `{input}`.
    pub probe_command: String,
    /// Extracts the audio track for transcription; `{input}`, `{output}`.
    pub audio_command: String,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            frame_command: FrameExtractor::DEFAULT_COMMAND.into(),
            probe_command:
                "ffprobe -v error -show_entries format=duration -of default=nw=1:nk=1 {input}"
                    .into(),
            audio_command: "ffmpeg -nostdin -loglevel error -y -i {input} -vn -ac 1 -ar 16000 {output}"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Storage root holding `videos/`, `stores/`, `sessions/` and `audio/`.
    pub root: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub frame_interval: f64,
    pub window_radius: f64,
    pub batch_size: usize,
    pub title_cards: bool,
    pub card_duration: f64,
    pub rate_bounds: RateBounds,
    pub parallelism: usize,
    pub provider: ProviderConfig,
    pub tools: ToolConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            root: PathBuf::from("clipweave-data"),
            templates_dir: None,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            window_radius: DEFAULT_WINDOW_RADIUS,
            batch_size: DEFAULT_BATCH_SIZE,
            title_cards: true,
            card_duration: DEFAULT_CARD_DURATION,
            rate_bounds: RateBounds::default(),
            parallelism: 4,
            provider: ProviderConfig::default(),
            tools: ToolConfig::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var: var.into(),
        reason: e.to_string(),
    })
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Reads `path` if given (defaults otherwise), applies the process
    /// environment and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    /// Overrides from `CLIPWEAVE_ROOT`, `CLIPWEAVE_PROVIDER` (`fake`|`http`),
    /// `CLIPWEAVE_BASE_URL`, `CLIPWEAVE_MODEL`, `CLIPWEAVE_BATCH_SIZE`,
    /// `CLIPWEAVE_PARALLELISM` and `CLIPWEAVE_FRAME_INTERVAL`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("CLIPWEAVE_ROOT") {
            self.root = PathBuf::from(v);
        }
        if let Some(v) = lookup("CLIPWEAVE_PROVIDER") {
            self.provider.kind = match v.trim() {
                "fake" => ProviderKind::Fake,
                "http" => ProviderKind::Http,
                other => {
                    return Err(ConfigError::Env {
                        var: "CLIPWEAVE_PROVIDER".into(),
                        reason: format!("expected fake or http, got {other:?}"),
                    })
                }
            };
        }
        if let Some(v) = lookup("CLIPWEAVE_BASE_URL") {
            for s in [
                &mut self.provider.vision,
                &mut self.provider.transcription,
                &mut self.provider.synthesis,
            ] {
                s.base_url = v.clone();
            }
        }
        if let Some(v) = lookup("CLIPWEAVE_MODEL") {
            self.provider.vision.model = v;
        }
        if let Some(v) = lookup("CLIPWEAVE_BATCH_SIZE") {
            self.batch_size = parse_env("CLIPWEAVE_BATCH_SIZE", &v)?;
        }
        if let Some(v) = lookup("CLIPWEAVE_PARALLELISM") {
            self.parallelism = parse_env("CLIPWEAVE_PARALLELISM", &v)?;
        }
        if let Some(v) = lookup("CLIPWEAVE_FRAME_INTERVAL") {
            self.frame_interval = parse_env("CLIPWEAVE_FRAME_INTERVAL", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("frame_interval", self.frame_interval),
            ("window_radius", self.window_radius),
            ("card_duration", self.card_duration),
            ("provider.timeout_secs", self.provider.timeout_secs),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("parallelism", self.parallelism),
            ("provider.max_concurrency", self.provider.max_concurrency),
            ("provider.context_budget_tokens", self.provider.context_budget_tokens),
            ("provider.max_attempts", self.provider.max_attempts as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.provider.initial_backoff_secs >= 0.0) {
            return Err(ConfigError::Invalid("provider.initial_backoff_secs must be >= 0".into()));
        }
        self.rate_bounds.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.root)
    }
}

/// On-disk layout under the storage root.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn videos(&self) -> PathBuf {
        self.root.join("videos")
    }

    pub fn stores(&self) -> PathBuf {
        self.root.join("stores")
    }

    pub fn sessions(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn audio(&self) -> PathBuf {
        self.root.join("audio")
    }

    pub fn frames(&self, video_id: &str) -> PathBuf {
        self.root.join("frames").join(video_id)
    }

    /// Registration record of a video (source path, title, duration).
    pub fn video_record(&self, video_id: &str) -> PathBuf {
        self.videos().join(format!("{video_id}.json"))
    }

    pub fn transcript(&self, video_id: &str) -> PathBuf {
        self.videos().join(format!("{video_id}.words.jsonl"))
    }

    pub fn store(&self, video_id: &str) -> PathBuf {
        self.stores().join(format!("{video_id}.jsonl"))
    }

    pub fn session(&self, session_id: &str) -> PathBuf {
        self.sessions().join(format!("{session_id}.json"))
    }

    pub fn create_all(&self) -> std::io::Result<()> {
        for d in [self.videos(), self.stores(), self.sessions(), self.audio()] {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn toml_and_env() {
        let text = r#"
            root = "/data"
            batch_size = 50
            [provider]
            kind = "http"
            max_concurrency = 2
            [rate_bounds]
            min = 0.8
            max = 1.2
        "#;
        let mut c = Config::from_toml(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.batch_size, 50);
        assert_eq!(c.provider.kind, ProviderKind::Http);
        assert_eq!(c.rate_bounds.min, 0.8);
        let env: HashMap<&str, &str> =
            [("CLIPWEAVE_BATCH_SIZE", "7"), ("CLIPWEAVE_PROVIDER", "fake")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.batch_size, 7);
        assert_eq!(c.provider.kind, ProviderKind::Fake);
        c.validate().unwrap();

        let env: HashMap<&str, &str> = [("CLIPWEAVE_BATCH_SIZE", "many")].into();
        assert!(c.apply_env(|k| env.get(k).map(|v| v.to_string())).is_err());
        assert!(Config::from_toml("bogus = 1", Path::new("c.toml")).is_err());
    }

    #[test]
    fn bounds_checked() {
        let bad = [
            Config { batch_size: 0, ..Config::default() },
            Config { rate_bounds: RateBounds { min: 1.1, max: 1.2 }, ..Config::default() },
            Config { card_duration: 0.0, ..Config::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
