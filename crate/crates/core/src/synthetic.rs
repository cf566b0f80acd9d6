//! A scripted 60 s "video" for demos, tests and benchmarks: per-scene
//! captions stand in for frames and a word-timed transcript for speech.
//!
//! Frames are tiny text files holding the scene caption, which the
//! rule-based fake provider reads back as the frame's content.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::ingest::{sample_frame_timestamps, FrameRef, TimedWord, VideoMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub start: f64,
    pub end: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub meta: VideoMeta,
    pub scenes: Vec<Scene>,
    pub words: Vec<TimedWord>,
}

const SCENES: &[(f64, f64, &str)] = &[
    (0.0, 9.0, "a host waving in a studio"),
    (9.0, 21.0, "a battery charging chart"),
    (21.0, 30.0, "a camera lens close-up"),
    (30.0, 33.0, "a battery icon on the lock screen"),
    (33.0, 45.0, "a person holding the phone outdoors"),
    (45.0, 54.0, "a battery drain test graph"),
    (54.0, 60.0, "the host saying goodbye"),
];

const SPEECH: &[(f64, f64, &str)] = &[
    (0.5, 4.0, "Welcome back to the channel."),
    (4.0, 8.0, "Today we review a new phone."),
    (8.0, 14.0, "It charges to full in forty minutes."),
    (14.0, 20.0, "That is fast for this class."),
    (21.5, 25.0, "The camera has three lenses."),
    (25.0, 29.5, "Low light photos look clean."),
    (34.0, 39.0, "Outdoors the screen stays bright."),
    (39.0, 44.0, "The speakers are loud and clear."),
    (45.5, 52.5, "In our drain test it lasted two full days."),
    (55.0, 59.0, "Thanks for watching, see you next time."),
];

fn spread(text: &str, start: f64, end: f64) -> Vec<TimedWord> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let step = (end - start) / tokens.len() as f64;
    tokens
        .iter()
        .enumerate()
        .map(|(i, w)| TimedWord::new(*w, start + i as f64 * step, start + (i + 1) as f64 * step))
        .collect()
}

/// The 60 s phone review used throughout the tests.
pub fn phone_review() -> SyntheticVideo {
    SyntheticVideo {
        meta: VideoMeta::new("phone-review", "Phone review", 60.0, 3.0)
            .expect("valid synthetic meta"),
        scenes: SCENES
            .iter()
            .map(|&(start, end, caption)| Scene {
                start,
                end,
                caption: caption.to_string(),
            })
            .collect(),
        words: SPEECH.iter().flat_map(|&(s, e, t)| spread(t, s, e)).collect(),
    }
}

impl SyntheticVideo {
    pub fn caption_at(&self, t: f64) -> &str {
        self.scenes
            .iter()
            .find(|s| s.start <= t && t < s.end)
            .or(self.scenes.last())
            .map_or("", |s| s.caption.as_str())
    }

    /// Writes one caption file per sampled frame into `dir`.
    pub fn write_frames(&self, dir: &Path) -> std::io::Result<Vec<FrameRef>> {
        fs::create_dir_all(dir)?;
        sample_frame_timestamps(self.meta.duration, self.meta.frame_interval)
            .unwrap_or_default()
            .into_iter()
            .map(|t| {
                let image_ref = dir.join(format!("frame_{t:010.3}.txt"));
                fs::write(&image_ref, self.caption_at(t))?;
                Ok(FrameRef {
                    timestamp: t,
                    image_ref,
                })
            })
            .collect()
    }

    /// Writes a caption track (`start end caption` per line) usable as the
    /// "source video" of a shell-based frame tool.
    pub fn write_caption_track(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        for s in &self.scenes {
            writeln!(f, "{} {} {}", s.start, s.end, s.caption)?;
        }
        Ok(())
    }
}
