#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use clipweave_core::config::Config;
use clipweave_core::ingest::write_timed_words;
use clipweave_core::synthetic::phone_review;

/// A storage root plus a caption-track "video" and shell tools that read it.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub track: PathBuf,
    pub words: PathBuf,
    pub config_path: PathBuf,
}

const FRAME_TOOL: &str = r#"#!/bin/sh
# frame.sh TRACK TIMESTAMP OUTPUT: writes the caption shown at TIMESTAMP
awk -v t="$2" '{ if (t + 0 >= $1 + 0 && t + 0 < $2 + 0) { $1 = ""; $2 = ""; sub(/^ +/, ""); printf "%s", $0; exit } }' "$1" > "$3"
"#;

const PROBE_TOOL: &str = r#"#!/bin/sh
awk 'END { print $2 }' "$1"
"#;

pub const TRUTH: &str = r#"
video_id = "phone"
duration = 60
genre = "tech"

[[queries]]
query_id = "battery"
text = "battery life"
content_type = "conceptual"
query_type = "conceptual"
intervals = [[8, 21], [45, 54]]

[[queries]]
query_id = "camera"
text = "camera lens quality"
content_type = "conceptual"
query_type = "procedural"
intervals = [[21, 30]]
"#;

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let video = phone_review();
        let track = root.join("phone.track");
        video.write_caption_track(&track).unwrap();
        let words = root.join("phone.words.jsonl");
        write_timed_words(&words, &video.words).unwrap();
        fs::write(root.join("frame.sh"), FRAME_TOOL).unwrap();
        fs::write(root.join("probe.sh"), PROBE_TOOL).unwrap();
        fs::write(root.join("truth.toml"), TRUTH).unwrap();
        let config_path = root.join("clipweave.toml");
        fs::write(
            &config_path,
            format!(
                "root = {:?}\nparallelism = 2\n\n[provider]\nkind = \"fake\"\n\n[tools]\n\
                 frame_command = \"sh {} {{input}} {{timestamp}} {{output}}\"\n\
                 probe_command = \"sh {} {{input}}\"\n",
                root.join("data"),
                root.join("frame.sh").display(),
                root.join("probe.sh").display(),
            ),
        )
        .unwrap();
        Self {
            dir,
            track,
            words,
            config_path,
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> Config {
        let text = fs::read_to_string(&self.config_path).unwrap();
        Config::from_toml(&text, &self.config_path).unwrap()
    }
}
