//! Prompt templates with `{placeholder}` slots.
//!
//! Only `{name}` where `name` is `[a-z_]+` counts as a placeholder, so JSON
//! examples embedded in a prompt body pass through untouched. Substitution is
//! a single left-to-right pass; bound values are never re-scanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("missing binding for placeholder {{{0}}}")]
    Missing(String),
    #[error("template {template} uses undeclared placeholder {{{placeholder}}}")]
    Undeclared {
        template: String,
        placeholder: String,
    },
    #[error("unknown template {0}")]
    Unknown(String),
    #[error("cannot read template {name}: {reason}")]
    Io { name: String, reason: String },
}

pub mod names {
    pub const ANNOTATE_FRAME: &str = "annotate_frame";
    pub const RETRIEVE_FRAMES: &str = "retrieve_frames";
    pub const SUMMARIZE_SEGMENT: &str = "summarize_segment";
    pub const NARRATIVE: &str = "narrative";
    pub const ORDER_SEGMENTS: &str = "order_segments";
    pub const ASSIGN_CHUNKS: &str = "assign_chunks";
    pub const TITLE_CARD: &str = "title_card";
}

/// Template name, declared placeholders and bundled body.
const BUILTIN: &[(&str, &[&str], &str)] = &[
    (
        names::ANNOTATE_FRAME,
        &["video_title", "timestamp", "transcript_window"],
        include_str!("../../templates/annotate_frame.txt"),
    ),
    (
        names::RETRIEVE_FRAMES,
        &["video_title", "user_interest", "frame_voice_list"],
        include_str!("../../templates/retrieve_frames.txt"),
    ),
    (
        names::SUMMARIZE_SEGMENT,
        &["video_title", "segment"],
        include_str!("../../templates/summarize_segment.txt"),
    ),
    (
        names::NARRATIVE,
        &["user_interest", "segments"],
        include_str!("../../templates/narrative.txt"),
    ),
    (
        names::ORDER_SEGMENTS,
        &["overall_narrative", "segments"],
        include_str!("../../templates/order_segments.txt"),
    ),
    (
        names::ASSIGN_CHUNKS,
        &["overall_narrative", "segments"],
        include_str!("../../templates/assign_chunks.txt"),
    ),
    (
        names::TITLE_CARD,
        &["video_title", "previous_segment", "next_segment"],
        include_str!("../../templates/title_card.txt"),
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub placeholders: BTreeSet<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
                .count();
            let close = i + 1 + name_len;
            if name_len > 0 && bytes.get(close) == Some(&b'}') {
                if text_start < i {
                    out.push(Piece::Text(&body[text_start..i]));
                }
                out.push(Piece::Slot(&body[i + 1..close]));
                i = close + 1;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < body.len() {
        out.push(Piece::Text(&body[text_start..]));
    }
    out
}

impl PromptTemplate {
    /// Builds a template, rejecting bodies that use placeholders outside `declared`.
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        declared: &[&str],
    ) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let placeholders: BTreeSet<String> = declared.iter().map(|s| s.to_string()).collect();
        for piece in pieces(&body) {
            if let Piece::Slot(slot) = piece {
                if !placeholders.contains(slot) {
                    return Err(TemplateError::Undeclared {
                        template: name,
                        placeholder: slot.to_string(),
                    });
                }
            }
        }
        Ok(Self {
            name,
            body,
            placeholders,
        })
    }

    /// Placeholders actually present in the body.
    pub fn used_placeholders(&self) -> BTreeSet<String> {
        pieces(&self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.to_string()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        render_prompt(self, bindings)
    }
}

/// Substitutes every placeholder verbatim. Fails on the first unbound one.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len());
    for piece in pieces(&template.body) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(s) => match bindings.get(s) {
                Some(v) => out.push_str(v),
                None => return Err(TemplateError::Missing(s.to_string())),
            },
        }
    }
    Ok(out)
}

/// The named templates the pipeline uses.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, declared, body)| {
                let t = PromptTemplate::new(*name, *body, declared)
                    .expect("bundled templates only use declared placeholders");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    /// Bundled templates, with any `<name>.txt` found in `dir` replacing its bundled body.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for (name, declared, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let body = fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                name: name.to_string(),
                reason: e.to_string(),
            })?;
            set.templates
                .insert(name.to_string(), PromptTemplate::new(*name, body, declared)?);
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
