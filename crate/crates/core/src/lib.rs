//! Query-driven video segment retrieval, narrative generation and playback planning.
// `!(x > 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod config;
pub mod evaluation;
pub mod gateway;
pub mod ingest;
pub mod narrative;
pub mod par;
pub mod pipeline;
pub mod plan;
pub mod retrieval;
pub mod segments;
pub mod session;
pub mod synthetic;
pub mod time;

pub use annotation::{AnnotationStore, FrameAnnotation};
pub use config::{Config, Layout};
pub use gateway::{FakeProvider, Gateway};
pub use ingest::{TimedWord, VideoMeta};
pub use narrative::{ChunkAssignment, Narrative, PlaybackOrder, SegmentInfo, TitleCard};
pub use plan::{PlaybackPlan, PlanItem, SkimMode};
pub use retrieval::{PlaybackMode, Query};
pub use segments::{Interval, Segment};
pub use session::{QuerySession, SessionStatus};
