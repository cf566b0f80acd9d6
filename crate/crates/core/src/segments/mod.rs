//! Segment algebra: relevance bitmaps, the refinement rules, conversion to
//! time intervals, sentence alignment and the interval arithmetic used by
//! metrics and playback plans.
//!
//! Everything here is pure.

mod interval;

pub use interval::{
    complement, measure, merge_overlaps, overlap_duration, Interval, InvalidInterval,
};

use serde::{Deserialize, Serialize};

use crate::ingest::SentenceIndex;

/// One flag per sampled frame; frame `k` covers `[k * frame_interval, (k + 1) * frame_interval)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceBitmap {
    pub frame_interval: FrameInterval,
    pub flags: Vec<bool>,
}

/// Frame spacing in seconds, stored by bit pattern so the bitmap stays `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct FrameInterval(u64);

impl FrameInterval {
    pub fn seconds(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl From<f64> for FrameInterval {
    fn from(s: f64) -> Self {
        FrameInterval(s.to_bits())
    }
}

impl From<FrameInterval> for f64 {
    fn from(f: FrameInterval) -> Self {
        f.seconds()
    }
}

impl RelevanceBitmap {
    pub fn new(frame_interval: f64, flags: Vec<bool>) -> Self {
        Self {
            frame_interval: frame_interval.into(),
            flags,
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Maximal runs of `true` as inclusive index pairs.
    pub fn true_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &f) in self.flags.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.flags.len() - 1));
        }
        runs
    }

    /// True when no run of length 1 remains and no single `false` sits between two `true`s.
    pub fn is_refined(&self) -> bool {
        let f = &self.flags;
        let no_gaps = (1..f.len().saturating_sub(1)).all(|i| f[i] || !(f[i - 1] && f[i + 1]));
        no_gaps && self.true_runs().iter().all(|(s, e)| e > s)
    }
}

/// A time range of the source video with its relevance and generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub interval: Interval,
    pub relevant: bool,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub summary: String,
}

impl Segment {
    pub fn new(interval: Interval, relevant: bool) -> Self {
        Self {
            interval,
            relevant,
            title: String::new(),
            summary: String::new(),
        }
    }
}

/// Flag `k` is set iff `frame_timestamps[k]` is in `relevant`.
pub fn frames_to_bitmap(
    frame_timestamps: &[f64],
    frame_interval: f64,
    relevant: &[f64],
) -> RelevanceBitmap {
    let flags = frame_timestamps
        .iter()
        .map(|t| relevant.iter().any(|r| r == t))
        .collect();
    RelevanceBitmap::new(frame_interval, flags)
}

/// Gap-fill then isolate-drop.
///
/// 1. every `false` with `true` on both sides becomes `true`;
/// 2. every maximal `true` run of length 1 becomes `false`.
///
/// Filling first lets a lone relevant frame survive when it gets bridged to
/// a neighbouring run. The result satisfies [`RelevanceBitmap::is_refined`]
/// and refining it again changes nothing.
pub fn refine_bitmap(bitmap: &RelevanceBitmap) -> RelevanceBitmap {
    let src = &bitmap.flags;
    let mut flags = src.clone();
    for i in 1..src.len().saturating_sub(1) {
        if !src[i] && src[i - 1] && src[i + 1] {
            flags[i] = true;
        }
    }
    let mut out = RelevanceBitmap {
        frame_interval: bitmap.frame_interval,
        flags,
    };
    for (s, e) in out.true_runs() {
        if s == e {
            out.flags[s] = false;
        }
    }
    out
}

/// Maximal true runs `[i..=j]` become `[i * dt, (j + 1) * dt)`, clamped to `duration`.
pub fn bitmap_to_segments(bitmap: &RelevanceBitmap, duration: f64) -> Vec<Interval> {
    let dt = bitmap.frame_interval.seconds();
    bitmap
        .true_runs()
        .into_iter()
        .filter_map(|(s, e)| {
            Interval::new(s as f64 * dt, ((e + 1) as f64 * dt).min(duration)).ok()
        })
        .collect()
}

/// Widens `interval` to whole sentences: the start moves to the start of the
/// sentence containing it, the end to the end of the sentence holding the
/// last included instant. Uncovered boundaries stay put. The result always
/// contains the input and is clamped to `[0, duration)`.
pub fn align_to_sentences(interval: Interval, index: &SentenceIndex, duration: f64) -> Interval {
    let start = index
        .containing(interval.start())
        .map_or(interval.start(), |s| s.start.min(interval.start()));
    let end = index
        .containing_before(interval.end())
        .map_or(interval.end(), |s| s.end.max(interval.end()));
    let start = start.max(0.0);
    let end = if interval.end() <= duration {
        end.min(duration)
    } else {
        end
    };
    Interval::new(start, end).unwrap_or(interval)
}

/// Frames → bitmap → refine → intervals → sentence alignment → merge.
pub fn relevant_intervals(
    frame_timestamps: &[f64],
    frame_interval: f64,
    duration: f64,
    relevant: &[f64],
    sentences: &SentenceIndex,
) -> Vec<Interval> {
    let bitmap = refine_bitmap(&frames_to_bitmap(frame_timestamps, frame_interval, relevant));
    let aligned: Vec<Interval> = bitmap_to_segments(&bitmap, duration)
        .into_iter()
        .map(|iv| align_to_sentences(iv, sentences, duration))
        .collect();
    merge_overlaps(&aligned)
}

/// Relevant intervals plus their complement, in time order, tiling `[0, duration)`.
pub fn partition_timeline(relevant: &[Interval], duration: f64) -> Vec<Segment> {
    let relevant = merge_overlaps(relevant);
    let mut all: Vec<Segment> = relevant
        .iter()
        .filter_map(|iv| iv.clamp(0.0, duration))
        .map(|iv| Segment::new(iv, true))
        .chain(
            complement(&relevant, duration)
                .into_iter()
                .map(|iv| Segment::new(iv, false)),
        )
        .collect();
    all.sort_by(|a, b| a.interval.start().total_cmp(&b.interval.start()));
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sentence;

    fn bm(s: &str) -> RelevanceBitmap {
        RelevanceBitmap::new(3.0, s.chars().map(|c| c == 'T').collect())
    }

    fn show(b: &RelevanceBitmap) -> String {
        b.flags.iter().map(|&f| if f { 'T' } else { 'F' }).collect()
    }

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    fn index(spans: &[(f64, f64)]) -> SentenceIndex {
        SentenceIndex {
            sentences: spans
                .iter()
                .map(|&(start, end)| Sentence {
                    text: "s.".into(),
                    start,
                    end,
                })
                .collect(),
        }
    }

    #[test]
    fn bitmap_from_frames() {
        let frames = [0.0, 3.0, 6.0, 9.0];
        assert_eq!(show(&frames_to_bitmap(&frames, 3.0, &[3.0, 6.0])), "FTTF");
        assert_eq!(show(&frames_to_bitmap(&frames, 3.0, &frames)), "TTTT");
        assert_eq!(show(&frames_to_bitmap(&frames, 3.0, &[])), "FFFF");
    }

    #[test]
    fn refine_examples() {
        assert_eq!(show(&refine_bitmap(&bm("TFT"))), "TTT");
        assert_eq!(show(&refine_bitmap(&bm("FTF"))), "FFF");
        assert_eq!(show(&refine_bitmap(&bm("TTFFT"))), "TTFFF");
        assert_eq!(show(&refine_bitmap(&bm(""))), "");
        assert_eq!(show(&refine_bitmap(&bm("T"))), "F");
    }

    #[test]
    fn refine_idempotent_exhaustive() {
        for len in 0..=16usize {
            for mask in 0u32..(1 << len) {
                let b = RelevanceBitmap::new(3.0, (0..len).map(|i| mask >> i & 1 == 1).collect());
                let once = refine_bitmap(&b);
                assert!(once.is_refined(), "{} -> {}", show(&b), show(&once));
                assert_eq!(refine_bitmap(&once), once);
            }
        }
    }

    #[test]
    fn runs_to_intervals() {
        assert_eq!(bitmap_to_segments(&bm("TTFF"), 12.0), vec![iv(0., 6.)]);
        assert!(bitmap_to_segments(&bm("FFFF"), 12.0).is_empty());
        assert_eq!(bitmap_to_segments(&bm("TTTT"), 10.0), vec![iv(0., 10.)]);
        assert_eq!(
            bitmap_to_segments(&bm("TTFTT"), 15.0),
            vec![iv(0., 6.), iv(9., 15.)]
        );
    }

    #[test]
    fn alignment_examples() {
        let idx = index(&[(0., 4.), (4., 11.), (11., 15.)]);
        assert_eq!(align_to_sentences(iv(6., 9.), &idx, 15.0), iv(4., 11.));
        assert_eq!(align_to_sentences(iv(4., 11.), &idx, 15.0), iv(4., 11.));
        let sparse = index(&[(0., 2.), (20., 25.)]);
        assert_eq!(align_to_sentences(iv(6., 9.), &sparse, 30.0), iv(6., 9.));
        // end at a boundary belongs to the earlier sentence
        assert_eq!(align_to_sentences(iv(5., 11.), &idx, 15.0), iv(4., 11.));
        // clamp to the video end
        let long = index(&[(8., 20.)]);
        assert_eq!(align_to_sentences(iv(9., 10.), &long, 12.0), iv(8., 12.));
    }

    #[test]
    fn chain_and_partition() {
        let frames: Vec<f64> = (0..10).map(|k| k as f64 * 3.0).collect();
        let idx = index(&[(5., 13.), (13., 20.)]);
        // frames 3,4 relevant, frame 8 isolated
        let rel = relevant_intervals(&frames, 3.0, 30.0, &[9.0, 12.0, 24.0], &idx);
        assert_eq!(rel, vec![iv(5., 20.)]);
        let parts = partition_timeline(&rel, 30.0);
        assert_eq!(parts.len(), 3);
        assert!(parts[1].relevant && !parts[0].relevant && !parts[2].relevant);
        assert_eq!(parts[2].interval, iv(20., 30.));
    }
}
