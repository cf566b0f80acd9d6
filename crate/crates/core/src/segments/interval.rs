use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::format_seconds;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("empty or inverted interval [{start}, {end})")]
pub struct InvalidInterval {
    pub start: f64,
    pub end: f64,
}

/// Half-open time range `[start, end)` in seconds with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct Interval {
    start: f64,
    end: f64,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    start: f64,
    end: f64,
}

impl TryFrom<RawInterval> for Interval {
    type Error = InvalidInterval;
    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        Interval::new(raw.start, raw.end)
    }
}

impl From<Interval> for RawInterval {
    fn from(iv: Interval) -> Self {
        RawInterval {
            start: iv.start,
            end: iv.end,
        }
    }
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, InvalidInterval> {
        if start.is_finite() && end.is_finite() && start < end {
            Ok(Self { start, end })
        } else {
            Err(InvalidInterval { start, end })
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        Interval::new(self.start.max(other.start), self.end.min(other.end)).ok()
    }

    /// Gap between two intervals; zero when they touch or overlap.
    pub fn distance(&self, other: &Interval) -> f64 {
        (other.start - self.end).max(self.start - other.end).max(0.0)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Option<Interval> {
        Interval::new(self.start.max(lo), self.end.min(hi)).ok()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", format_seconds(self.start), format_seconds(self.end))
    }
}

/// Total length of a set of intervals assumed pairwise disjoint.
pub fn measure(intervals: &[Interval]) -> f64 {
    intervals.iter().map(Interval::len).sum()
}

/// Minimal sorted set of disjoint intervals with the same union.
/// Touching intervals (`a.end == b.start`) are joined.
pub fn merge_overlaps(intervals: &[Interval]) -> Vec<Interval> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut merged: Vec<Interval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Total length of the intersection of two internally disjoint sets.
pub fn overlap_duration(a: &[Interval], b: &[Interval]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.start.total_cmp(&y.start));
    b.sort_by(|x, y| x.start.total_cmp(&y.start));
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let lo = a[i].start.max(b[j].start);
        let hi = a[i].end.min(b[j].end);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].end < b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Complement of sorted disjoint `intervals` inside `[0, duration)`.
pub fn complement(intervals: &[Interval], duration: f64) -> Vec<Interval> {
    let mut gaps = Vec::new();
    let mut cursor = 0.0;
    for iv in intervals {
        if let Ok(gap) = Interval::new(cursor, iv.start.min(duration)) {
            gaps.push(gap);
        }
        cursor = cursor.max(iv.end);
    }
    if let Ok(gap) = Interval::new(cursor, duration) {
        gaps.push(gap);
    }
    gaps
}
