//! Duration-overlap recall and precision against annotated ground truth,
//! aggregated over repeated runs and grouped by video and query tags.
//!
//! Ground truth is one TOML file per video:
//!
//! ```toml
//! video_id = "v1"
//! duration = 600.0          # optional, bounds the intervals
//! genre = "tech"            # default for every query below
//!
//! [[queries]]
//! query_id = "q1"
//! text = "How long does the battery last?"
//! content_type = "conceptual"   # or "sequential"
//! query_type = "conceptual"     # or "procedural"
//! intervals = [[120.0, 180.0], [300.0, 330.0]]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::segments::{measure, merge_overlaps, overlap_duration, Interval};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {reason}")]
    Truth { path: PathBuf, reason: String },
    #[error("no runs recorded for query {0}")]
    NoRuns(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Share of the truth duration covered by the retrieved intervals.
/// Empty truth scores 1 only when nothing was retrieved.
pub fn recall(retrieved: &[Interval], truth: &[Interval]) -> f64 {
    let truth = merge_overlaps(truth);
    let total = measure(&truth);
    if total == 0.0 {
        return if measure(retrieved) == 0.0 { 1.0 } else { 0.0 };
    }
    (overlap_duration(&merge_overlaps(retrieved), &truth) / total).clamp(0.0, 1.0)
}

/// Share of the retrieved duration that lies inside the truth.
/// Empty retrieval scores 1 only when the truth is empty too.
pub fn precision(retrieved: &[Interval], truth: &[Interval]) -> f64 {
    let retrieved = merge_overlaps(retrieved);
    let total = measure(&retrieved);
    if total == 0.0 {
        return if measure(truth) == 0.0 { 1.0 } else { 0.0 };
    }
    (overlap_duration(&retrieved, &merge_overlaps(truth)) / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    Conceptual,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    Conceptual,
    Procedural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentBucket {
    #[serde(rename = "<3")]
    Few,
    #[serde(rename = "3-5")]
    Some,
    #[serde(rename = ">5")]
    Many,
}

impl SegmentBucket {
    pub fn for_count(n: usize) -> Self {
        match n {
            0..=2 => SegmentBucket::Few,
            3..=5 => SegmentBucket::Some,
            _ => SegmentBucket::Many,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SegmentBucket::Few => "<3",
            SegmentBucket::Some => "3-5",
            SegmentBucket::Many => ">5",
        }
    }
}

impl ContentType {
    pub fn label(self) -> &'static str {
        match self {
            ContentType::Conceptual => "conceptual",
            ContentType::Sequential => "sequential",
        }
    }
}

impl QueryType {
    pub fn label(self) -> &'static str {
        match self {
            QueryType::Conceptual => "conceptual",
            QueryType::Procedural => "procedural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTags {
    pub genre: String,
    pub content_type: ContentType,
    pub query_type: QueryType,
    pub segment_bucket: SegmentBucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthQuery {
    pub query_id: String,
    pub text: String,
    pub intervals: Vec<Interval>,
    pub tags: QueryTags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub duration: Option<f64>,
    pub queries: Vec<TruthQuery>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    video_id: String,
    #[serde(default)]
    duration: Option<f64>,
    #[serde(default)]
    genre: Option<String>,
    queries: Vec<TruthFileQuery>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFileQuery {
    query_id: String,
    text: String,
    #[serde(default)]
    genre: Option<String>,
    content_type: ContentType,
    query_type: QueryType,
    intervals: Vec<[f64; 2]>,
}

impl GroundTruth {
    pub fn parse(text: &str, path: &Path) -> Result<Self, EvalError> {
        let err = |reason: String| EvalError::Truth {
            path: path.to_path_buf(),
            reason,
        };
        let file: TruthFile = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        let mut queries = Vec::with_capacity(file.queries.len());
        for q in file.queries {
            let mut intervals = Vec::with_capacity(q.intervals.len());
            for [s, e] in q.intervals {
                intervals.push(
                    Interval::new(s, e).map_err(|e| err(format!("query {}: {e}", q.query_id)))?,
                );
            }
            intervals.sort_by(|a, b| a.start().total_cmp(&b.start()));
            if let Some(w) = intervals.windows(2).find(|w| w[0].end() > w[1].start()) {
                return Err(err(format!(
                    "query {}: intervals {} and {} overlap",
                    q.query_id, w[0], w[1]
                )));
            }
            if let (Some(d), Some(last)) = (file.duration, intervals.last()) {
                if last.end() > d {
                    return Err(err(format!(
                        "query {}: interval {last} exceeds duration {d}",
                        q.query_id
                    )));
                }
            }
            let genre = q
                .genre
                .or_else(|| file.genre.clone())
                .ok_or_else(|| err(format!("query {} has no genre", q.query_id)))?;
            let bucket = SegmentBucket::for_count(intervals.len());
            queries.push(TruthQuery {
                query_id: q.query_id,
                text: q.text,
                intervals,
                tags: QueryTags {
                    genre,
                    content_type: q.content_type,
                    query_type: q.query_type,
                    segment_bucket: bucket,
                },
            });
        }
        Ok(GroundTruth {
            video_id: file.video_id,
            duration: file.duration,
            queries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }
}

/// One retrieval run for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub video_id: String,
    pub query_id: String,
    pub run: usize,
    pub retrieved: Vec<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetric {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub video_id: String,
    pub query_id: String,
    pub tags: QueryTags,
    pub runs: Vec<RunMetric>,
    /// Run with the highest recall + precision (earliest on ties).
    pub best_run: usize,
    pub best_recall: f64,
    pub best_precision: f64,
    pub recall_std: f64,
    pub precision_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub dimension: String,
    pub value: String,
    pub queries: usize,
    pub best_recall: f64,
    pub best_precision: f64,
    pub recall_std: f64,
    pub precision_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: Vec<QueryReport>,
    pub groups: Vec<GroupReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    mean(values.iter().map(|v| (v - m) * (v - m))).sqrt()
}

pub fn score_query(
    truth: &TruthQuery,
    video_id: &str,
    runs: &[Vec<Interval>],
) -> Result<QueryReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns(truth.query_id.clone()));
    }
    let metrics: Vec<RunMetric> = runs
        .iter()
        .map(|r| RunMetric {
            recall: recall(r, &truth.intervals),
            precision: precision(r, &truth.intervals),
        })
        .collect();
    let mut best = 0;
    for (i, m) in metrics.iter().enumerate() {
        if m.recall + m.precision > metrics[best].recall + metrics[best].precision {
            best = i;
        }
    }
    let recalls: Vec<f64> = metrics.iter().map(|m| m.recall).collect();
    let precisions: Vec<f64> = metrics.iter().map(|m| m.precision).collect();
    Ok(QueryReport {
        video_id: video_id.to_string(),
        query_id: truth.query_id.clone(),
        tags: truth.tags.clone(),
        best_run: best,
        best_recall: metrics[best].recall,
        best_precision: metrics[best].precision,
        recall_std: std_dev(&recalls),
        precision_std: std_dev(&precisions),
        runs: metrics,
    })
}

fn group(dimension: &str, value: &str, members: &[&QueryReport]) -> GroupReport {
    GroupReport {
        dimension: dimension.to_string(),
        value: value.to_string(),
        queries: members.len(),
        best_recall: mean(members.iter().map(|q| q.best_recall)),
        best_precision: mean(members.iter().map(|q| q.best_precision)),
        recall_std: mean(members.iter().map(|q| q.recall_std)),
        precision_std: mean(members.iter().map(|q| q.precision_std)),
    }
}

/// Groups query reports: overall, then by genre, content type, query type
/// and truth segment count. Empty groups are left out with a warning.
pub fn aggregate(queries: Vec<QueryReport>) -> EvalReport {
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    let all: Vec<&QueryReport> = queries.iter().collect();
    if all.is_empty() {
        warnings.push("no queries to aggregate".to_string());
    } else {
        groups.push(group("overall", "all", &all));
    }

    let mut genres: BTreeMap<&str, Vec<&QueryReport>> = BTreeMap::new();
    for q in &queries {
        genres.entry(q.tags.genre.as_str()).or_default().push(q);
    }
    for (g, members) in &genres {
        groups.push(group("genre", g, members));
    }

    let mut dimension = |name: &str, labels: &[&str], key: &dyn Fn(&QueryReport) -> &'static str| {
        for label in labels {
            let members: Vec<&QueryReport> = queries.iter().filter(|q| key(q) == *label).collect();
            if members.is_empty() {
                let w = format!("group {name}={label} has no queries, omitted");
                warn!("{w}");
                warnings.push(w);
            } else {
                groups.push(group(name, label, &members));
            }
        }
    };
    dimension("content_type", &["conceptual", "sequential"], &|q| q.tags.content_type.label());
    dimension("query_type", &["conceptual", "procedural"], &|q| q.tags.query_type.label());
    dimension("segments", &["<3", "3-5", ">5"], &|q| q.tags.segment_bucket.label());

    EvalReport {
        queries,
        groups,
        warnings,
    }
}

/// Scores every ground-truth query against its recorded runs.
pub fn evaluate(truths: &[GroundTruth], runs: &[RunRecord]) -> Result<EvalReport, EvalError> {
    let mut reports = Vec::new();
    for gt in truths {
        for q in &gt.queries {
            let mut mine: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.video_id == gt.video_id && r.query_id == q.query_id)
                .collect();
            mine.sort_by_key(|r| r.run);
            let intervals: Vec<Vec<Interval>> = mine.iter().map(|r| r.retrieved.clone()).collect();
            reports.push(score_query(q, &gt.video_id, &intervals)?);
        }
    }
    Ok(aggregate(reports))
}

impl EvalReport {
    /// Text table with one row per group.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<26} {:>7} {:>11} {:>14} {:>10} {:>13}",
            "group", "queries", "best recall", "best precision", "recall std", "precision std"
        );
        for g in &self.groups {
            let name = if g.dimension == "overall" {
                "overall".to_string()
            } else {
                format!("{}: {}", g.dimension, g.value)
            };
            let _ = writeln!(
                out,
                "{:<26} {:>7} {:>11.3} {:>14.3} {:>10.3} {:>13.3}",
                name, g.queries, g.best_recall, g.best_precision, g.recall_std, g.precision_std
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ivs(pairs: &[(f64, f64)]) -> Vec<Interval> {
        pairs.iter().map(|&(a, b)| Interval::new(a, b).unwrap()).collect()
    }

    #[test]
    fn metric_examples() {
        let t = ivs(&[(0.0, 10.0)]);
        let r = ivs(&[(0.0, 20.0)]);
        assert_eq!(recall(&t, &t), 1.0);
        assert_eq!(recall(&r, &t), 1.0);
        assert_eq!(precision(&r, &t), 0.5);
        assert_eq!(precision(&t, &t), 1.0);
        assert_eq!(recall(&ivs(&[(20.0, 30.0)]), &t), 0.0);
        assert_eq!(precision(&[], &t), 0.0);
        assert_eq!(recall(&[], &[]), 1.0);
        assert_eq!(recall(&t, &[]), 0.0);
        assert_eq!(precision(&[], &[]), 1.0);
    }

    fn tq(id: &str, truth: &[(f64, f64)]) -> TruthQuery {
        TruthQuery {
            query_id: id.into(),
            text: id.into(),
            intervals: ivs(truth),
            tags: QueryTags {
                genre: "tech".into(),
                content_type: ContentType::Conceptual,
                query_type: QueryType::Procedural,
                segment_bucket: SegmentBucket::for_count(truth.len()),
            },
        }
    }

    #[test]
    fn identical_runs_have_zero_std() {
        let q = tq("q", &[(0.0, 10.0)]);
        let runs = vec![ivs(&[(0.0, 20.0)]); 5];
        let r = score_query(&q, "v", &runs).unwrap();
        assert_eq!((r.best_recall, r.best_precision), (1.0, 0.5));
        assert_eq!((r.recall_std, r.precision_std), (0.0, 0.0));
        assert_eq!(r.best_run, 0);
        assert!(score_query(&q, "v", &[]).is_err());
    }

    #[test]
    fn two_queries_two_runs_by_hand() {
        // q1: run0 r=1 p=.5 (sum 1.5); run1 r=.5 p=1 (sum 1.5) -> tie, run0
        // q2: run0 r=0 p=0; run1 r=1 p=1 -> run1
        let q1 = tq("q1", &[(0.0, 10.0)]);
        let q2 = tq("q2", &[(0.0, 4.0)]);
        let a = score_query(&q1, "v", &[ivs(&[(0.0, 20.0)]), ivs(&[(0.0, 5.0)])]).unwrap();
        let b = score_query(&q2, "v", &[ivs(&[(10.0, 12.0)]), ivs(&[(0.0, 4.0)])]).unwrap();
        assert_eq!(a.best_run, 0);
        assert_eq!(b.best_run, 1);
        assert_eq!(a.recall_std, 0.25);
        assert_eq!(b.precision_std, 0.5);
        let report = aggregate(vec![a, b]);
        let overall = &report.groups[0];
        assert_eq!(overall.best_recall, 1.0);
        assert_eq!(overall.best_precision, 0.75);
        assert_eq!(overall.recall_std, 0.375);
        assert_eq!(overall.precision_std, 0.375);
        assert!(report.warnings.iter().any(|w| w.contains("sequential")));
        assert!(report.table().contains("overall"));
    }

    #[test]
    fn truth_file_parsing() {
        let text = r#"
            video_id = "v1"
            duration = 100.0
            genre = "cooking"

            [[queries]]
            query_id = "q1"
            text = "knife skills"
            content_type = "sequential"
            query_type = "procedural"
            intervals = [[50.0, 60.0], [10, 20]]
        "#;
        let gt = GroundTruth::parse(text, Path::new("t.toml")).unwrap();
        assert_eq!(gt.queries[0].intervals[0].start(), 10.0);
        assert_eq!(gt.queries[0].tags.segment_bucket, SegmentBucket::Few);

        let bad = text.replace("[10, 20]", "[55, 70]");
        assert!(GroundTruth::parse(&bad, Path::new("t.toml")).is_err());
        let bad = text.replace("[10, 20]", "[95, 120]");
        assert!(GroundTruth::parse(&bad, Path::new("t.toml")).is_err());
    }

    #[test]
    fn buckets() {
        assert_eq!(SegmentBucket::for_count(2), SegmentBucket::Few);
        assert_eq!(SegmentBucket::for_count(3), SegmentBucket::Some);
        assert_eq!(SegmentBucket::for_count(5), SegmentBucket::Some);
        assert_eq!(SegmentBucket::for_count(6), SegmentBucket::Many);
    }
}
