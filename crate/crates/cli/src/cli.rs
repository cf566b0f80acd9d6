//! Command-line interface.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{ArgGroup, Parser, Subcommand};

use clipweave_core::config::Config;
use clipweave_core::evaluation::{evaluate, GroundTruth, RunRecord};
use clipweave_core::narrative::SegmentInfo;
use clipweave_core::pipeline::{load_annotated, retrieve_segments, IngestRequest};
use clipweave_core::plan::SkimMode;
use clipweave_core::retrieval::{PlaybackMode, Query};
use clipweave_core::session::SessionStatus;
use clipweave_core::time::format_seconds;

use crate::service::Service;

#[derive(Debug, Parser)]
#[command(name = "clipweave", version, about = "Query-driven video skimming")]
pub struct Cli {
    /// TOML configuration file; CLIPWEAVE_* variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Storage root (overrides the configuration).
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a video: probe, extract frames, store the transcript.
    Ingest {
        video_id: String,
        source: PathBuf,
        #[arg(long)]
        title: Option<String>,
        /// Word-timed transcript (JSON lines); transcribed when omitted.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Duration in seconds; skips the probe tool.
        #[arg(long, value_parser = positive_seconds)]
        duration: Option<f64>,
        /// Annotate the frames right away.
        #[arg(long)]
        annotate: bool,
    },
    /// Describe every sampled frame of an ingested video.
    Annotate { video_id: String },
    /// Answer a query; prints the segment table and narrative.
    Query {
        video_id: String,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "video-centric", value_parser = parse_mode)]
        mode: PlaybackMode,
        /// Print the whole session as JSON instead.
        #[arg(long)]
        json: bool,
    },
    /// Print the playback plan of a finished query.
    Plan {
        session_id: String,
        /// Skim the whole video instead: relevant-only, speed2x or speed5x.
        #[arg(long, value_parser = parse_skim)]
        skim: Option<SkimMode>,
    },
    /// Score retrieval against ground truth.
    #[command(group(ArgGroup::new("source").required(true).args(["predictions", "runs"])))]
    Eval {
        /// Ground-truth TOML files, one per video.
        #[arg(long, required = true, num_args = 1..)]
        truth: Vec<PathBuf>,
        /// Recorded runs (JSON list of {video_id, query_id, run, retrieved}).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Run retrieval this many times per query on the annotated videos.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        runs: Option<u32>,
        /// Write the generated runs here (only with --runs).
        #[arg(long, requires = "runs", conflicts_with = "predictions")]
        save_runs: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn positive_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number of seconds, got {s:?}")),
    }
}

fn parse_mode(s: &str) -> Result<PlaybackMode, String> {
    s.parse()
}

fn parse_skim(s: &str) -> Result<SkimMode, String> {
    s.parse()
}

pub fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(root) = &cli.root {
        config.root = root.clone();
    }
    Ok(config)
}

pub fn segment_table(segments: &[SegmentInfo]) -> String {
    let mut out = format!("{:<17} {:<8} {}\n", "interval", "relevant", "title");
    for s in segments {
        let span = format!(
            "{}-{}",
            format_seconds(s.interval.start()),
            format_seconds(s.interval.end())
        );
        out.push_str(&format!(
            "{:<17} {:<8} {}\n",
            span,
            if s.relevant { "yes" } else { "no" },
            s.title
        ));
    }
    out
}

fn generate_runs(service: &Service, truths: &[GroundTruth], runs: u32) -> anyhow::Result<Vec<RunRecord>> {
    let layout = service.layout();
    let mut records = Vec::new();
    for truth in truths {
        let (store, words) = load_annotated(layout, &truth.video_id)?;
        for q in &truth.queries {
            let query = Query {
                query_id: q.query_id.clone(),
                video_id: truth.video_id.clone(),
                text: q.text.clone(),
                mode: PlaybackMode::VideoCentric,
            };
            for run in 0..runs as usize {
                let (_, retrieved) =
                    retrieve_segments(&store, &words, &query, service.gateway(), service.config.batch_size)
                        .with_context(|| format!("query {}", q.query_id))?;
                records.push(RunRecord {
                    video_id: truth.video_id.clone(),
                    query_id: q.query_id.clone(),
                    run,
                    retrieved,
                });
            }
        }
    }
    Ok(records)
}

/// Runs one command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Ingest {
            video_id,
            source,
            title,
            transcript,
            duration,
            annotate,
        } => {
            let service = Service::open(config)?;
            let request = IngestRequest {
                title: title.unwrap_or_else(|| video_id.clone()),
                video_id,
                source,
                transcript,
                duration,
            };
            let status = service.ingest(&request, annotate)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&status)?)?;
        }
        Command::Annotate { video_id } => {
            let service = Service::open(config)?;
            let status = service.annotate(&video_id)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&status)?)?;
        }
        Command::Query {
            video_id,
            text,
            mode,
            json,
        } => {
            let service = Service::open(config)?;
            let (session, start) = service.submit(&video_id, &text, mode)?;
            let session = if start {
                service.execute(&session.session_id)?
            } else {
                session
            };
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&session)?)?;
                return Ok(());
            }
            writeln!(out, "session {}", session.session_id)?;
            if session.status != SessionStatus::Ready {
                let why = session.error.map_or("not finished".to_string(), |e| e.to_string());
                bail!("query {} failed: {why}", session.session_id);
            }
            let artifacts = session.artifacts.expect("ready sessions carry artifacts");
            write!(out, "{}", segment_table(&artifacts.segments))?;
            match &artifacts.narrative {
                Some(n) => {
                    writeln!(out, "\nnarrative:\n{}", n.overall)?;
                    for c in &n.chunks {
                        writeln!(out, "  [{}] {}", c.chunk_id, c.narrative)?;
                    }
                }
                None => writeln!(out, "\nno relevant segments found")?,
            }
            writeln!(
                out,
                "\nplan: {} items, {} s",
                artifacts.plan.items.len(),
                format_seconds(artifacts.plan.total_duration)
            )?;
        }
        Command::Plan { session_id, skim } => {
            let service = Service::open(config)?;
            let plan = match skim {
                Some(mode) => service.skim(&session_id, mode)?,
                None => service.plan(&session_id)?,
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&plan)?)?;
        }
        Command::Eval {
            truth,
            predictions,
            runs,
            save_runs,
            json,
        } => {
            let truths = truth
                .iter()
                .map(|p| GroundTruth::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let records: Vec<RunRecord> = match (predictions, runs) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(n)) => {
                    let service = Service::open(config)?;
                    let records = generate_runs(&service, &truths, n)?;
                    if let Some(path) = save_runs {
                        std::fs::write(&path, serde_json::to_vec_pretty(&records)?)?;
                    }
                    records
                }
                _ => unreachable!("clap enforces exactly one run source"),
            };
            let report = evaluate(&truths, &records)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{}", report.table())?;
            }
        }
        Command::Serve { addr } => {
            let service = Arc::new(Service::open(config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(service, &addr))?;
        }
    }
    Ok(())
}
