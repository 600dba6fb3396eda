//! Evaluation harness: dataset ingestion, pause and emotion threshold sweeps,
//! and grammar-correction metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tutor_core::audio::{decode_clip, VadConfig};
use tutor_core::eval::{
    grammar_eval, ingest_dataset, pause_profiles, read_pairs, render_emotion_table, render_pause_table, score_clips,
    sweep_emotion_setups, sweep_pause_thresholds, ClipLabel, EvalError, ScoreCache,
};
use tutor_core::gateway::{
    parse_distribution, EmotionScorer, GatewayError, HttpTransport, RemoteService, ServiceEndpoint, ServiceKind,
    StubEmotionScorer, STUB_URL,
};
use tutor_core::pause::{PauseMetric, PauseProfile, ThresholdDirection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0} requires --manifest")]
    MissingManifest(&'static str),
    #[error("{path}: {detail}")]
    BadInput { path: PathBuf, detail: String },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Parser)]
#[command(name = "tutor-eval", about = "Evaluate distress detection and grammar correction on labeled data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Tab-separated clip manifest with a `clip_path  label  transcript` header.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Where to write the machine-readable JSON report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a manifest and report per-label counts.
    Ingest,
    /// Sweep pause thresholds 0.1 to 0.9 over the Pauses and Neutral clips.
    SweepPauses {
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long, value_enum, default_value = "both")]
        direction: DirectionArg,
    },
    /// Sweep every aggregation setup and threshold over the Negative and Neutral clips.
    SweepEmotion {
        /// Emotion service URL, or `stub`.
        #[arg(long, default_value = STUB_URL)]
        endpoint: String,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        /// Directory for cached scores keyed by clip checksum.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// JSON object mapping manifest clip paths to probability objects,
        /// served by the stub scorer. Unlisted clips score uniform.
        #[arg(long)]
        stub_scores: Option<PathBuf>,
    },
    /// Exact-match and substring-match rates over `prediction  gold` pairs.
    GrammarEval {
        #[arg(long)]
        pairs: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MetricArg {
    SilenceRatio,
    PauseRate,
    AvgPauseLength,
}

impl From<MetricArg> for PauseMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::SilenceRatio => PauseMetric::SilenceRatio,
            MetricArg::PauseRate => PauseMetric::PauseRate,
            MetricArg::AvgPauseLength => PauseMetric::AvgPauseLength,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Above,
    Below,
    Both,
}

impl DirectionArg {
    fn directions(self) -> Vec<ThresholdDirection> {
        match self {
            DirectionArg::Above => vec![ThresholdDirection::AtOrAboveIsPauses],
            DirectionArg::Below => vec![ThresholdDirection::BelowIsPauses],
            DirectionArg::Both => vec![ThresholdDirection::AtOrAboveIsPauses, ThresholdDirection::BelowIsPauses],
        }
    }
}

/// A finished report: the aligned text table and its structured form.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub json: Value,
}

impl Report {
    fn new(text: String, data: &impl Serialize) -> Self {
        Self { text, json: serde_json::to_value(data).expect("report serializes") }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(&self.json).expect("value serializes");
        std::fs::write(path, body + "\n").map_err(|source| CliError::Write { path: path.into(), source })
    }
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let manifest = |cmd| cli.common.manifest.as_deref().ok_or(CliError::MissingManifest(cmd));
    let report = match &cli.command {
        Command::Ingest => ingest(manifest("ingest")?)?,
        Command::SweepPauses { metric, direction } => {
            sweep_pauses(manifest("sweep-pauses")?, metric.map(Into::into), *direction)?
        }
        Command::SweepEmotion { endpoint, timeout, cache, stub_scores } => {
            let path = manifest("sweep-emotion")?;
            let scorer = build_scorer(endpoint, *timeout, stub_scores.as_deref(), path)?;
            let cache = cache.as_ref().map(ScoreCache::new).transpose()?;
            sweep_emotion(path, scorer.as_ref(), cache.as_ref())?
        }
        Command::GrammarEval { pairs } => grammar(pairs)?,
    };
    if let Some(out) = &cli.common.out {
        report.write_json(out)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct IngestSummary {
    retained: usize,
    dropped_unusable: usize,
    counts: BTreeMap<ClipLabel, usize>,
}

pub fn ingest(manifest: &Path) -> Result<Report, CliError> {
    let r = ingest_dataset(manifest)?;
    let mut text = format!("{:<10} {:>6}\n", "Label", "Clips");
    for (label, n) in &r.counts {
        let _ = writeln!(text, "{:<10} {:>6}", label.name(), n);
    }
    let _ = writeln!(text, "{:<10} {:>6}\n{:<10} {:>6}", "retained", r.clips.len(), "dropped", r.dropped_unusable);
    Ok(Report::new(
        text,
        &IngestSummary { retained: r.clips.len(), dropped_unusable: r.dropped_unusable, counts: r.counts },
    ))
}

#[derive(Serialize)]
struct ClassMeans {
    label: ClipLabel,
    n: usize,
    means: BTreeMap<&'static str, f64>,
}

fn class_means(samples: &[(ClipLabel, PauseProfile)]) -> Vec<ClassMeans> {
    [ClipLabel::Pauses, ClipLabel::Neutral]
        .into_iter()
        .map(|label| {
            let set: Vec<&PauseProfile> = samples.iter().filter(|s| s.0 == label).map(|s| &s.1).collect();
            let means = PauseMetric::ALL
                .iter()
                .map(|&m| (m.name(), set.iter().map(|p| p.metric(m)).sum::<f64>() / set.len().max(1) as f64))
                .collect();
            ClassMeans { label, n: set.len(), means }
        })
        .collect()
}

pub fn sweep_pauses(manifest: &Path, metric: Option<PauseMetric>, direction: DirectionArg) -> Result<Report, CliError> {
    let clips = ingest_dataset(manifest)?.clips;
    let samples = pause_profiles(&clips, &VadConfig::default())?;
    let means = class_means(&samples);
    let mut text = format!("{:<10} {:>4}", "Class", "n");
    for m in PauseMetric::ALL {
        let _ = write!(text, " {:>17}", m.name());
    }
    text.push('\n');
    for c in &means {
        let _ = write!(text, "{:<10} {:>4}", c.label.name(), c.n);
        for m in PauseMetric::ALL {
            let _ = write!(text, " {:>17.3}", c.means[m.name()]);
        }
        text.push('\n');
    }
    let metrics = metric.map_or_else(|| PauseMetric::ALL.to_vec(), |m| vec![m]);
    let mut sweeps = Vec::new();
    for m in metrics {
        for d in direction.directions() {
            let report = sweep_pause_thresholds(&samples, m, d)?;
            text.push('\n');
            text.push_str(&render_pause_table(&report));
            sweeps.push(report);
        }
    }
    Ok(Report::new(text, &serde_json::json!({ "class_means": means, "sweeps": sweeps })))
}

/// Stub or remote emotion scorer for the sweep.
pub fn build_scorer(
    endpoint: &str,
    timeout: f64,
    stub_scores: Option<&Path>,
    manifest: &Path,
) -> Result<Box<dyn EmotionScorer>, CliError> {
    if endpoint != STUB_URL {
        let mut ep = ServiceEndpoint { base_url: endpoint.to_string(), timeout_secs: timeout, ..ServiceEndpoint::stub(ServiceKind::Emotion) };
        ep.auth_token = std::env::var("TUTOR_EMOTION_TOKEN").ok();
        ep.validate()?;
        return Ok(Box::new(RemoteService::new(ep, std::sync::Arc::new(HttpTransport))));
    }
    let Some(path) = stub_scores else {
        return Ok(Box::new(StubEmotionScorer::default()));
    };
    let bad = |detail: String| CliError::BadInput { path: path.into(), detail };
    let raw = std::fs::read(path).map_err(|e| bad(e.to_string()))?;
    let entries: BTreeMap<String, Value> = serde_json::from_slice(&raw).map_err(|e| bad(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut table = HashMap::new();
    for (clip, probs) in entries {
        let clip_path = base.join(&clip);
        let bytes = std::fs::read(&clip_path).map_err(|e| bad(format!("{clip}: {e}")))?;
        let audio = decode_clip(&bytes).map_err(|e| bad(format!("{clip}: {e}")))?;
        table.insert(audio.fingerprint(), parse_distribution(&probs)?);
    }
    Ok(Box::new(StubEmotionScorer::new(table)))
}

pub fn sweep_emotion(manifest: &Path, scorer: &dyn EmotionScorer, cache: Option<&ScoreCache>) -> Result<Report, CliError> {
    let clips = ingest_dataset(manifest)?.clips;
    let scored = score_clips(&clips, scorer, cache)?;
    let report = sweep_emotion_setups(&scored)?;
    Ok(Report::new(render_emotion_table(&report), &report))
}

pub fn grammar(pairs: &Path) -> Result<Report, CliError> {
    let report = grammar_eval(&read_pairs(pairs)?)?;
    let text = format!(
        "{:<16} {:>8}\n{:<16} {:>8}\n{:<16} {:>7.1}%\n{:<16} {:>7.1}%\n",
        "Metric",
        "Value",
        "pairs",
        report.n,
        "exact match",
        100.0 * report.exact_match_rate,
        "substring match",
        100.0 * report.substring_match_rate
    );
    Ok(Report::new(text, &report))
}
