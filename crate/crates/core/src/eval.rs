//! Offline evaluation: dataset ingest, pause-threshold sweeps, the emotion
//! setup × threshold grid, weighted F1 and grammar match rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{aggregate_negative, classify_negative, AggregationSetup, EmotionDistribution, NegativeClass};
use crate::audio::{decode_clip, detect_speech, AudioError, VadConfig};
use crate::empathy::sha256_hex;
use crate::gateway::{EmotionScorer, GatewayError};
use crate::grammar::{exact_match, substring_match};
use crate::pause::{
    classify_pauses, compute_pause_profile, PauseClass, PauseError, PauseMetric, PauseProfile,
    PauseThresholdConfig, ThresholdDirection,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest header must be `{expected}`, got `{got}`")]
    BadHeader { expected: String, got: String },
    #[error("clip file not found: {0}")]
    MissingClipFile(PathBuf),
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: u64, label: String },
    #[error("dataset has no usable clips")]
    EmptyDataset,
    #[error("evaluation subset is empty: {0}")]
    EmptySubset(String),
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: AudioError },
    #[error(transparent)]
    Pause(#[from] PauseError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cache entry {0} is corrupt")]
    CorruptCache(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipLabel {
    Unusable,
    Negative,
    Pauses,
    Neutral,
}

impl ClipLabel {
    pub const ALL: [ClipLabel; 4] = [ClipLabel::Unusable, ClipLabel::Negative, ClipLabel::Pauses, ClipLabel::Neutral];

    pub fn name(self) -> &'static str {
        match self {
            ClipLabel::Unusable => "unusable",
            ClipLabel::Negative => "negative",
            ClipLabel::Pauses => "pauses",
            ClipLabel::Neutral => "neutral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub clip_path: PathBuf,
    pub label: ClipLabel,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub clips: Vec<LabeledClip>,
    pub dropped_unusable: usize,
    pub counts: BTreeMap<ClipLabel, usize>,
}

pub const MANIFEST_HEADER: [&str; 3] = ["clip_path", "label", "transcript"];

/// Reads a tab-separated `clip_path  label  transcript` manifest with a
/// header line. Relative clip paths resolve against the manifest's directory.
pub fn ingest_dataset(manifest_path: &Path) -> Result<IngestReport, EvalError> {
    let text = std::fs::read(manifest_path).map_err(io_err(manifest_path))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(text.as_slice());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != MANIFEST_HEADER {
        return Err(EvalError::BadHeader { expected: MANIFEST_HEADER.join("\t"), got: header.join("\t") });
    }
    let mut clips = Vec::new();
    let mut dropped_unusable = 0;
    let mut counts = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let path = record.get(0).unwrap_or("").trim();
        let raw_label = record.get(1).unwrap_or("");
        let label = ClipLabel::parse(raw_label)
            .ok_or_else(|| EvalError::UnknownLabel { line, label: raw_label.to_string() })?;
        *counts.entry(label).or_insert(0) += 1;
        if label == ClipLabel::Unusable {
            dropped_unusable += 1;
            continue;
        }
        let clip_path = base.join(path);
        if path.is_empty() || !clip_path.is_file() {
            return Err(EvalError::MissingClipFile(clip_path));
        }
        let transcript = record.iter().skip(2).collect::<Vec<_>>().join("\t");
        clips.push(LabeledClip { clip_path, label, transcript });
    }
    if clips.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    tracing::info!(retained = clips.len(), dropped_unusable, "ingested dataset");
    Ok(IngestReport { clips, dropped_unusable, counts })
}

/// Sweep thresholds 0.1 through 0.9.
pub fn sweep_thresholds() -> [f64; 9] {
    std::array::from_fn(|i| (i + 1) as f64 / 10.0)
}

pub fn pause_profile_for(path: &Path, vad: &VadConfig) -> Result<PauseProfile, EvalError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let clip = decode_clip(&bytes).map_err(|source| EvalError::Audio { path: path.to_path_buf(), source })?;
    let segments = detect_speech(&clip, vad);
    Ok(compute_pause_profile(clip.duration(), &segments)?)
}

/// Pause profiles for the Pauses and Neutral clips, computed in parallel.
pub fn pause_profiles(clips: &[LabeledClip], vad: &VadConfig) -> Result<Vec<(ClipLabel, PauseProfile)>, EvalError> {
    clips
        .par_iter()
        .filter(|c| matches!(c.label, ClipLabel::Pauses | ClipLabel::Neutral))
        .map(|c| Ok((c.label, pause_profile_for(&c.clip_path, vad)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauseSweepRow {
    pub threshold: f64,
    /// Recall on Neutral clips, percent.
    pub neutral_pct: f64,
    /// Recall on Pauses clips, percent.
    pub pauses_pct: f64,
}

impl PauseSweepRow {
    pub fn balanced(&self) -> f64 {
        (self.neutral_pct + self.pauses_pct) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauseSweepReport {
    pub metric: PauseMetric,
    pub direction: ThresholdDirection,
    pub rows: Vec<PauseSweepRow>,
    /// Index of the row with the best balanced accuracy (lowest threshold on ties).
    pub best: usize,
    pub n_neutral: usize,
    pub n_pauses: usize,
}

fn recall_pct(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

pub fn sweep_pause_thresholds(
    samples: &[(ClipLabel, PauseProfile)],
    metric: PauseMetric,
    direction: ThresholdDirection,
) -> Result<PauseSweepReport, EvalError> {
    let neutral: Vec<&PauseProfile> = samples.iter().filter(|s| s.0 == ClipLabel::Neutral).map(|s| &s.1).collect();
    let pauses: Vec<&PauseProfile> = samples.iter().filter(|s| s.0 == ClipLabel::Pauses).map(|s| &s.1).collect();
    if neutral.is_empty() || pauses.is_empty() {
        return Err(EvalError::EmptySubset("pause sweep needs both Neutral and Pauses clips".into()));
    }
    let rows: Vec<PauseSweepRow> = sweep_thresholds()
        .into_iter()
        .map(|threshold| {
            let cfg = PauseThresholdConfig { metric, threshold, direction };
            let hit = |set: &[&PauseProfile], class| set.iter().filter(|p| classify_pauses(p, &cfg) == class).count();
            PauseSweepRow {
                threshold,
                neutral_pct: recall_pct(hit(&neutral, PauseClass::Neutral), neutral.len()),
                pauses_pct: recall_pct(hit(&pauses, PauseClass::Pauses), pauses.len()),
            }
        })
        .collect();
    let best = argmax_first(rows.iter().map(PauseSweepRow::balanced));
    Ok(PauseSweepReport { metric, direction, rows, best, n_neutral: neutral.len(), n_pauses: pauses.len() })
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn render_pause_table(report: &PauseSweepReport) -> String {
    let dir = match report.direction {
        ThresholdDirection::AtOrAboveIsPauses => "at or above is Pauses",
        ThresholdDirection::BelowIsPauses => "below is Pauses",
    };
    let mut out = format!(
        "{} ({dir}; n_neutral={}, n_pauses={})\n{:<10} {:>9} {:>9}\n",
        report.metric.name(),
        report.n_neutral,
        report.n_pauses,
        "Threshold",
        "Neutral",
        "Pauses"
    );
    for (i, r) in report.rows.iter().enumerate() {
        let mark = if i == report.best { "  *" } else { "" };
        let _ = writeln!(out, "{:<10.1} {:>8.2}% {:>8.2}%{mark}", r.threshold, r.neutral_pct, r.pauses_pct);
    }
    out
}

/// Support-weighted mean of per-class F1 over the classes present in either list.
pub fn weighted_f1<T: Eq + Hash + Ord + Clone>(truth: &[T], pred: &[T]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let classes: BTreeSet<&T> = truth.iter().chain(pred.iter()).collect();
    let mut total = 0.0;
    for c in classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| *t == c && *p == c).count() as f64;
        let support = truth.iter().filter(|t| *t == c).count() as f64;
        let predicted = pred.iter().filter(|p| *p == c).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (support + predicted) };
        total += f1 * support;
    }
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionGridRow {
    pub setup: String,
    pub f1_by_threshold: Vec<f64>,
    pub best_threshold: f64,
    pub best_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSweepReport {
    pub thresholds: Vec<f64>,
    pub rows: Vec<EmotionGridRow>,
    pub n_negative: usize,
    pub n_neutral: usize,
}

/// Weighted F1 over {Negative, Neutral} for every preset setup and threshold.
/// Clips with other labels are ignored.
pub fn sweep_emotion_setups(samples: &[(ClipLabel, EmotionDistribution)]) -> Result<EmotionSweepReport, EvalError> {
    let subset: Vec<_> = samples
        .iter()
        .filter(|(l, _)| matches!(l, ClipLabel::Negative | ClipLabel::Neutral))
        .collect();
    if subset.is_empty() {
        return Err(EvalError::EmptySubset("emotion sweep needs Negative or Neutral clips".into()));
    }
    let truth: Vec<NegativeClass> = subset
        .iter()
        .map(|(l, _)| if *l == ClipLabel::Negative { NegativeClass::Negative } else { NegativeClass::NotNegative })
        .collect();
    let thresholds = sweep_thresholds();
    let rows = AggregationSetup::presets(0.5)
        .into_iter()
        .map(|setup| {
            let scores: Vec<f64> = subset.iter().map(|(_, d)| aggregate_negative(d, &setup)).collect();
            let f1s: Vec<f64> = thresholds
                .iter()
                .map(|&t| {
                    let pred: Vec<NegativeClass> = scores.iter().map(|&s| classify_negative(s, t)).collect();
                    weighted_f1(&truth, &pred).expect("equal non-empty lengths")
                })
                .collect();
            let best = argmax_first(f1s.iter().copied());
            EmotionGridRow { setup: setup.name.clone(), best_threshold: thresholds[best], best_f1: f1s[best], f1_by_threshold: f1s }
        })
        .collect();
    Ok(EmotionSweepReport {
        thresholds: thresholds.to_vec(),
        rows,
        n_negative: truth.iter().filter(|c| **c == NegativeClass::Negative).count(),
        n_neutral: truth.iter().filter(|c| **c == NegativeClass::NotNegative).count(),
    })
}

pub fn render_emotion_table(report: &EmotionSweepReport) -> String {
    let mut out = format!("n_negative={}, n_neutral={}\n{:<8}", report.n_negative, report.n_neutral, "Setup");
    for t in &report.thresholds {
        let _ = write!(out, " {:>6.1}", t);
    }
    let _ = writeln!(out, " {:>10} {:>8}", "Best thr", "Best F1");
    for r in &report.rows {
        let _ = write!(out, "{:<8}", r.setup);
        for f in &r.f1_by_threshold {
            let _ = write!(out, " {:>6.3}", f);
        }
        let _ = writeln!(out, " {:>10.1} {:>8.3}", r.best_threshold, r.best_f1);
    }
    out
}

/// On-disk scorer cache keyed by clip checksum; writes are atomic per key.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    dir: PathBuf,
}

impl ScoreCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<EmotionDistribution>, EvalError> {
        let path = self.path(key);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|_| EvalError::CorruptCache(key.into())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(EvalError::Io { path, source: e }),
        }
    }

    pub fn put(&self, key: &str, dist: &EmotionDistribution) -> Result<(), EvalError> {
        let path = self.path(key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let body = serde_json::to_vec(dist).expect("distribution serializes");
        std::fs::write(&tmp, body).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// Scores Negative and Neutral clips in parallel, consulting the cache first.
pub fn score_clips(
    clips: &[LabeledClip],
    scorer: &dyn EmotionScorer,
    cache: Option<&ScoreCache>,
) -> Result<Vec<(ClipLabel, EmotionDistribution)>, EvalError> {
    clips
        .par_iter()
        .filter(|c| matches!(c.label, ClipLabel::Negative | ClipLabel::Neutral))
        .map(|c| {
            let bytes = std::fs::read(&c.clip_path).map_err(io_err(&c.clip_path))?;
            let key = sha256_hex(&bytes);
            if let Some(hit) = cache.map(|k| k.get(&key)).transpose()?.flatten() {
                return Ok((c.label, hit));
            }
            let clip = decode_clip(&bytes).map_err(|source| EvalError::Audio { path: c.clip_path.clone(), source })?;
            let dist = scorer.score_emotion(&clip)?;
            if let Some(k) = cache {
                k.put(&key, &dist)?;
            }
            Ok((c.label, dist))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarEvalReport {
    pub n: usize,
    pub exact_match_rate: f64,
    pub substring_match_rate: f64,
}

pub fn grammar_eval(pairs: &[(String, String)]) -> Result<GrammarEvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = pairs.len();
    let em = pairs.iter().filter(|(p, g)| exact_match(p, g)).count();
    let sm = pairs.iter().filter(|(p, g)| substring_match(p, g)).count();
    Ok(GrammarEvalReport { n, exact_match_rate: em as f64 / n as f64, substring_match_rate: sm as f64 / n as f64 })
}

/// Reads a `prediction  gold` TSV with a header line.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, EvalError> {
    let text = std::fs::read(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(text.as_slice());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["prediction", "gold"] {
        return Err(EvalError::BadHeader { expected: "prediction\tgold".into(), got: header.join("\t") });
    }
    reader
        .records()
        .map(|r| {
            let r = r?;
            Ok((r.get(0).unwrap_or("").to_string(), r.get(1).unwrap_or("").to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::EmotionLabel;
    use crate::audio::synth_tone_layout;

    fn apl(v: f64) -> PauseProfile {
        PauseProfile { silence_ratio: v, pause_rate: v, avg_pause_length: v, pause_count: 1, clip_duration: 5.0 }
    }

    #[test]
    fn thresholds_exact() {
        let t = sweep_thresholds();
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], 0.1);
        assert_eq!(t[8], 0.9);
        assert_eq!(t[2], 0.3);
    }

    #[test]
    fn separable_pause_corpus() {
        let mut s = vec![(ClipLabel::Pauses, apl(0.9)); 5];
        s.extend(vec![(ClipLabel::Neutral, apl(0.1)); 7]);
        let r = sweep_pause_thresholds(&s, PauseMetric::AvgPauseLength, ThresholdDirection::AtOrAboveIsPauses).unwrap();
        assert_eq!(r.rows.len(), 9);
        for row in &r.rows[1..] {
            assert_eq!((row.neutral_pct, row.pauses_pct), (100.0, 100.0));
        }
        assert_eq!(r.rows[0].neutral_pct, 0.0);
        assert_eq!(r.best, 1);
    }

    #[test]
    fn singleton_class_means() {
        let s = [(ClipLabel::Pauses, apl(0.68)), (ClipLabel::Neutral, apl(0.49))];
        let r = sweep_pause_thresholds(&s, PauseMetric::AvgPauseLength, ThresholdDirection::AtOrAboveIsPauses).unwrap();
        let row = r.rows[4];
        assert_eq!(row.threshold, 0.5);
        assert_eq!((row.neutral_pct, row.pauses_pct), (100.0, 100.0));
        assert!(sweep_pause_thresholds(&s[..1], PauseMetric::AvgPauseLength, ThresholdDirection::BelowIsPauses).is_err());
    }

    #[test]
    fn f1_hand_cases() {
        use ClipLabel::{Neutral as N, Pauses as P};
        assert!((weighted_f1(&[N, N, P, P], &[N, P, P, P]).unwrap() - 0.7333).abs() < 1e-4);
        assert_eq!(weighted_f1(&[N, P, P], &[N, P, P]).unwrap(), 1.0);
        assert!((weighted_f1(&[N, N, P, P], &[N, N, N, N]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(weighted_f1(&[N], &[N, P]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(weighted_f1::<ClipLabel>(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn separable_emotion_grid() {
        let angry = EmotionDistribution::from_pairs(&[(EmotionLabel::Angry, 0.9), (EmotionLabel::Neutral, 0.1)]).unwrap();
        let calm = EmotionDistribution::from_pairs(&[(EmotionLabel::Neutral, 1.0)]).unwrap();
        let mut s = vec![(ClipLabel::Negative, angry); 4];
        s.extend(vec![(ClipLabel::Neutral, calm); 6]);
        s.push((ClipLabel::Pauses, angry));
        let r = sweep_emotion_setups(&s).unwrap();
        assert_eq!(r.rows.len(), 6);
        let a = r.rows.iter().find(|row| row.setup == "A").unwrap();
        assert!(a.f1_by_threshold.iter().all(|&f| f == 1.0));
        assert_eq!(a.best_threshold, 0.1);
        assert_eq!(r.n_negative + r.n_neutral, 10);
        assert!(render_emotion_table(&r).contains("ADFS"));
    }

    #[test]
    fn grammar_rates() {
        let same = vec![("A b.".to_string(), "A b.".to_string()); 3];
        assert_eq!(grammar_eval(&same).unwrap().exact_match_rate, 1.0);
        let period = vec![("I like books.".to_string(), "I like books".to_string())];
        let r = grammar_eval(&period).unwrap();
        assert_eq!((r.exact_match_rate, r.substring_match_rate), (0.0, 1.0));
        assert!(grammar_eval(&[]).is_err());
    }

    #[test]
    fn ingest_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_tone_layout(1.0, 16_000, &[(0.1, 0.4), (0.7, 0.9)], 300.0, 0.3);
        std::fs::write(dir.path().join("a.wav"), clip.to_wav_bytes()).unwrap();
        let manifest = dir.path().join("m.tsv");
        std::fs::write(
            &manifest,
            "clip_path\tlabel\ttranscript\na.wav\tNeutral\thi there\nmissing.wav\tUnusable\t\na.wav\tpauses\tuh\na.wav\tnegative\tno\n",
        )
        .unwrap();
        let rep = ingest_dataset(&manifest).unwrap();
        assert_eq!(rep.clips.len(), 3);
        assert_eq!(rep.dropped_unusable, 1);
        assert_eq!(rep.clips[0].transcript, "hi there");

        let profiles = pause_profiles(&rep.clips, &VadConfig::default()).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0].1.pause_count, 1);

        let cache = ScoreCache::new(dir.path().join("cache")).unwrap();
        let scorer = crate::gateway::StubEmotionScorer::default();
        let scored = score_clips(&rep.clips, &scorer, Some(&cache)).unwrap();
        assert_eq!(scored.len(), 2);
        let key = sha256_hex(&clip.to_wav_bytes());
        assert_eq!(cache.get(&key).unwrap(), Some(EmotionDistribution::uniform()));

        std::fs::write(&manifest, "clip_path\tlabel\ttranscript\na.wav\tangry\tx\n").unwrap();
        assert!(matches!(ingest_dataset(&manifest), Err(EvalError::UnknownLabel { .. })));
        std::fs::write(&manifest, "clip_path\tlabel\ttranscript\nb.wav\tneutral\tx\n").unwrap();
        assert!(matches!(ingest_dataset(&manifest), Err(EvalError::MissingClipFile(_))));
        std::fs::write(&manifest, "clip_path\tlabel\ttranscript\nb.wav\tunusable\tx\n").unwrap();
        assert!(matches!(ingest_dataset(&manifest), Err(EvalError::EmptyDataset)));
    }
}
