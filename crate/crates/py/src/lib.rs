//! Python bindings: pause metrics, distress decisions, recasts, dialogue
//! rules and stub-backed sessions.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;
use tutor_core::affect::{self, AggregationSetup, EmotionDistribution, EmotionLabel};
use tutor_core::audio::{self, decode_clip, SegmentList, SpeechSegment, VadConfig};
use tutor_core::gateway::{ModelGateway, StubRecognizer};
use tutor_core::grammar;
use tutor_core::orchestrator;
use tutor_core::pause::{self, PauseThresholdConfig};
use tutor_core::session::{ConfigOverrides, Session, SessionConfig, SessionError, SessionRuntime, SessionStore, TurnEngine};

create_exception!(tutor, TutorError, PyException);
create_exception!(tutor, SessionNotFound, TutorError);
create_exception!(tutor, InvalidConfig, TutorError);
create_exception!(tutor, MalformedFile, TutorError);

fn err(e: impl std::fmt::Display) -> PyErr {
    TutorError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::SessionNotFound(_) => SessionNotFound::new_err(e.to_string()),
        SessionError::InvalidConfig(_) => InvalidConfig::new_err(e.to_string()),
        SessionError::Audio(_) => MalformedFile::new_err(e.to_string()),
        other => err(other),
    }
}

/// Converts any serializable value to native Python objects via `json`.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| InvalidConfig::new_err(e.to_string()))
}

/// Pause statistics of one clip. Lengths are in seconds.
#[pyclass(frozen, get_all, skip_from_py_object, module = "tutor")]
#[derive(Clone)]
pub struct PauseProfile {
    silence_ratio: f64,
    pause_rate: f64,
    avg_pause_length: f64,
    pause_count: usize,
    clip_duration: f64,
}

impl From<pause::PauseProfile> for PauseProfile {
    fn from(p: pause::PauseProfile) -> Self {
        Self {
            silence_ratio: p.silence_ratio,
            pause_rate: p.pause_rate,
            avg_pause_length: p.avg_pause_length,
            pause_count: p.pause_count,
            clip_duration: p.clip_duration,
        }
    }
}

impl From<&PauseProfile> for pause::PauseProfile {
    fn from(p: &PauseProfile) -> Self {
        Self {
            silence_ratio: p.silence_ratio,
            pause_rate: p.pause_rate,
            avg_pause_length: p.avg_pause_length,
            pause_count: p.pause_count,
            clip_duration: p.clip_duration,
        }
    }
}

#[pymethods]
impl PauseProfile {
    fn __repr__(&self) -> String {
        format!(
            "PauseProfile(silence_ratio={:.4}, pause_rate={:.4}, avg_pause_length={:.4}, pause_count={}, clip_duration={:.3})",
            self.silence_ratio, self.pause_rate, self.avg_pause_length, self.pause_count, self.clip_duration
        )
    }
}

fn segment_list(segments: Vec<(f64, f64)>) -> PyResult<SegmentList> {
    SegmentList::new(segments.into_iter().map(|(start, end)| SpeechSegment { start, end }).collect()).map_err(err)
}

/// Pause profile of a clip of `duration` seconds with the given speech segments.
#[pyfunction]
fn pause_profile(duration: f64, segments: Vec<(f64, f64)>) -> PyResult<PauseProfile> {
    Ok(pause::compute_pause_profile(duration, &segment_list(segments)?).map_err(err)?.into())
}

/// Speech segments of a WAV clip as `(start, end)` pairs in seconds.
#[pyfunction]
fn detect_speech(wav: &[u8]) -> PyResult<Vec<(f64, f64)>> {
    let clip = decode_clip(wav).map_err(|e| MalformedFile::new_err(e.to_string()))?;
    Ok(audio::detect_speech(&clip, &VadConfig::default()).segments().iter().map(|s| (s.start, s.end)).collect())
}

/// Pause profile of a WAV clip, segmented with the default detector.
#[pyfunction]
fn analyze_clip(wav: &[u8]) -> PyResult<PauseProfile> {
    let clip = decode_clip(wav).map_err(|e| MalformedFile::new_err(e.to_string()))?;
    let segments = audio::detect_speech(&clip, &VadConfig::default());
    Ok(pause::compute_pause_profile(clip.duration(), &segments).map_err(err)?.into())
}

/// Renders a mono 16-bit WAV with a tone over each `(start, end)` span.
#[pyfunction]
#[pyo3(signature = (duration, segments, sample_rate=16_000, frequency=220.0, amplitude=0.3))]
fn synth_wav<'py>(
    py: Python<'py>,
    duration: f64,
    segments: Vec<(f64, f64)>,
    sample_rate: u32,
    frequency: f64,
    amplitude: f32,
) -> Bound<'py, PyBytes> {
    let clip = audio::synth_tone_layout(duration, sample_rate, &segments, frequency, amplitude);
    PyBytes::new(py, &clip.to_wav_bytes())
}

/// Content fingerprint used to key stub transcripts and scores.
#[pyfunction]
fn fingerprint(wav: &[u8]) -> PyResult<String> {
    Ok(decode_clip(wav).map_err(|e| MalformedFile::new_err(e.to_string()))?.fingerprint())
}

/// Distress decision from emotion probabilities and a pause profile.
#[pyfunction]
#[pyo3(signature = (probabilities, profile, setup="A", threshold=0.4, pause_threshold=0.5))]
fn decide_distress<'py>(
    py: Python<'py>,
    probabilities: BTreeMap<String, f64>,
    profile: &PauseProfile,
    setup: &str,
    threshold: f64,
    pause_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let map = probabilities
        .iter()
        .map(|(k, v)| Ok((EmotionLabel::parse(k).map_err(err)?, *v)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let (dist, _) = EmotionDistribution::from_map(&map).map_err(err)?;
    let setup = AggregationSetup::preset(setup, threshold)
        .ok_or_else(|| InvalidConfig::new_err(format!("unknown aggregation setup {setup:?}")))?
        .with_threshold(threshold)
        .map_err(|e| InvalidConfig::new_err(e.to_string()))?;
    let pause_cfg = PauseThresholdConfig { threshold: pause_threshold, ..PauseThresholdConfig::default() };
    to_py(py, &affect::decide_distress(&dist, &profile.into(), &setup, &pause_cfg))
}

/// Validates a single-sentence correction. Returns a dict with `accepted`.
#[pyfunction]
fn validate_correction<'py>(py: Python<'py>, original: &str, corrected: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &grammar::validate_correction(original, corrected))
}

/// Recast feedback for an accepted correction, or None when rejected.
#[pyfunction]
#[pyo3(signature = (original, corrected, seed=0))]
fn recast<'py>(py: Python<'py>, original: &str, corrected: &str, seed: u64) -> PyResult<Option<Bound<'py, PyAny>>> {
    let result = grammar::validate_correction(original, corrected);
    if !result.accepted {
        return Ok(None);
    }
    let fb = grammar::render_recast(&result, &grammar::align_edits(original, corrected), seed).map_err(err)?;
    to_py(py, &fb).map(Some)
}

#[pyfunction]
fn is_feedback_query(text: &str) -> bool {
    orchestrator::is_feedback_query(text)
}

/// Returns `(prefix, text)` for a transition back to the cached reply.
#[pyfunction]
fn build_transition(reply: &str, cached: &str, seed: u64) -> PyResult<(String, String)> {
    orchestrator::build_transition(reply, cached, seed).map_err(err)
}

#[pyfunction]
fn weighted_f1(truth: Vec<String>, pred: Vec<String>) -> PyResult<f64> {
    tutor_core::eval::weighted_f1(&truth, &pred).map_err(err)
}

/// Sessions backed by an on-disk store and stub models.
#[pyclass(module = "tutor")]
pub struct Tutor {
    store: SessionStore,
    engine: TurnEngine,
    sessions: HashMap<String, SessionRuntime>,
}

impl Tutor {
    fn runtime(&mut self, id: &str) -> PyResult<&mut SessionRuntime> {
        if !self.sessions.contains_key(id) {
            let rt = self.store.load_runtime(id).map_err(session_err)?;
            self.sessions.insert(id.to_string(), rt);
        }
        Ok(self.sessions.get_mut(id).expect("inserted above"))
    }
}

#[pymethods]
impl Tutor {
    /// `transcripts` maps clip fingerprints to what the stub recognizer hears.
    #[new]
    #[pyo3(signature = (data_dir, transcripts=None))]
    fn new(data_dir: PathBuf, transcripts: Option<HashMap<String, String>>) -> PyResult<Self> {
        let mut gateway = ModelGateway::all_stub();
        if let Some(t) = transcripts {
            gateway.asr = Arc::new(StubRecognizer::new(t));
        }
        let store = SessionStore::open(data_dir).map_err(session_err)?;
        Ok(Self { store, engine: TurnEngine::new(gateway), sessions: HashMap::new() })
    }

    /// Creates a session and returns its id. `overrides` takes the same keys
    /// as the HTTP API.
    #[pyo3(signature = (overrides=None))]
    fn create_session(&mut self, py: Python<'_>, overrides: Option<Bound<'_, PyAny>>) -> PyResult<String> {
        let o: ConfigOverrides = match overrides {
            Some(v) => from_py(py, &v)?,
            None => ConfigOverrides::default(),
        };
        let config = SessionConfig::default().with_overrides(&o).map_err(session_err)?;
        let session = Session::new(config).map_err(session_err)?;
        self.store.create(&session).map_err(session_err)?;
        let id = session.session_id.clone();
        self.sessions.insert(id.clone(), SessionRuntime::new(session));
        Ok(id)
    }

    /// Runs one turn on WAV bytes and returns the persisted record.
    fn process_turn<'py>(&mut self, py: Python<'py>, session_id: &str, wav: &[u8]) -> PyResult<Bound<'py, PyAny>> {
        let engine = self.engine.clone();
        let store = self.store.clone();
        let rt = self.runtime(session_id)?;
        let record = engine.process_turn(&store, rt, wav, &|_| {}).map_err(session_err)?;
        to_py(py, &record)
    }

    fn history<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.store.load_records(session_id).map_err(session_err)?)
    }

    fn sessions(&self) -> PyResult<Vec<String>> {
        self.store.list_sessions().map_err(session_err)
    }
}

#[pymodule]
fn tutor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("TutorError", py.get_type::<TutorError>())?;
    m.add("SessionNotFound", py.get_type::<SessionNotFound>())?;
    m.add("InvalidConfig", py.get_type::<InvalidConfig>())?;
    m.add("MalformedFile", py.get_type::<MalformedFile>())?;
    m.add_class::<PauseProfile>()?;
    m.add_class::<Tutor>()?;
    m.add_function(wrap_pyfunction!(pause_profile, m)?)?;
    m.add_function(wrap_pyfunction!(detect_speech, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_clip, m)?)?;
    m.add_function(wrap_pyfunction!(synth_wav, m)?)?;
    m.add_function(wrap_pyfunction!(fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(decide_distress, m)?)?;
    m.add_function(wrap_pyfunction!(validate_correction, m)?)?;
    m.add_function(wrap_pyfunction!(recast, m)?)?;
    m.add_function(wrap_pyfunction!(is_feedback_query, m)?)?;
    m.add_function(wrap_pyfunction!(build_transition, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    Ok(())
}
