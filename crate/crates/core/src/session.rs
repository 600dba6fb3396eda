//! Sessions, the per-turn pipeline and the append-only record store.
//!
//! Store layout under the data directory:
//!
//! ```text
//! sessions/<id>/session.json    session metadata and config
//! sessions/<id>/records.jsonl   one TurnRecord per line, append-only
//! sessions/<id>/audio/<sha>.wav user and bot audio by checksum
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::{decide_distress, AffectError, AggregationSetup, DistressDecision};
use crate::audio::{decode_clip, detect_speech, AudioError, VadConfig};
use crate::empathy::{build_segment, empathetic_feedback, sha256_hex, EmpathyError, PromptSet};
use crate::gateway::{ConversationConfig, GatewayError, ModelGateway};
use crate::grammar::{align_edits, render_recast, sentence_tokenize, validate_correction, CorrectionResult, GrammarError};
use crate::orchestrator::{
    answer_query, audit_history, build_transition, decide_turn, ActionKind, AuditViolation, OrchestratorError,
    SpacingPolicy, TurnOutcome, TurnState,
};
use crate::pause::{compute_pause_profile, PauseError, PauseMetric, PauseProfile, PauseThresholdConfig, ThresholdDirection};

pub const APOLOGY: &str = "Sorry, I'm having some technical trouble right now. Could you say that again?";
pub const DEFAULT_VOICE: &str = "slt";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("store error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt store entry {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("stored history fails replay audit: {0}")]
    Audit(#[from] AuditViolation),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub conversation: ConversationConfig,
    pub spacing: SpacingPolicy,
    pub aggregation: AggregationSetup,
    pub pause: PauseThresholdConfig,
    pub vad: VadConfig,
    pub voice_id: String,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            conversation: ConversationConfig::default(),
            spacing: SpacingPolicy::default(),
            aggregation: AggregationSetup::default(),
            pause: PauseThresholdConfig::default(),
            vad: VadConfig::default(),
            voice_id: DEFAULT_VOICE.into(),
            seed: 0,
        }
    }
}

/// Optional per-session overrides, as accepted by session creation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub topic: Option<String>,
    pub persona: Option<String>,
    pub vocabulary: Option<Vec<String>>,
    pub min_gap_grammar: Option<i64>,
    pub min_gap_empathy: Option<i64>,
    /// Preset name: ADFS, ADF, AD, AF, DF or A.
    pub aggregation_setup: Option<String>,
    pub negative_threshold: Option<f64>,
    pub pause_metric: Option<PauseMetric>,
    pub pause_threshold: Option<f64>,
    pub pause_direction: Option<ThresholdDirection>,
    pub voice_id: Option<String>,
    pub seed: Option<u64>,
}

fn gap(name: &str, v: i64) -> Result<u64, SessionError> {
    u64::try_from(v).map_err(|_| SessionError::InvalidConfig(format!("{name} must be >= 0, got {v}")))
}

impl SessionConfig {
    pub fn with_overrides(&self, o: &ConfigOverrides) -> Result<Self, SessionError> {
        let mut c = self.clone();
        if let Some(t) = &o.topic {
            c.conversation.topic = t.clone();
        }
        if let Some(p) = &o.persona {
            c.conversation.persona = p.clone();
        }
        if let Some(v) = &o.vocabulary {
            c.conversation.vocabulary = v.clone();
        }
        if let Some(g) = o.min_gap_grammar {
            c.spacing.min_gap_grammar = gap("min_gap_grammar", g)?;
        }
        if let Some(g) = o.min_gap_empathy {
            c.spacing.min_gap_empathy = gap("min_gap_empathy", g)?;
        }
        let bad = |e: AffectError| SessionError::InvalidConfig(e.to_string());
        if let Some(name) = &o.aggregation_setup {
            c.aggregation = AggregationSetup::preset(name, c.aggregation.threshold)
                .ok_or_else(|| SessionError::InvalidConfig(format!("unknown aggregation setup {name}")))?;
        }
        if let Some(t) = o.negative_threshold {
            c.aggregation = c.aggregation.with_threshold(t).map_err(bad)?;
        }
        let pause_err = |e: PauseError| SessionError::InvalidConfig(e.to_string());
        c.pause = PauseThresholdConfig::new(
            o.pause_metric.unwrap_or(c.pause.metric),
            o.pause_threshold.unwrap_or(c.pause.threshold),
            o.pause_direction.unwrap_or(c.pause.direction),
        )
        .map_err(pause_err)?;
        if let Some(v) = &o.voice_id {
            c.voice_id = v.clone();
        }
        if let Some(s) = o.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.conversation.validate().map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        if self.voice_id.trim().is_empty() {
            return Err(SessionError::InvalidConfig("voice_id must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub config: SessionConfig,
    pub created_at: DateTime<Utc>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self { session_id: uuid::Uuid::new_v4().simple().to_string(), config, created_at: Utc::now() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u64,
    pub user_audio_ref: String,
    pub transcript: String,
    pub pause_profile: Option<PauseProfile>,
    pub distress: Option<DistressDecision>,
    pub correction: Option<CorrectionResult>,
    /// Absent when the turn failed upstream.
    pub action: Option<ActionKind>,
    pub bot_text: String,
    pub bot_audio_ref: Option<String>,
    pub cached_response: Option<String>,
    pub transition_prefix: Option<String>,
    pub error: Option<String>,
    /// Milliseconds per pipeline stage.
    pub timings: BTreeMap<String, u64>,
}

/// Per-conversation counts computable from records alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationStats {
    pub turns: usize,
    pub grammar_feedback: usize,
    pub empathy_feedback: usize,
    pub query_answers: usize,
    pub errors: usize,
}

pub fn conversation_stats(records: &[TurnRecord]) -> ConversationStats {
    let count = |k| records.iter().filter(|r| r.action == Some(k)).count();
    ConversationStats {
        turns: records.len(),
        grammar_feedback: count(ActionKind::GrammarFeedback),
        empathy_feedback: count(ActionKind::EmpathyFeedback),
        query_answers: count(ActionKind::AnswerQuery),
        errors: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Progress notification for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub turn_index: u64,
    pub stage: String,
    pub detail: String,
}

/// Rebuilds orchestrator state by replaying records in order.
pub fn replay_records(records: &[TurnRecord]) -> Result<TurnState, SessionError> {
    let mut state = TurnState::new();
    for r in records {
        match r.action {
            Some(kind) if r.error.is_none() => state.commit(
                &r.transcript,
                TurnOutcome {
                    kind,
                    bot_text: r.bot_text.clone(),
                    cached_response: r.cached_response.clone(),
                    transition_prefix: r.transition_prefix.clone(),
                },
            )?,
            _ => state.skip_turn(),
        }
    }
    Ok(state)
}

/// Replays records and checks the spacing and delivery invariants.
pub fn audit_records(records: &[TurnRecord], policy: &SpacingPolicy) -> Result<TurnState, SessionError> {
    let state = replay_records(records)?;
    audit_history(&state.history, policy)?;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let root = data_dir.into().join("sessions");
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
    }

    pub fn create(&self, session: &Session) -> Result<(), SessionError> {
        let dir = self.dir(&session.session_id);
        let audio = dir.join("audio");
        fs::create_dir_all(&audio).map_err(io_err(&audio))?;
        let path = dir.join("session.json");
        let body = serde_json::to_vec_pretty(session).expect("session serializes");
        fs::write(&path, body).map_err(io_err(&path))?;
        fs::File::create(dir.join("records.jsonl")).map_err(io_err(&dir))?;
        Ok(())
    }

    pub fn load_session(&self, id: &str) -> Result<Session, SessionError> {
        if !Self::valid_id(id) {
            return Err(SessionError::SessionNotFound(id.into()));
        }
        let path = self.dir(id).join("session.json");
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SessionError::SessionNotFound(id.into()),
            _ => SessionError::Io { path: path.clone(), source: e },
        })?;
        serde_json::from_slice(&bytes).map_err(|e| SessionError::Corrupt { path, detail: e.to_string() })
    }

    pub fn list_sessions(&self) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join("session.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Stores audio under its checksum and returns the file name.
    pub fn put_audio(&self, id: &str, wav: &[u8]) -> Result<String, SessionError> {
        let name = format!("{}.wav", sha256_hex(wav));
        let path = self.dir(id).join("audio").join(&name);
        if !path.exists() {
            fs::write(&path, wav).map_err(io_err(&path))?;
        }
        Ok(name)
    }

    pub fn audio_path(&self, id: &str, name: &str) -> PathBuf {
        self.dir(id).join("audio").join(name)
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append_record(&self, id: &str, record: &TurnRecord) -> Result<(), SessionError> {
        let path = self.dir(id).join("records.jsonl");
        let mut file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        file.write_all(&line).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    pub fn load_records(&self, id: &str) -> Result<Vec<TurnRecord>, SessionError> {
        self.load_session(id)?;
        let path = self.dir(id).join("records.jsonl");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| SessionError::Corrupt { path: path.clone(), detail: e.to_string() })
            })
            .collect()
    }

    /// Loads a session and rebuilds its state from the record log.
    pub fn load_runtime(&self, id: &str) -> Result<SessionRuntime, SessionError> {
        let session = self.load_session(id)?;
        let records = self.load_records(id)?;
        let state = audit_records(&records, &session.config.spacing)?;
        Ok(SessionRuntime { session, state })
    }
}

/// A session and its live orchestrator state.
#[derive(Debug, Clone)]
pub struct SessionRuntime {
    pub session: Session,
    pub state: TurnState,
}

impl SessionRuntime {
    pub fn new(session: Session) -> Self {
        Self { session, state: TurnState::new() }
    }
}

fn turn_seed(seed: u64, turn: u64, salt: u64) -> u64 {
    seed ^ turn.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

#[derive(Debug, Error)]
enum TurnFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Empathy(#[from] EmpathyError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Pause(#[from] PauseError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

struct Rendered {
    kind: ActionKind,
    bot_text: String,
    cached: Option<String>,
    prefix: Option<String>,
}

/// Runs the turn pipeline against a gateway.
#[derive(Clone)]
pub struct TurnEngine {
    pub gateway: ModelGateway,
    pub prompts: &'static PromptSet,
}

impl TurnEngine {
    pub fn new(gateway: ModelGateway) -> Self {
        Self { gateway, prompts: PromptSet::builtin() }
    }

    /// Processes one uploaded clip. The record is persisted before the state
    /// is advanced. Upstream failures produce an apology record rather than
    /// an error.
    pub fn process_turn(
        &self,
        store: &SessionStore,
        rt: &mut SessionRuntime,
        wav: &[u8],
        events: &dyn Fn(StageEvent),
    ) -> Result<TurnRecord, SessionError> {
        let turn = rt.state.turn_index;
        let emit = |stage: &str, detail: String| events(StageEvent { turn_index: turn, stage: stage.into(), detail });
        let clip = decode_clip(wav)?;
        let id = rt.session.session_id.clone();
        let user_audio_ref = store.put_audio(&id, wav)?;
        emit("received", format!("{:.2}s of audio", clip.duration()));

        let mut record = TurnRecord {
            turn_index: turn,
            user_audio_ref,
            transcript: String::new(),
            pause_profile: None,
            distress: None,
            correction: None,
            action: None,
            bot_text: String::new(),
            bot_audio_ref: None,
            cached_response: None,
            transition_prefix: None,
            error: None,
            timings: BTreeMap::new(),
        };

        let result = self.run_pipeline(store, rt, &clip, &mut record, &emit);
        match result {
            Ok(rendered) => {
                record.action = Some(rendered.kind);
                record.bot_text = rendered.bot_text.clone();
                record.cached_response = rendered.cached.clone();
                record.transition_prefix = rendered.prefix.clone();
                store.append_record(&id, &record)?;
                rt.state.commit(
                    &record.transcript,
                    TurnOutcome {
                        kind: rendered.kind,
                        bot_text: rendered.bot_text,
                        cached_response: rendered.cached,
                        transition_prefix: rendered.prefix,
                    },
                )?;
            }
            Err(err) => {
                tracing::error!(session = %id, turn, error = %err, "turn failed");
                record.error = Some(err.to_string());
                record.bot_text = APOLOGY.into();
                record.bot_audio_ref = self
                    .gateway
                    .tts
                    .synthesize(APOLOGY, &rt.session.config.voice_id)
                    .ok()
                    .and_then(|c| store.put_audio(&id, &c.to_wav_bytes()).ok());
                store.append_record(&id, &record)?;
                rt.state.skip_turn();
                emit("error", err.to_string());
            }
        }
        emit("done", format!("{:?}", record.action));
        Ok(record)
    }

    fn run_pipeline(
        &self,
        store: &SessionStore,
        rt: &SessionRuntime,
        clip: &crate::audio::AudioClip,
        record: &mut TurnRecord,
        emit: &dyn Fn(&str, String),
    ) -> Result<Rendered, TurnFailure> {
        let cfg = &rt.session.config;
        let state = &rt.state;
        let gw = &self.gateway;
        let mut timed = |name: &str, started: Instant| {
            record.timings.insert(name.to_string(), started.elapsed().as_millis() as u64);
        };

        let t = Instant::now();
        let transcript = gw.asr.transcribe(clip)?;
        timed("transcribe", t);
        emit("transcribed", transcript.clone());

        let t = Instant::now();
        let segments = detect_speech(clip, &cfg.vad);
        let profile = compute_pause_profile(clip.duration(), &segments)?;
        timed("pauses", t);

        let t = Instant::now();
        let dist = gw.emotion.score_emotion(clip)?;
        let distress = decide_distress(&dist, &profile, &cfg.aggregation, &cfg.pause);
        timed("emotion", t);
        emit("affect", format!("distressed={}", distress.distressed));

        let t = Instant::now();
        let grammar_eligible = !state.awaiting_feedback_reply
            && !transcript.trim().is_empty()
            && SpacingPolicy::gap_open(state.last_grammar_turn, state.turn_index, cfg.spacing.min_gap_grammar);
        let mut correction = CorrectionResult::none(&transcript);
        if grammar_eligible {
            for sentence in sentence_tokenize(&transcript) {
                let corrected = gw.grammar.correct(&sentence)?;
                let result = validate_correction(&sentence, &corrected);
                if result.accepted {
                    correction = result;
                    break;
                }
            }
        }
        timed("grammar", t);

        let mut decision = decide_turn(state, &transcript, &distress, &correction, &cfg.spacing);
        let mut segment = None;
        if decision.kind == ActionKind::EmpathyFeedback {
            match build_segment(&state.history_with_pending(&transcript)) {
                Ok(s) => segment = Some(s),
                Err(EmpathyError::NoUserUtterances) => {
                    tracing::info!(turn = state.turn_index, "no utterances for empathy; routing without distress");
                    decision = decide_turn(state, &transcript, &DistressDecision::calm(), &correction, &cfg.spacing);
                }
                Err(e) => return Err(e.into()),
            }
        }
        emit("decided", format!("{:?}", decision.kind));
        record.transcript = transcript.clone();
        record.pause_profile = Some(profile);
        record.distress = Some(distress);
        record.correction = grammar_eligible.then(|| correction.clone());

        let t = Instant::now();
        let converse = || gw.conversation.converse(&state.view_with(&transcript), &cfg.conversation);
        let rendered = match decision.kind {
            ActionKind::Converse => {
                Rendered { kind: decision.kind, bot_text: converse()?, cached: None, prefix: None }
            }
            ActionKind::GrammarFeedback => {
                let edits = align_edits(&correction.original, &correction.corrected);
                let fb = render_recast(&correction, &edits, turn_seed(cfg.seed, state.turn_index, 1))?;
                Rendered { kind: decision.kind, bot_text: fb.full_text, cached: Some(converse()?), prefix: None }
            }
            ActionKind::EmpathyFeedback => {
                let segment = segment.expect("segment built for empathy");
                let text = empathetic_feedback(self.prompts, &segment, gw.empathy.as_ref())?;
                Rendered { kind: decision.kind, bot_text: text, cached: Some(converse()?), prefix: None }
            }
            ActionKind::AnswerQuery => {
                let text = answer_query(state.query_window(), &transcript, gw.empathy.as_ref())?;
                Rendered { kind: decision.kind, bot_text: text, cached: None, prefix: None }
            }
            ActionKind::Transition => {
                let cached = state.cached_bot_response.clone().unwrap_or_default();
                let (prefix, text) = build_transition(&transcript, &cached, turn_seed(cfg.seed, state.turn_index, 2))?;
                Rendered { kind: decision.kind, bot_text: text, cached: None, prefix: Some(prefix) }
            }
        };
        timed("render", t);
        emit("rendered", rendered.bot_text.clone());

        let t = Instant::now();
        let audio = gw.tts.synthesize(&rendered.bot_text, &cfg.voice_id)?;
        record.bot_audio_ref = Some(store.put_audio(&rt.session.session_id, &audio.to_wav_bytes())?);
        timed("synthesize", t);
        emit("synthesized", format!("{:.2}s", audio.duration()));
        Ok(rendered)
    }
}
