//! Clients for the external models (ASR, TTS, conversation, grammar,
//! empathy/judge LMs, emotion scorer).
//!
//! Every kind has a trait, a JSON-over-HTTP implementation that retries with
//! jittered exponential backoff, and a deterministic in-process stub.
//!
//! Wire schemas (all `POST`, JSON in and out; responses may also carry a
//! `latency_ms` field, which is logged and otherwise ignored):
//!
//! | kind           | request                                           | response                       |
//! |----------------|---------------------------------------------------|--------------------------------|
//! | asr            | `{audio_b64, sample_rate}`                        | `{text}`                       |
//! | tts            | `{text, voice_id}`                                | `{audio_b64, sample_rate}`     |
//! | conversation   | `{messages: [{role, text}], topic, persona, vocabulary}` | `{text}`               |
//! | grammar        | `{sentence}`                                      | `{corrected}`                  |
//! | empathy, judge | `{messages: [{role, text}]}`                      | `{text}`                       |
//! | emotion        | `{audio_b64, sample_rate}`                        | `{probabilities: {label: p}}`  |
//!
//! `audio_b64` is the base64 of a complete 16-bit PCM RIFF/WAVE file.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::affect::{AffectError, EmotionDistribution, EmotionLabel};
use crate::audio::{decode_clip, synth_tone_layout, AudioClip};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{service} unavailable after {attempts} attempt(s): {last_error}")]
    UpstreamUnavailable { service: ServiceKind, attempts: u32, last_error: String, timed_out: bool },
    #[error("{service} returned a malformed response: {detail}")]
    MalformedResponse { service: ServiceKind, detail: String },
    #[error("emotion scorer returned an invalid distribution: {0}")]
    MalformedDistribution(#[from] AffectError),
    #[error("invalid request: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Asr,
    Tts,
    Conversation,
    Grammar,
    Empathy,
    Judge,
    Emotion,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 7] = [
        ServiceKind::Asr,
        ServiceKind::Tts,
        ServiceKind::Conversation,
        ServiceKind::Grammar,
        ServiceKind::Empathy,
        ServiceKind::Judge,
        ServiceKind::Emotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::Asr => "asr",
            ServiceKind::Tts => "tts",
            ServiceKind::Conversation => "conversation",
            ServiceKind::Grammar => "grammar",
            ServiceKind::Empathy => "empathy",
            ServiceKind::Judge => "judge",
            ServiceKind::Emotion => "emotion",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const STUB_URL: &str = "stub";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub kind: ServiceKind,
    pub base_url: String,
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

impl ServiceEndpoint {
    pub fn stub(kind: ServiceKind) -> Self {
        Self {
            kind,
            base_url: STUB_URL.into(),
            auth_token: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn is_stub(&self) -> bool {
        self.base_url == STUB_URL
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0) {
            return Err(GatewayError::Contract(format!("{}: timeout must be positive", self.kind)));
        }
        if !self.is_stub() && !self.base_url.starts_with("http") {
            return Err(GatewayError::Contract(format!(
                "{}: base_url must be an http(s) URL or \"stub\"",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

/// Topic, persona and target vocabulary for the conversation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationConfig {
    pub topic: String,
    pub persona: String,
    pub vocabulary: Vec<String>,
}

impl Default for ConversationConfig {
    fn default() -> Self {
        Self {
            topic: "Name a movie that has had an enduring impact on you".into(),
            persona: "Emma, a friendly film student who loves talking about old movies".into(),
            vocabulary: vec![
                "memorable".into(),
                "soundtrack".into(),
                "inspiring".into(),
                "plot".into(),
            ],
        }
    }
}

impl ConversationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.topic.trim().is_empty() {
            return Err(GatewayError::Contract("conversation topic must be non-empty".into()));
        }
        Ok(())
    }
}

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, clip: &AudioClip) -> Result<String, GatewayError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, text: &str, voice_id: &str) -> Result<AudioClip, GatewayError>;
}

pub trait ConversationModel: Send + Sync {
    /// `view` must come from the orchestrator's conversation view, never raw history.
    fn converse(&self, view: &[ChatMessage], config: &ConversationConfig) -> Result<String, GatewayError>;
}

pub trait GrammarCorrector: Send + Sync {
    fn correct(&self, sentence: &str) -> Result<String, GatewayError>;
}

/// Chat-completion model. A multi-call "session" is expressed by resending
/// the growing message list.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError>;
}

pub trait EmotionScorer: Send + Sync {
    fn score_emotion(&self, clip: &AudioClip) -> Result<EmotionDistribution, GatewayError>;
}

// ---------------------------------------------------------------------------
// Transport and retries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Unavailable(String),
    BadResponse(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("timed out"),
            TransportError::Unavailable(m) => write!(f, "unavailable: {m}"),
            TransportError::BadResponse(m) => write!(f, "bad response: {m}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        auth_token: Option<&str>,
        timeout: Duration,
        body: &Value,
    ) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Debug, Default, Clone)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        auth_token: Option<&str>,
        timeout: Duration,
        body: &Value,
    ) -> Result<Value, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url);
        if let Some(token) = auth_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Unavailable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(TransportError::Unavailable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(TransportError::BadResponse(format!("HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::BadResponse(e.to_string()))
    }
}

/// Replays a fixed sequence of transport outcomes and counts calls.
///
/// Once the script runs out the last outcome repeats.
pub struct ScriptedTransport {
    script: Mutex<Vec<Result<Value, TransportError>>>,
    last: Mutex<Option<Result<Value, TransportError>>>,
    requests: Mutex<Vec<Value>>,
}

impl ScriptedTransport {
    pub fn new(script: Vec<Result<Value, TransportError>>) -> Self {
        let mut script = script;
        script.reverse();
        Self { script: Mutex::new(script), last: Mutex::new(None), requests: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(
        &self,
        _url: &str,
        _auth_token: Option<&str>,
        _timeout: Duration,
        body: &Value,
    ) -> Result<Value, TransportError> {
        self.requests.lock().unwrap().push(body.clone());
        let next = self.script.lock().unwrap().pop();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(outcome) => {
                *last = Some(outcome.clone());
                outcome
            }
            None => last
                .clone()
                .unwrap_or_else(|| Err(TransportError::Unavailable("empty script".into()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub factor: f64,
    /// Relative jitter; each delay is scaled by a uniform draw from `1 ± jitter`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(250),
            factor: 2.0,
            jitter: 0.2,
            seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let base = self.initial_backoff.as_secs_f64() * self.factor.powi(retry as i32);
        let scale = if self.jitter > 0.0 { 1.0 + rng.gen_range(-self.jitter..=self.jitter) } else { 1.0 };
        Duration::from_secs_f64((base * scale).max(0.0))
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// One remote endpoint plus its transport and retry state.
pub struct RemoteService {
    endpoint: ServiceEndpoint,
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    rng: Mutex<ChaCha8Rng>,
    sleeper: Sleeper,
}

impl RemoteService {
    pub fn new(endpoint: ServiceEndpoint, transport: Arc<dyn Transport>) -> Self {
        let policy = RetryPolicy { max_retries: endpoint.max_retries, ..RetryPolicy::default() };
        Self::with_policy(endpoint, transport, policy)
    }

    pub fn with_policy(endpoint: ServiceEndpoint, transport: Arc<dyn Transport>, policy: RetryPolicy) -> Self {
        Self {
            endpoint,
            transport,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(policy.seed)),
            policy,
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn kind(&self) -> ServiceKind {
        self.endpoint.kind
    }

    pub fn call(&self, payload: &Value) -> Result<Value, GatewayError> {
        let timeout = Duration::from_secs_f64(self.endpoint.timeout_secs);
        let attempts = self.policy.max_retries + 1;
        let mut last_error = String::new();
        let mut all_timeouts = true;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.policy.delay(attempt - 1, &mut *self.rng.lock().unwrap());
                (self.sleeper)(delay);
            }
            let started = Instant::now();
            match self.transport.post_json(
                &self.endpoint.base_url,
                self.endpoint.auth_token.as_deref(),
                timeout,
                payload,
            ) {
                Ok(value) => {
                    let upstream_ms = value.get("latency_ms").and_then(|v| v.as_f64());
                    tracing::debug!(
                        service = %self.endpoint.kind,
                        attempt,
                        elapsed_ms = started.elapsed().as_millis() as u64,
                        upstream_latency_ms = upstream_ms,
                        "upstream call succeeded"
                    );
                    return Ok(value);
                }
                Err(TransportError::BadResponse(detail)) => {
                    return Err(GatewayError::MalformedResponse { service: self.endpoint.kind, detail });
                }
                Err(err) => {
                    all_timeouts &= err == TransportError::Timeout;
                    tracing::warn!(service = %self.endpoint.kind, attempt, error = %err, "upstream call failed");
                    last_error = err.to_string();
                }
            }
        }
        Err(GatewayError::UpstreamUnavailable {
            service: self.endpoint.kind,
            attempts,
            last_error,
            timed_out: all_timeouts,
        })
    }

    fn field<'a>(&self, value: &'a Value, key: &str) -> Result<&'a Value, GatewayError> {
        value.get(key).ok_or_else(|| GatewayError::MalformedResponse {
            service: self.endpoint.kind,
            detail: format!("missing field `{key}`"),
        })
    }

    fn text_field(&self, value: &Value, key: &str) -> Result<String, GatewayError> {
        self.field(value, key)?.as_str().map(str::to_string).ok_or_else(|| {
            GatewayError::MalformedResponse {
                service: self.endpoint.kind,
                detail: format!("field `{key}` is not a string"),
            }
        })
    }
}

fn audio_payload(clip: &AudioClip) -> Value {
    json!({ "audio_b64": B64.encode(clip.to_wav_bytes()), "sample_rate": clip.sample_rate() })
}

fn messages_json(messages: &[ChatMessage]) -> Value {
    serde_json::to_value(messages).expect("messages serialize")
}

impl SpeechRecognizer for RemoteService {
    fn transcribe(&self, clip: &AudioClip) -> Result<String, GatewayError> {
        let resp = self.call(&audio_payload(clip))?;
        self.text_field(&resp, "text")
    }
}

impl SpeechSynthesizer for RemoteService {
    fn synthesize(&self, text: &str, voice_id: &str) -> Result<AudioClip, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::Contract("cannot synthesize empty text".into()));
        }
        let resp = self.call(&json!({ "text": text, "voice_id": voice_id }))?;
        let b64 = self.text_field(&resp, "audio_b64")?;
        let bytes = B64.decode(b64).map_err(|e| GatewayError::MalformedResponse {
            service: self.endpoint.kind,
            detail: e.to_string(),
        })?;
        decode_clip(&bytes).map_err(|e| GatewayError::MalformedResponse {
            service: self.endpoint.kind,
            detail: e.to_string(),
        })
    }
}

impl ConversationModel for RemoteService {
    fn converse(&self, view: &[ChatMessage], config: &ConversationConfig) -> Result<String, GatewayError> {
        let resp = self.call(&json!({
            "messages": messages_json(view),
            "topic": config.topic,
            "persona": config.persona,
            "vocabulary": config.vocabulary,
        }))?;
        self.text_field(&resp, "text")
    }
}

impl GrammarCorrector for RemoteService {
    fn correct(&self, sentence: &str) -> Result<String, GatewayError> {
        let resp = self.call(&json!({ "sentence": sentence }))?;
        self.text_field(&resp, "corrected")
    }
}

impl LanguageModel for RemoteService {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        let resp = self.call(&json!({ "messages": messages_json(messages) }))?;
        self.text_field(&resp, "text")
    }
}

impl EmotionScorer for RemoteService {
    fn score_emotion(&self, clip: &AudioClip) -> Result<EmotionDistribution, GatewayError> {
        let resp = self.call(&audio_payload(clip))?;
        parse_distribution(self.field(&resp, "probabilities")?)
    }
}

/// Parses `{label: probability}`, renormalizing rounded scorer output.
pub fn parse_distribution(value: &Value) -> Result<EmotionDistribution, GatewayError> {
    let obj = value.as_object().ok_or_else(|| GatewayError::MalformedResponse {
        service: ServiceKind::Emotion,
        detail: "probabilities is not an object".into(),
    })?;
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        let p = v.as_f64().ok_or_else(|| GatewayError::MalformedResponse {
            service: ServiceKind::Emotion,
            detail: format!("probability for {k} is not a number"),
        })?;
        map.insert(EmotionLabel::parse(k)?, p);
    }
    Ok(EmotionDistribution::from_map(&map)?.0)
}

// ---------------------------------------------------------------------------
// Stubs
// ---------------------------------------------------------------------------

/// Fingerprint → transcript table.
#[derive(Debug, Default, Clone)]
pub struct StubRecognizer {
    pub table: HashMap<String, String>,
}

impl StubRecognizer {
    pub fn new(table: HashMap<String, String>) -> Self {
        Self { table }
    }
}

impl SpeechRecognizer for StubRecognizer {
    fn transcribe(&self, clip: &AudioClip) -> Result<String, GatewayError> {
        Ok(self.table.get(&clip.fingerprint()).cloned().unwrap_or_default())
    }
}

/// Emits a tone whose length is proportional to the word count.
#[derive(Debug, Clone)]
pub struct StubSynthesizer {
    pub seconds_per_word: f64,
    pub sample_rate: u32,
}

impl Default for StubSynthesizer {
    fn default() -> Self {
        Self { seconds_per_word: 0.3, sample_rate: 16_000 }
    }
}

impl SpeechSynthesizer for StubSynthesizer {
    fn synthesize(&self, text: &str, _voice_id: &str) -> Result<AudioClip, GatewayError> {
        let words = text.split_whitespace().count();
        if words == 0 {
            return Err(GatewayError::Contract("cannot synthesize empty text".into()));
        }
        let duration = words as f64 * self.seconds_per_word;
        Ok(synth_tone_layout(duration, self.sample_rate, &[(0.0, duration)], 220.0, 0.3))
    }
}

/// Scripted or templated conversation replies, keyed on the number of user
/// turns in the view. Records every request it receives.
#[derive(Default)]
pub struct StubConversation {
    script: Vec<String>,
    log: Mutex<Vec<(Vec<ChatMessage>, ConversationConfig)>>,
}

impl StubConversation {
    pub fn scripted(script: Vec<String>) -> Self {
        Self { script, log: Mutex::default() }
    }

    pub fn requests(&self) -> Vec<(Vec<ChatMessage>, ConversationConfig)> {
        self.log.lock().unwrap().clone()
    }
}

impl ConversationModel for StubConversation {
    fn converse(&self, view: &[ChatMessage], config: &ConversationConfig) -> Result<String, GatewayError> {
        self.log.lock().unwrap().push((view.to_vec(), config.clone()));
        let user_turns = view.iter().filter(|m| m.role == Role::User).count();
        if let Some(reply) = user_turns.checked_sub(1).and_then(|i| self.script.get(i)) {
            return Ok(reply.clone());
        }
        Ok(match user_turns {
            0 | 1 => format!("Hi there! Let's chat. {}. What comes to mind?", config.topic),
            n if n % 2 == 0 => "That's really interesting! Could you tell me more about it?".into(),
            _ => "I see. What did you like most about it?".into(),
        })
    }
}

/// Rule-table corrector: exact sentence fixtures first, then substring
/// rewrites, then determiner insertion before listed titles.
#[derive(Debug, Clone)]
pub struct StubCorrector {
    pub fixtures: HashMap<String, String>,
    pub rewrites: Vec<(String, String)>,
    pub titles: Vec<String>,
}

impl Default for StubCorrector {
    fn default() -> Self {
        Self {
            fixtures: HashMap::from([(
                "I like to read book and study English.".to_string(),
                "I like to read books and study English".to_string(),
            )]),
            rewrites: vec![
                ("book and".into(), "books and".into()),
                ("who want to".into(), "who wants to".into()),
            ],
            titles: vec!["Godfather".into()],
        }
    }
}

impl GrammarCorrector for StubCorrector {
    fn correct(&self, sentence: &str) -> Result<String, GatewayError> {
        if let Some(fixed) = self.fixtures.get(sentence.trim()) {
            return Ok(fixed.clone());
        }
        let mut out = sentence.to_string();
        for (from, to) in &self.rewrites {
            out = out.replace(from.as_str(), to);
        }
        for title in &self.titles {
            let with_the = format!("The {title}");
            let lower_the = format!("the {title}");
            if out.contains(title.as_str()) && !out.contains(&with_the) && !out.contains(&lower_the) {
                out = out.replacen(title.as_str(), &with_the, 1);
            }
        }
        Ok(out)
    }
}

type Responder = Box<dyn Fn(&[ChatMessage]) -> String + Send + Sync>;

/// Language model stub driven by a closure; logs each call's messages.
pub struct StubLanguageModel {
    responder: Responder,
    log: Mutex<Vec<Vec<ChatMessage>>>,
}

impl StubLanguageModel {
    pub fn new(responder: impl Fn(&[ChatMessage]) -> String + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(responder), log: Mutex::default() }
    }

    /// Replies with the text of the final message.
    pub fn echo() -> Self {
        Self::new(|msgs| msgs.last().map(|m| m.text.clone()).unwrap_or_default())
    }

    pub fn canned(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::new(move |_| reply.clone())
    }

    /// Replies from `replies` in call order, repeating the last one.
    pub fn sequence(replies: Vec<String>) -> Self {
        let counter = Mutex::new(0usize);
        Self::new(move |_| {
            let mut n = counter.lock().unwrap();
            let reply = replies.get(*n).or(replies.last()).cloned().unwrap_or_default();
            *n += 1;
            reply
        })
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.log.lock().unwrap().clone()
    }
}

impl LanguageModel for StubLanguageModel {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        self.log.lock().unwrap().push(messages.to_vec());
        Ok((self.responder)(messages))
    }
}

/// Fingerprint → distribution table, uniform for unknown clips.
#[derive(Debug, Default, Clone)]
pub struct StubEmotionScorer {
    pub table: HashMap<String, EmotionDistribution>,
}

impl StubEmotionScorer {
    pub fn new(table: HashMap<String, EmotionDistribution>) -> Self {
        Self { table }
    }
}

impl EmotionScorer for StubEmotionScorer {
    fn score_emotion(&self, clip: &AudioClip) -> Result<EmotionDistribution, GatewayError> {
        Ok(self.table.get(&clip.fingerprint()).copied().unwrap_or_else(EmotionDistribution::uniform))
    }
}

const STUB_EMPATHY_REPLY: &str = "You're explaining your ideas clearly, which is great! Try slowing down a little and finishing each sentence before starting the next one. Keep it up!";
const STUB_JUDGE_REPLY: &str = "yes";

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default)]
    pub endpoints: BTreeMap<ServiceKind, ServiceEndpoint>,
}

impl GatewayConfig {
    pub fn all_stub() -> Self {
        Self { endpoints: ServiceKind::ALL.iter().map(|&k| (k, ServiceEndpoint::stub(k))).collect() }
    }

    pub fn endpoint(&self, kind: ServiceKind) -> ServiceEndpoint {
        self.endpoints.get(&kind).cloned().unwrap_or_else(|| ServiceEndpoint::stub(kind))
    }

    /// Fills auth tokens from `TUTOR_<KIND>_TOKEN` environment variables.
    pub fn apply_env_overrides(&mut self) {
        for kind in ServiceKind::ALL {
            let var = format!("TUTOR_{}_TOKEN", kind.name().to_uppercase());
            if let Ok(token) = std::env::var(&var) {
                self.endpoints
                    .entry(kind)
                    .or_insert_with(|| ServiceEndpoint::stub(kind))
                    .auth_token = Some(token);
            }
        }
    }
}

/// Every model client a session needs.
#[derive(Clone)]
pub struct ModelGateway {
    pub asr: Arc<dyn SpeechRecognizer>,
    pub tts: Arc<dyn SpeechSynthesizer>,
    pub conversation: Arc<dyn ConversationModel>,
    pub grammar: Arc<dyn GrammarCorrector>,
    pub empathy: Arc<dyn LanguageModel>,
    pub judge: Arc<dyn LanguageModel>,
    pub emotion: Arc<dyn EmotionScorer>,
}

impl ModelGateway {
    pub fn all_stub() -> Self {
        Self {
            asr: Arc::new(StubRecognizer::default()),
            tts: Arc::new(StubSynthesizer::default()),
            conversation: Arc::new(StubConversation::default()),
            grammar: Arc::new(StubCorrector::default()),
            empathy: Arc::new(StubLanguageModel::canned(STUB_EMPATHY_REPLY)),
            judge: Arc::new(StubLanguageModel::canned(STUB_JUDGE_REPLY)),
            emotion: Arc::new(StubEmotionScorer::default()),
        }
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        Self::from_config_with_transport(config, Arc::new(HttpTransport))
    }

    pub fn from_config_with_transport(
        config: &GatewayConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, GatewayError> {
        let mut gw = Self::all_stub();
        for kind in ServiceKind::ALL {
            let endpoint = config.endpoint(kind);
            endpoint.validate()?;
            if endpoint.is_stub() {
                continue;
            }
            let remote = Arc::new(RemoteService::new(endpoint, transport.clone()));
            match kind {
                ServiceKind::Asr => gw.asr = remote,
                ServiceKind::Tts => gw.tts = remote,
                ServiceKind::Conversation => gw.conversation = remote,
                ServiceKind::Grammar => gw.grammar = remote,
                ServiceKind::Empathy => gw.empathy = remote,
                ServiceKind::Judge => gw.judge = remote,
                ServiceKind::Emotion => gw.emotion = remote,
            }
        }
        Ok(gw)
    }
}
