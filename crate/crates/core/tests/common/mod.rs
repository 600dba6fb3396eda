//! Scripted replay of the opera conversation excerpt through stub models.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use tutor_core::audio::{synth_tone_layout, AudioClip};
use tutor_core::gateway::{ModelGateway, StubConversation, StubCorrector, StubLanguageModel, StubRecognizer};
use tutor_core::orchestrator::ActionKind;
use tutor_core::session::{Session, SessionConfig, SessionRuntime, SessionStore, StageEvent, TurnEngine, TurnRecord};

pub const USER_TURNS: [&str; 7] = [
    "Actually, I hardly ever watch movies, so could I describe opera?",
    "Okay, that's Turandot, which describes a love story between a Chinese princess and a foreign prince.",
    "you",
    "This Chinese princess whose grandma is... Wait a minute.",
    "Yes, and now I will go to talk about the context of the opera.",
    "This story is about the Chinese princess, Truong Du, whose grandma was bullied by the foreigners. So Truong Du set a rule to the man who want to marry him that he must answer three questions and then he can marry her or dad. The cover of the, answered the three questions and finally married with Torandu.",
    "That sounds great, okay I understand.",
];

pub const TURANDOT_CORRECTION: &str =
    "Okay, that's Turandot, which is a story about a love between a Chinese princess and a foreign prince.";

pub const BOT_SCRIPT: [&str; 4] = [
    "Sure! What's the name of the opera that you'd like to describe?",
    "Interesting! I can't say that I'm familiar with it. Could you tell me more about the story?",
    "Yes, go on. What's the story about?",
    "That's certainly a unique story! What did you like most about the opera?",
];

pub const EMPATHY_REPLIES: [&str; 3] = [
    "assess the utterance. We see clear ideas.\nOutput: You have a good grasp of the topic and can explain yourself clearly. Work on sentence structure, for example say \"Since I rarely watch movies, can I talk about opera instead?\"",
    "You've got a good grasp of the topic! Try \"Since I rarely watch movies, can I talk about opera instead?\"",
    "You've got a good grasp of the topic and can explain yourself clearly, which is awesome! Just tweak your sentence structure for a more natural flow. For instance, try \"Since I rarely watch movies, can I talk about opera instead?\" Keep at it!",
];

pub const EXPECTED_ACTIONS: [ActionKind; 7] = [
    ActionKind::Converse,
    ActionKind::GrammarFeedback,
    ActionKind::Transition,
    ActionKind::EmpathyFeedback,
    ActionKind::Transition,
    ActionKind::GrammarFeedback,
    ActionKind::Transition,
];

/// Fluent speech: one continuous tone. Frequency makes each clip unique.
pub fn fluent_clip(i: usize) -> AudioClip {
    let d = 2.0 + 0.1 * i as f64;
    synth_tone_layout(d, 16_000, &[(0.0, d)], 200.0 + 20.0 * i as f64, 0.3)
}

/// Hesitant speech: short bursts separated by 0.8 s gaps.
pub fn hesitant_clip(i: usize) -> AudioClip {
    synth_tone_layout(4.0, 16_000, &[(0.0, 0.8), (1.6, 2.4), (3.2, 4.0)], 200.0 + 20.0 * i as f64, 0.3)
}

pub struct Replay {
    pub dir: tempfile::TempDir,
    pub store: SessionStore,
    pub session_id: String,
    pub records: Vec<TurnRecord>,
    pub runtime: SessionRuntime,
    pub conversation: Arc<StubConversation>,
    pub empathy: Arc<StubLanguageModel>,
    pub events: Vec<StageEvent>,
}

pub fn replay_opera_excerpt() -> Replay {
    let clips: Vec<AudioClip> = (0..USER_TURNS.len())
        .map(|i| if i == 3 { hesitant_clip(i) } else { fluent_clip(i) })
        .collect();
    let asr: HashMap<String, String> = clips
        .iter()
        .zip(USER_TURNS)
        .map(|(c, t)| (c.fingerprint(), t.to_string()))
        .collect();
    let mut corrector = StubCorrector::default();
    corrector.fixtures.insert(USER_TURNS[1].to_string(), TURANDOT_CORRECTION.to_string());
    let conversation = Arc::new(StubConversation::scripted(BOT_SCRIPT.iter().map(|s| s.to_string()).collect()));
    let empathy = Arc::new(StubLanguageModel::sequence(EMPATHY_REPLIES.iter().map(|s| s.to_string()).collect()));

    let mut gateway = ModelGateway::all_stub();
    gateway.asr = Arc::new(StubRecognizer::new(asr));
    gateway.grammar = Arc::new(corrector);
    gateway.conversation = conversation.clone();
    gateway.empathy = empathy.clone();
    let engine = TurnEngine::new(gateway);

    let dir = tempfile::tempdir().expect("tempdir");
    let store = SessionStore::open(dir.path()).expect("store");
    let session = Session::new(SessionConfig { seed: 11, ..SessionConfig::default() }).expect("session");
    store.create(&session).expect("create");
    let session_id = session.session_id.clone();
    let mut runtime = SessionRuntime::new(session);
    let events = std::sync::Mutex::new(Vec::new());
    let mut records = Vec::new();
    for clip in &clips {
        let rec = engine
            .process_turn(&store, &mut runtime, &clip.to_wav_bytes(), &|e| events.lock().unwrap().push(e))
            .expect("turn");
        records.push(rec);
    }
    let events = events.into_inner().unwrap();
    Replay { dir, store, session_id, records, runtime, conversation, empathy, events }
}
