mod common;

use common::*;
use tutor_core::audio::decode_clip;
use tutor_core::empathy::PromptSet;
use tutor_core::gateway::{GrammarCorrector, Role, StubCorrector};
use tutor_core::grammar::{align_edits, render_recast, validate_correction};
use tutor_core::orchestrator::{ActionKind, EntryFlag, SpacingPolicy, TRANSITION_PHRASES};
use tutor_core::session::{audit_records, conversation_stats};

#[test]
fn opera_excerpt_action_sequence() {
    let r = replay_opera_excerpt();
    let actions: Vec<_> = r.records.iter().map(|x| x.action.unwrap()).collect();
    assert_eq!(actions, EXPECTED_ACTIONS);
    assert!(r.records.iter().all(|x| x.error.is_none()));

    let feedback: Vec<_> = actions.iter().filter(|a| **a != ActionKind::Converse).copied().collect();
    assert_eq!(
        feedback,
        [
            ActionKind::GrammarFeedback,
            ActionKind::Transition,
            ActionKind::EmpathyFeedback,
            ActionKind::Transition,
            ActionKind::GrammarFeedback,
            ActionKind::Transition,
        ]
    );
}

#[test]
fn opera_excerpt_payloads() {
    let r = replay_opera_excerpt();
    assert_eq!(r.records[0].bot_text, BOT_SCRIPT[0]);
    assert!(r.records[1].bot_text.contains(&format!("\"{TURANDOT_CORRECTION}\".")));
    // The transition delivers the reply cached during the grammar turn.
    assert_eq!(r.records[1].cached_response.as_deref(), Some(BOT_SCRIPT[1]));
    assert!(TRANSITION_PHRASES.iter().any(|p| r.records[2].bot_text == format!("{p} {}", BOT_SCRIPT[1])));
    assert!(r.records[3].distress.unwrap().pauses);
    assert_eq!(r.records[3].bot_text, EMPATHY_REPLIES[2]);
    assert!(r.records[5].bot_text.contains("\"who wants to marry him\""));
    assert!(r.records[5].bot_text.contains(
        "In this sentence you made a mistake on the verb \"want\". The correct verb form here is \"wants\". Remember to make your verbs agree with their subjects."
    ));
    assert!(r.records[6].bot_text.ends_with(BOT_SCRIPT[3]));
}

#[test]
fn empathy_segment_and_call_chain() {
    let r = replay_opera_excerpt();
    let calls = r.empathy.calls();
    assert_eq!(calls.len(), 3);
    let optimized_prompt = &calls[0][0].text;
    // Segment: the last three conversational user utterances; "you" was a feedback reply.
    let expected = format!("Convo: - {} - {} - {}\n", USER_TURNS[0], USER_TURNS[1], USER_TURNS[3]);
    assert!(optimized_prompt.contains(&expected));
    assert!(optimized_prompt.contains("encouraging English tutor for a student"));
    assert_eq!(calls[2].len(), 3);
    assert_eq!(calls[2][1].role, Role::Assistant);
    assert_eq!(calls[2][2].text, PromptSet::builtin().followup().unwrap());
}

#[test]
fn conversation_model_never_sees_feedback() {
    let r = replay_opera_excerpt();
    let feedback_texts: Vec<&str> = r
        .records
        .iter()
        .filter(|x| x.action.is_some_and(|a| a != ActionKind::Converse))
        .map(|x| x.bot_text.as_str())
        .collect();
    let replies = [USER_TURNS[2], USER_TURNS[4], USER_TURNS[6]];
    for (view, config) in r.conversation.requests() {
        assert_eq!(config.topic, "Name a movie that has had an enduring impact on you");
        for m in &view {
            assert!(!feedback_texts.contains(&m.text.as_str()), "feedback leaked: {}", m.text);
            assert!(!replies.contains(&m.text.as_str()), "feedback reply leaked: {}", m.text);
        }
    }
    assert!(r
        .runtime
        .state
        .history
        .iter()
        .any(|e| matches!(e.flag, EntryFlag::Feedback { .. })));
}

#[test]
fn persisted_log_replays_and_audits() {
    let r = replay_opera_excerpt();
    let stored = r.store.load_records(&r.session_id).unwrap();
    assert_eq!(stored, r.records);
    let state = audit_records(&stored, &SpacingPolicy::default()).unwrap();
    assert_eq!(state, r.runtime.state);
    let reloaded = r.store.load_runtime(&r.session_id).unwrap();
    assert_eq!(reloaded.state.turn_index, 7);

    let stats = conversation_stats(&stored);
    assert_eq!((stats.turns, stats.grammar_feedback, stats.empathy_feedback), (7, 2, 1));

    for rec in &stored {
        let bot = r.store.audio_path(&r.session_id, rec.bot_audio_ref.as_ref().unwrap());
        let clip = decode_clip(&std::fs::read(bot).unwrap()).unwrap();
        let words = rec.bot_text.split_whitespace().count() as f64;
        assert!((clip.duration() - 0.3 * words).abs() < 1e-3);
    }
    let stages: Vec<_> = r.events.iter().filter(|e| e.turn_index == 0).map(|e| e.stage.as_str()).collect();
    assert_eq!(stages.first(), Some(&"received"));
    assert_eq!(stages.last(), Some(&"done"));
}

#[test]
fn stub_corrections_compose_with_recast() {
    let c = StubCorrector::default();
    let s = "I didn't really watch Godfather, the third part.";
    let fixed = c.correct(s).unwrap();
    let result = validate_correction(s, &fixed);
    assert!(result.accepted);
    let fb = render_recast(&result, &align_edits(s, &fixed), 2).unwrap();
    assert_eq!(fb.quoted, "I didn't really watch The Godfather, the third part.");
    assert!(fb.full_text.contains(
        "You seem to be missing a determiner in this sentence. You should probably add \"The\" to make the sentence sound more natural."
    ));
    let table = "I like to read book and study English.";
    assert!(validate_correction(table, &c.correct(table).unwrap()).accepted);
}
