//! Per-session turn state machine: routes each turn to conversation,
//! grammatical feedback, empathetic feedback, query answering or a
//! transition back to the cached conversation reply.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect::DistressDecision;
use crate::gateway::{ChatMessage, GatewayError, LanguageModel};
use crate::grammar::CorrectionResult;

pub const QUERY_KEYWORDS: [&str; 7] =
    ["grammar", "grammatical", "vocab", "English", "mistake", "example", "sentence"];

pub const THANKS_OPENERS: [&str; 4] =
    ["Of course!", "No problem at all.", "Yeah, no problem!", "No problem!"];

pub const THANKS_RETURNS: [&str; 4] = [
    "Back to the conversation.",
    "Back to our convo.",
    "Let's go back to chatting.",
    "Now we circle back.",
];

pub const TRANSITION_PHRASES: [&str; 8] = [
    "Sounds great.",
    "Alright, let's continue our conversation.",
    "Great, let's get back to it!",
    "Okay let's go back to our conversation.",
    "Now back to our conversation.",
    "Okay!",
    "Lets' go back to our chat.",
    "Let's keep chatting.",
];

const QUERY_PROMPT: &str = "Based on the following conversation history:\n\n{convo}, answer the user's following query: \"{user_query}\" Answer in a spoken utterance. Provide specific feedback, but be succinct.";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("not a feedback query: {0:?}")]
    NotAQuery(String),
    #[error("transition requires a cached bot response")]
    EmptyCached,
    #[error("a {0:?} outcome needs a cached conversation reply")]
    MissingCachedResponse(ActionKind),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Bot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Grammar,
    Empathy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryFlag {
    Conversation,
    /// Bot feedback turn; `cached` is the conversation reply held back for later.
    Feedback { feedback: FeedbackKind, cached: String },
    /// User utterance made while a feedback sub-dialogue was open.
    FeedbackReply,
    QueryAnswer,
    /// Bot turn delivering the cached reply behind `prefix`.
    Transition { prefix: String, cached: String },
}

impl EntryFlag {
    pub fn is_feedback_related(&self) -> bool {
        !matches!(self, EntryFlag::Conversation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub turn_index: u64,
    pub speaker: Speaker,
    pub text: String,
    pub flag: EntryFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpacingPolicy {
    pub min_gap_grammar: u64,
    pub min_gap_empathy: u64,
}

impl Default for SpacingPolicy {
    fn default() -> Self {
        Self { min_gap_grammar: 2, min_gap_empathy: 4 }
    }
}

impl SpacingPolicy {
    /// A feedback kind last given at `last` may be given again at `now` when
    /// strictly more than `gap` turns have passed.
    pub fn gap_open(last: Option<u64>, now: u64, gap: u64) -> bool {
        match last {
            None => true,
            Some(l) => now.saturating_sub(l) > gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Converse,
    EmpathyFeedback,
    GrammarFeedback,
    AnswerQuery,
    Transition,
}

impl ActionKind {
    pub fn is_feedback(self) -> bool {
        matches!(self, ActionKind::EmpathyFeedback | ActionKind::GrammarFeedback)
    }
}

/// The routing decision for one turn together with the inputs it was made from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDecision {
    pub kind: ActionKind,
    pub turn_index: u64,
    pub distress: DistressDecision,
    pub correction: CorrectionResult,
}

/// A decided turn with the text the bot will speak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAction {
    pub decision: TurnDecision,
    pub payload: String,
    pub transition_prefix: Option<String>,
}

/// What actually happened on a turn, as fed back into the state.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub kind: ActionKind,
    pub bot_text: String,
    /// Conversation reply generated alongside feedback, delivered later.
    pub cached_response: Option<String>,
    pub transition_prefix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnState {
    pub turn_index: u64,
    pub last_grammar_turn: Option<u64>,
    pub last_empathy_turn: Option<u64>,
    pub cached_bot_response: Option<String>,
    pub awaiting_feedback_reply: bool,
    pub history: Vec<HistoryEntry>,
}

impl TurnState {
    pub fn new() -> Self {
        Self::default()
    }

    /// History plus the current user utterance, flagged as it will be on commit.
    pub fn history_with_pending(&self, transcript: &str) -> Vec<HistoryEntry> {
        let mut h = self.history.clone();
        h.push(HistoryEntry {
            turn_index: self.turn_index,
            speaker: Speaker::User,
            text: transcript.to_string(),
            flag: if self.awaiting_feedback_reply {
                EntryFlag::FeedbackReply
            } else {
                EntryFlag::Conversation
            },
        });
        h
    }

    /// Conversation view with the current user utterance appended.
    pub fn view_with(&self, transcript: &str) -> Vec<ChatMessage> {
        let mut v = conversation_view(self);
        v.push(ChatMessage::user(transcript));
        v
    }

    /// Entries of the open feedback sub-dialogue, from the feedback turn on.
    pub fn query_window(&self) -> &[HistoryEntry] {
        match self.history.iter().rposition(|e| matches!(e.flag, EntryFlag::Feedback { .. })) {
            // Include the user utterance the feedback was about.
            Some(i) => {
                let turn = self.history[i].turn_index;
                let start = self.history[..i]
                    .iter()
                    .rposition(|e| e.turn_index != turn)
                    .map_or(0, |j| j + 1);
                &self.history[start..]
            }
            None => &self.history[self.history.len()..],
        }
    }

    /// Applies a completed turn.
    pub fn commit(&mut self, user_text: &str, outcome: TurnOutcome) -> Result<(), OrchestratorError> {
        let t = self.turn_index;
        let user_flag = if self.awaiting_feedback_reply {
            EntryFlag::FeedbackReply
        } else {
            EntryFlag::Conversation
        };
        let bot_flag = match outcome.kind {
            ActionKind::Converse => EntryFlag::Conversation,
            ActionKind::GrammarFeedback | ActionKind::EmpathyFeedback => {
                let cached = outcome
                    .cached_response
                    .clone()
                    .filter(|c| !c.trim().is_empty())
                    .ok_or(OrchestratorError::MissingCachedResponse(outcome.kind))?;
                let feedback = if outcome.kind == ActionKind::GrammarFeedback {
                    self.last_grammar_turn = Some(t);
                    FeedbackKind::Grammar
                } else {
                    self.last_empathy_turn = Some(t);
                    FeedbackKind::Empathy
                };
                self.cached_bot_response = Some(cached.clone());
                self.awaiting_feedback_reply = true;
                EntryFlag::Feedback { feedback, cached }
            }
            ActionKind::AnswerQuery => EntryFlag::QueryAnswer,
            ActionKind::Transition => {
                let cached = self.cached_bot_response.take().ok_or(OrchestratorError::EmptyCached)?;
                self.awaiting_feedback_reply = false;
                EntryFlag::Transition { prefix: outcome.transition_prefix.clone().unwrap_or_default(), cached }
            }
        };
        self.history.push(HistoryEntry {
            turn_index: t,
            speaker: Speaker::User,
            text: user_text.to_string(),
            flag: user_flag,
        });
        self.history.push(HistoryEntry {
            turn_index: t,
            speaker: Speaker::Bot,
            text: outcome.bot_text,
            flag: bot_flag,
        });
        self.turn_index += 1;
        Ok(())
    }

    /// Counts a turn that failed upstream without touching the history.
    pub fn skip_turn(&mut self) {
        self.turn_index += 1;
    }
}

/// Routes one turn. Pure: same arguments, same decision.
pub fn decide_turn(
    state: &TurnState,
    transcript: &str,
    distress: &DistressDecision,
    correction: &CorrectionResult,
    policy: &SpacingPolicy,
) -> TurnDecision {
    let t = state.turn_index;
    let kind = if state.awaiting_feedback_reply {
        if is_feedback_query(transcript) {
            ActionKind::AnswerQuery
        } else {
            ActionKind::Transition
        }
    } else if distress.distressed
        && SpacingPolicy::gap_open(state.last_empathy_turn, t, policy.min_gap_empathy)
    {
        ActionKind::EmpathyFeedback
    } else if correction.accepted
        && !transcript.trim().is_empty()
        && SpacingPolicy::gap_open(state.last_grammar_turn, t, policy.min_gap_grammar)
    {
        ActionKind::GrammarFeedback
    } else {
        ActionKind::Converse
    };
    TurnDecision { kind, turn_index: t, distress: *distress, correction: correction.clone() }
}

pub fn is_feedback_query(transcript: &str) -> bool {
    if !transcript.contains('?') {
        return false;
    }
    let lower = transcript.to_lowercase();
    QUERY_KEYWORDS.iter().any(|k| lower.contains(&k.to_lowercase()))
}

/// Returns `(prefix, prefix + " " + cached)`.
pub fn build_transition(user_reply: &str, cached: &str, seed: u64) -> Result<(String, String), OrchestratorError> {
    if cached.trim().is_empty() {
        return Err(OrchestratorError::EmptyCached);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = if user_reply.to_lowercase().contains("thank") {
        let a = THANKS_OPENERS.choose(&mut rng).expect("non-empty");
        let b = THANKS_RETURNS.choose(&mut rng).expect("non-empty");
        format!("{a} {b}")
    } else {
        TRANSITION_PHRASES.choose(&mut rng).expect("non-empty").to_string()
    };
    let text = format!("{prefix} {cached}");
    Ok((prefix, text))
}

pub fn format_window(window: &[HistoryEntry]) -> String {
    window
        .iter()
        .map(|e| {
            let who = match e.speaker {
                Speaker::User => "User",
                Speaker::Bot => "Bot",
            };
            format!("{who}: {}", e.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn query_prompt(window: &[HistoryEntry], user_query: &str) -> String {
    QUERY_PROMPT
        .replace("{convo}", &format_window(window))
        .replace("{user_query}", user_query)
}

/// Answers a question about the feedback just given.
pub fn answer_query(
    window: &[HistoryEntry],
    user_query: &str,
    lm: &dyn LanguageModel,
) -> Result<String, OrchestratorError> {
    if !is_feedback_query(user_query) {
        return Err(OrchestratorError::NotAQuery(user_query.to_string()));
    }
    Ok(lm.complete(&[ChatMessage::user(query_prompt(window, user_query))])?)
}

/// History as the conversation model should see it: feedback turns, replies
/// to feedback and query answers removed, cached replies shown unprefixed
/// where they were delivered.
pub fn conversation_view(state: &TurnState) -> Vec<ChatMessage> {
    state
        .history
        .iter()
        .filter_map(|e| match (&e.flag, e.speaker) {
            (EntryFlag::Conversation, Speaker::User) => Some(ChatMessage::user(e.text.clone())),
            (EntryFlag::Conversation, Speaker::Bot) => Some(ChatMessage::assistant(e.text.clone())),
            (EntryFlag::Transition { cached, .. }, _) => Some(ChatMessage::assistant(cached.clone())),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditViolation {
    #[error("{kind:?} feedback at turn {turn} only {gap} turn(s) after the previous one")]
    GapTooSmall { kind: FeedbackKind, turn: u64, gap: u64 },
    #[error("feedback at turn {0} opened while another sub-dialogue was open")]
    NestedFeedback(u64),
    #[error("transition at turn {0} without an open feedback sub-dialogue")]
    OrphanTransition(u64),
    #[error("transition at turn {turn} delivered {got:?}, expected {expected:?}")]
    WrongDelivery { turn: u64, expected: String, got: String },
    #[error("query answer at turn {0} outside a feedback sub-dialogue")]
    OrphanAnswer(u64),
}

/// Checks spacing and exactly-once delivery over a history.
///
/// A sub-dialogue still open at the end of the history is not a violation.
pub fn audit_history(history: &[HistoryEntry], policy: &SpacingPolicy) -> Result<(), AuditViolation> {
    let mut last_grammar = None;
    let mut last_empathy = None;
    let mut open: Option<String> = None;
    for e in history.iter().filter(|e| e.speaker == Speaker::Bot) {
        let t = e.turn_index;
        match &e.flag {
            EntryFlag::Feedback { feedback, cached } => {
                if open.is_some() {
                    return Err(AuditViolation::NestedFeedback(t));
                }
                let (last, gap) = match feedback {
                    FeedbackKind::Grammar => (&mut last_grammar, policy.min_gap_grammar),
                    FeedbackKind::Empathy => (&mut last_empathy, policy.min_gap_empathy),
                };
                if !SpacingPolicy::gap_open(*last, t, gap) {
                    return Err(AuditViolation::GapTooSmall {
                        kind: *feedback,
                        turn: t,
                        gap: t - last.unwrap_or(0),
                    });
                }
                *last = Some(t);
                open = Some(cached.clone());
            }
            EntryFlag::Transition { cached, .. } => match open.take() {
                None => return Err(AuditViolation::OrphanTransition(t)),
                Some(expected) if &expected != cached => {
                    return Err(AuditViolation::WrongDelivery { turn: t, expected, got: cached.clone() })
                }
                Some(_) => {}
            },
            EntryFlag::QueryAnswer if open.is_none() => return Err(AuditViolation::OrphanAnswer(t)),
            _ => {}
        }
    }
    Ok(())
}
