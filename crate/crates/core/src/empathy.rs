//! Empathetic feedback: context segments, the staged prompt pipeline and
//! the desiderata judge.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{ChatMessage, GatewayError, LanguageModel};
use crate::orchestrator::{EntryFlag, HistoryEntry, Speaker};

pub const SEGMENT_LEN: usize = 3;

const LIVE_BLOCK_SEPARATOR: &str = "\n\n---\n\n";
const REASONING_LEAD: &str = "Reasoning: Let's think step by step in order to";
const REWRITE_SLOT: &str = "{empathetic_output}";

const MANIFEST: &str = include_str!("../assets/prompts/manifest.toml");
const BUILTIN_FILES: [(&str, &str); 4] = [
    ("zeroshot.txt", include_str!("../assets/prompts/zeroshot.txt")),
    ("optimized.txt", include_str!("../assets/prompts/optimized.txt")),
    ("rewrite.txt", include_str!("../assets/prompts/rewrite.txt")),
    ("rewrite_followup.txt", include_str!("../assets/prompts/rewrite_followup.txt")),
];

#[derive(Debug, Error)]
pub enum EmpathyError {
    #[error("history has no usable user utterances")]
    NoUserUtterances,
    #[error("context segment is empty")]
    EmptySegment,
    #[error("language model returned an empty completion")]
    EmptyCompletion,
    #[error("judge reply is neither yes nor no: {0:?}")]
    UnparseableVerdict(String),
    #[error("prompt asset {file}: checksum {actual} does not match manifest {expected}")]
    ChecksumMismatch { file: String, expected: String, actual: String },
    #[error("prompt manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Up to three recent user utterances, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub utterances: Vec<String>,
}

impl ContextSegment {
    pub fn new(utterances: Vec<String>) -> Result<Self, EmpathyError> {
        if utterances.is_empty() || utterances.len() > SEGMENT_LEN {
            return Err(EmpathyError::NoUserUtterances);
        }
        Ok(Self { utterances })
    }

    /// `- u1 - u2 - u3`
    pub fn joined_text(&self) -> String {
        self.utterances
            .iter()
            .map(|u| format!("- {}", u.trim()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Last three user utterances, skipping replies to feedback and blank turns.
pub fn build_segment(history: &[HistoryEntry]) -> Result<ContextSegment, EmpathyError> {
    let mut picked: Vec<String> = history
        .iter()
        .rev()
        .filter(|e| e.speaker == Speaker::User && e.flag == EntryFlag::Conversation)
        .filter(|e| !e.text.trim().is_empty())
        .take(SEGMENT_LEN)
        .map(|e| e.text.clone())
        .collect();
    picked.reverse();
    ContextSegment::new(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpathyStage {
    Zeroshot,
    Optimized,
    Rewrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMode {
    Append,
    ReplaceLast,
    Rewrite,
    Followup,
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestEntry {
    stage: String,
    file: String,
    sha256: String,
    slot: SlotMode,
}

#[derive(Debug, Clone, Deserialize)]
struct Manifest {
    #[allow(dead_code)]
    version: u32,
    prompt: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct PromptAsset {
    pub file: String,
    pub sha256: String,
    pub slot: SlotMode,
    pub text: String,
}

/// The four checksum-verified prompt assets.
#[derive(Debug, Clone)]
pub struct PromptSet {
    assets: BTreeMap<String, PromptAsset>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PromptSet {
    /// Assets compiled into the binary.
    pub fn builtin() -> &'static PromptSet {
        static SET: OnceLock<PromptSet> = OnceLock::new();
        SET.get_or_init(|| {
            Self::from_parts(MANIFEST, |file| {
                BUILTIN_FILES
                    .iter()
                    .find(|(f, _)| *f == file)
                    .map(|(_, t)| t.to_string())
                    .ok_or_else(|| EmpathyError::Manifest(format!("unknown file {file}")))
            })
            .expect("builtin prompt assets match their manifest")
        })
    }

    /// Loads `manifest.toml` and its files from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, EmpathyError> {
        let manifest = std::fs::read_to_string(dir.join("manifest.toml"))
            .map_err(|e| EmpathyError::Manifest(e.to_string()))?;
        Self::from_parts(&manifest, |file| {
            std::fs::read_to_string(dir.join(file)).map_err(|e| EmpathyError::Manifest(format!("{file}: {e}")))
        })
    }

    fn from_parts(
        manifest: &str,
        read: impl Fn(&str) -> Result<String, EmpathyError>,
    ) -> Result<Self, EmpathyError> {
        let manifest: Manifest = toml::from_str(manifest).map_err(|e| EmpathyError::Manifest(e.to_string()))?;
        let mut assets = BTreeMap::new();
        for entry in manifest.prompt {
            let text = read(&entry.file)?;
            let actual = sha256_hex(text.as_bytes());
            if actual != entry.sha256 {
                return Err(EmpathyError::ChecksumMismatch { file: entry.file, expected: entry.sha256, actual });
            }
            assets.insert(
                entry.stage,
                PromptAsset { file: entry.file, sha256: entry.sha256, slot: entry.slot, text },
            );
        }
        let set = Self { assets };
        for stage in ["zeroshot", "optimized", "rewrite", "rewrite_followup"] {
            set.asset(stage)?;
        }
        Ok(set)
    }

    pub fn asset(&self, stage: &str) -> Result<&PromptAsset, EmpathyError> {
        self.assets
            .get(stage)
            .ok_or_else(|| EmpathyError::Manifest(format!("missing stage {stage}")))
    }

    pub fn assets(&self) -> impl Iterator<Item = (&str, &PromptAsset)> {
        self.assets.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Fills the stage prompt with a segment (Zeroshot, Optimized) or with
    /// the Optimized output (Rewrite).
    pub fn render(&self, stage: EmpathyStage, input: &str) -> Result<String, EmpathyError> {
        let key = match stage {
            EmpathyStage::Zeroshot => "zeroshot",
            EmpathyStage::Optimized => "optimized",
            EmpathyStage::Rewrite => "rewrite",
        };
        let asset = self.asset(key)?;
        let live = format!("Convo: {input}\n{REASONING_LEAD}");
        Ok(match asset.slot {
            SlotMode::Append => format!("{}{LIVE_BLOCK_SEPARATOR}{live}", asset.text),
            SlotMode::ReplaceLast => {
                let cut = asset
                    .text
                    .rfind(LIVE_BLOCK_SEPARATOR)
                    .ok_or_else(|| EmpathyError::Manifest(format!("{} has no live block", asset.file)))?;
                format!("{}{LIVE_BLOCK_SEPARATOR}{live}", &asset.text[..cut])
            }
            SlotMode::Rewrite => asset.text.replace(REWRITE_SLOT, input),
            SlotMode::Followup => asset.text.clone(),
        })
    }

    pub fn followup(&self) -> Result<&str, EmpathyError> {
        Ok(&self.asset("rewrite_followup")?.text)
    }
}

/// Takes the text after the last `Output:` marker when the model echoes the
/// structured format.
pub fn extract_output(completion: &str) -> String {
    match completion.rfind("Output:") {
        Some(i) => completion[i + "Output:".len()..].trim().to_string(),
        None => completion.trim().to_string(),
    }
}

fn nonempty(text: String) -> Result<String, EmpathyError> {
    if text.trim().is_empty() {
        Err(EmpathyError::EmptyCompletion)
    } else {
        Ok(text)
    }
}

/// Runs one stage. `input` is the joined segment for Zeroshot and Optimized
/// and the Optimized output for Rewrite.
pub fn generate_empathy(
    prompts: &PromptSet,
    stage: EmpathyStage,
    input: &str,
    lm: &dyn LanguageModel,
) -> Result<String, EmpathyError> {
    if input.trim().is_empty() {
        return Err(EmpathyError::EmptySegment);
    }
    let first = ChatMessage::user(prompts.render(stage, input)?);
    match stage {
        EmpathyStage::Zeroshot | EmpathyStage::Optimized => {
            nonempty(extract_output(&lm.complete(&[first])?))
        }
        EmpathyStage::Rewrite => {
            let reply = nonempty(lm.complete(std::slice::from_ref(&first))?)?;
            let messages = [first, ChatMessage::assistant(reply), ChatMessage::user(prompts.followup()?)];
            nonempty(lm.complete(&messages)?.trim().to_string())
        }
    }
}

/// Optimized followed by Rewrite.
pub fn empathetic_feedback(
    prompts: &PromptSet,
    segment: &ContextSegment,
    lm: &dyn LanguageModel,
) -> Result<String, EmpathyError> {
    let optimized = generate_empathy(prompts, EmpathyStage::Optimized, &segment.joined_text(), lm)?;
    generate_empathy(prompts, EmpathyStage::Rewrite, &optimized, lm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesiderataScore {
    pub tailored: bool,
    pub empathetic_encouraging: bool,
    pub actionable_examples: bool,
}

impl DesiderataScore {
    pub fn satisfied(&self) -> usize {
        [self.tailored, self.empathetic_encouraging, self.actionable_examples]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn aggregate(&self) -> f64 {
        100.0 * self.satisfied() as f64 / 3.0
    }
}

pub const DESIDERATA: [&str; 3] = [
    "tailored to the user",
    "empathetic and encouraging",
    "actionable, giving actionable feedback or specific examples the user can learn from",
];

pub fn judge_prompt(desideratum: &str, segment: &ContextSegment, response: &str) -> String {
    format!(
        "You are reviewing feedback that an English tutor gave to a student after a spoken conversation.\n\n\
         Student's recent utterances:\n{}\n\n\
         Tutor's feedback:\n{}\n\n\
         Is the feedback {}? Answer with a single word, yes or no.",
        segment.joined_text(),
        response.trim(),
        desideratum
    )
}

pub fn parse_verdict(reply: &str) -> Option<bool> {
    let lower = reply.trim_start().to_lowercase();
    let word: String = lower.chars().take_while(|c| c.is_alphabetic()).collect();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn ask(judge: &dyn LanguageModel, prompt: &str) -> Result<bool, EmpathyError> {
    let mut messages = vec![ChatMessage::user(prompt)];
    let first = judge.complete(&messages)?;
    if let Some(v) = parse_verdict(&first) {
        return Ok(v);
    }
    messages.push(ChatMessage::assistant(first));
    messages.push(ChatMessage::user("Please answer with only yes or no."));
    let second = judge.complete(&messages)?;
    parse_verdict(&second).ok_or(EmpathyError::UnparseableVerdict(second))
}

/// Three independent yes/no judgments, one per desideratum.
pub fn judge_desiderata(
    response: &str,
    segment: &ContextSegment,
    judge: &dyn LanguageModel,
) -> Result<DesiderataScore, EmpathyError> {
    let [a, b, c] = DESIDERATA.map(|d| judge_prompt(d, segment, response));
    Ok(DesiderataScore {
        tailored: ask(judge, &a)?,
        empathetic_encouraging: ask(judge, &b)?,
        actionable_examples: ask(judge, &c)?,
    })
}

/// Mean aggregate over a corpus; 0 for an empty corpus.
pub fn corpus_aggregate(scores: &[DesiderataScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(DesiderataScore::aggregate).sum::<f64>() / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubLanguageModel;

    fn user(t: u64, text: &str, flag: EntryFlag) -> HistoryEntry {
        HistoryEntry { turn_index: t, speaker: Speaker::User, text: text.into(), flag }
    }

    fn bot(t: u64, text: &str) -> HistoryEntry {
        HistoryEntry { turn_index: t, speaker: Speaker::Bot, text: text.into(), flag: EntryFlag::Conversation }
    }

    fn seg(v: &[&str]) -> ContextSegment {
        ContextSegment::new(v.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn segment_takes_last_three() {
        let h: Vec<_> = (0..4)
            .flat_map(|i| [user(i, &format!("u{}", i + 1), EntryFlag::Conversation), bot(i, "b")])
            .collect();
        assert_eq!(build_segment(&h).unwrap().utterances, ["u2", "u3", "u4"]);
    }

    #[test]
    fn segment_short_history_and_exclusions() {
        let h = [user(0, "u1", EntryFlag::Conversation)];
        assert_eq!(build_segment(&h).unwrap().utterances, ["u1"]);
        let h = [
            user(0, "u1", EntryFlag::Conversation),
            user(1, "f", EntryFlag::FeedbackReply),
            user(2, "u2", EntryFlag::Conversation),
            user(3, " ", EntryFlag::Conversation),
        ];
        assert_eq!(build_segment(&h).unwrap().utterances, ["u1", "u2"]);
        assert!(matches!(build_segment(&[bot(0, "hi")]), Err(EmpathyError::NoUserUtterances)));
    }

    #[test]
    fn joined_text_format() {
        assert_eq!(seg(&["a b.", "c"]).joined_text(), "- a b. - c");
    }

    #[test]
    fn assets_pinned() {
        let set = PromptSet::builtin();
        let expected = [
            ("optimized", "08388431c6405c40413d7e73fa4416d96d552e31fae615801a040353d6b3527c"),
            ("rewrite", "f845d9e6b324ed796c74dfbb2dcbcbde86989123d4bf955f3373f6d03381fd27"),
            ("rewrite_followup", "d71493f4c0eb12bbe2ff7c2ce088c7454ebb72ec4f10f0290e6486630e057be6"),
            ("zeroshot", "34870fe8e1428f7f5eba8c118d182e2318704225215ed9632a5d1d1f5ce594da"),
        ];
        for (stage, sum) in expected {
            assert_eq!(sha256_hex(set.asset(stage).unwrap().text.as_bytes()), sum);
        }
        assert_eq!(
            set.followup().unwrap(),
            "Make your response different and casual, and shorten to 3 - 4 sentences"
        );
    }

    #[test]
    fn render_slots() {
        let set = PromptSet::builtin();
        let z = set.render(EmpathyStage::Zeroshot, "- hello").unwrap();
        assert!(z.starts_with(&set.asset("zeroshot").unwrap().text));
        assert!(z.ends_with("Convo: - hello\nReasoning: Let's think step by step in order to"));
        let o = set.render(EmpathyStage::Optimized, "- hello").unwrap();
        assert!(o.contains("encouraging English tutor for a student"));
        assert!(o.ends_with("Convo: - hello\nReasoning: Let's think step by step in order to"));
        assert!(!o.contains("I'd like to see them."));
        assert_eq!(o.matches("\nConvo: ").count() + usize::from(o.starts_with("Convo: ")), 7);
        let r = set.render(EmpathyStage::Rewrite, "Great job!").unwrap();
        assert!(r.ends_with("intonation:\n\nGreat job!"));
    }

    #[test]
    fn single_call_stages() {
        let set = PromptSet::builtin();
        for stage in [EmpathyStage::Zeroshot, EmpathyStage::Optimized] {
            let lm = StubLanguageModel::canned("produce the output. We see...\nOutput: Nice work!");
            assert_eq!(generate_empathy(set, stage, "- u1", &lm).unwrap(), "Nice work!");
            assert_eq!(lm.calls().len(), 1);
        }
    }

    #[test]
    fn rewrite_chains_two_calls() {
        let set = PromptSet::builtin();
        let lm = StubLanguageModel::echo();
        let out = generate_empathy(set, EmpathyStage::Rewrite, "You did well.", &lm).unwrap();
        assert_eq!(out, "Make your response different and casual, and shorten to 3 - 4 sentences");
        let calls = lm.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].len(), 3);
        assert_eq!(calls[1][0], calls[0][0]);
        assert_eq!(calls[1][1].text, calls[0][0].text);
    }

    #[test]
    fn empty_input_makes_no_calls() {
        let lm = StubLanguageModel::echo();
        let err = generate_empathy(PromptSet::builtin(), EmpathyStage::Optimized, "  ", &lm).unwrap_err();
        assert!(matches!(err, EmpathyError::EmptySegment));
        assert!(lm.calls().is_empty());
        let blank = StubLanguageModel::canned(" ");
        let err = generate_empathy(PromptSet::builtin(), EmpathyStage::Zeroshot, "- a", &blank).unwrap_err();
        assert!(matches!(err, EmpathyError::EmptyCompletion));
    }

    #[test]
    fn production_path_is_three_calls() {
        let lm = StubLanguageModel::sequence(vec!["Output: long".into(), "mid".into(), "short".into()]);
        let out = empathetic_feedback(PromptSet::builtin(), &seg(&["u1"]), &lm).unwrap();
        assert_eq!(out, "short");
        let calls = lm.calls();
        assert_eq!(calls.len(), 3);
        assert!(calls[1][0].text.ends_with("\n\nlong"));
    }

    #[test]
    fn judge_scores() {
        let judge = StubLanguageModel::sequence(vec!["Yes.".into(), "yes".into(), "No, it lacks examples".into()]);
        let s = judge_desiderata("Good job", &seg(&["u1"]), &judge).unwrap();
        assert!((s.aggregate() - 66.67).abs() < 0.01);
        let calls = judge.calls();
        assert!(calls[0][0].text.contains("tailored to the user"));
        assert!(calls[1][0].text.contains("empathetic and encouraging"));
        assert!(calls[2][0].text.contains("- u1"));
    }

    #[test]
    fn judge_reasks_once() {
        let judge = StubLanguageModel::sequence(vec!["maybe".into(), "YES".into()]);
        assert!(ask(&judge, "q").unwrap());
        let judge = StubLanguageModel::canned("perhaps");
        assert!(matches!(ask(&judge, "q"), Err(EmpathyError::UnparseableVerdict(_))));
        assert_eq!(judge.calls().len(), 2);
    }

    #[test]
    fn corpus_mean() {
        let all = DesiderataScore { tailored: true, empathetic_encouraging: true, actionable_examples: true };
        assert_eq!(corpus_aggregate(&[all; 10]), 100.0);
        let none = DesiderataScore { tailored: false, empathetic_encouraging: false, actionable_examples: false };
        assert!((corpus_aggregate(&[all, none]) - 50.0).abs() < 1e-12);
        assert_eq!(parse_verdict("nope"), None);
        assert_eq!(parse_verdict("  No."), Some(false));
    }
}
