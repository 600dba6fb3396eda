//! Grammatical feedback: sentence splitting, correction screening, token
//! alignment, and conversational recasts with templated explanations.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Corrected sentences longer than this many words are recast from a clause window.
pub const MAX_FULL_RECAST_WORDS: usize = 20;

const ABBREVIATIONS: [&str; 6] = ["mr.", "mrs.", "dr.", "e.g.", "i.e.", "etc."];
const DETERMINERS: [&str; 3] = ["a", "an", "the"];
const PREPOSITIONS: [&str; 24] = [
    "about", "above", "across", "after", "against", "among", "at", "before", "behind", "below",
    "beside", "between", "by", "during", "for", "from", "in", "into", "of", "on", "over", "through",
    "to", "with",
];
const SUBJECT_MARKERS: [&str; 40] = [
    "i", "you", "he", "she", "it", "we", "they", "who", "which", "that", "this", "these", "those",
    "there", "people", "everyone", "everybody", "someone", "somebody", "nobody", "to", "will",
    "would", "can", "could", "should", "must", "may", "might", "do", "does", "did", "have", "has",
    "had", "be", "is", "am", "are", "was",
];
const INFLECTION_SUFFIXES: [&str; 5] = ["", "s", "es", "ed", "ing"];
const CLAUSE_OPENERS: [&str; 9] = ["and", "but", "or", "so", "that", "which", "who", "because", "when"];

static BUILTIN_TEMPLATES: &str = include_str!("../assets/grammar_templates.toml");

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("correction was not accepted ({0:?})")]
    NotAccepted(Option<RejectionReason>),
    #[error("template asset is invalid: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionReason {
    NoChange,
    MultiSentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub original: String,
    pub corrected: String,
    pub accepted: bool,
    pub rejection_reason: Option<RejectionReason>,
}

impl CorrectionResult {
    /// A placeholder for turns where no correction was attempted.
    pub fn none(original: &str) -> Self {
        Self {
            original: original.to_string(),
            corrected: original.to_string(),
            accepted: false,
            rejection_reason: Some(RejectionReason::NoChange),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Insert,
    Delete,
    Replace,
}

impl EditOp {
    fn key(self) -> &'static str {
        match self {
            EditOp::Insert => "insert",
            EditOp::Delete => "delete",
            EditOp::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Determiner,
    VerbForm,
    NounNumber,
    Preposition,
    WordChoice,
    Other,
}

impl ErrorType {
    pub fn key(self) -> &'static str {
        match self {
            ErrorType::Determiner => "determiner",
            ErrorType::VerbForm => "verb_form",
            ErrorType::NounNumber => "noun_number",
            ErrorType::Preposition => "preposition",
            ErrorType::WordChoice => "word_choice",
            ErrorType::Other => "other",
        }
    }
}

/// One contiguous edit between token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpan {
    pub op: EditOp,
    pub original_tokens: Range<usize>,
    pub corrected_tokens: Range<usize>,
    pub error_type: ErrorType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarFeedback {
    pub recast_text: String,
    pub explanation_text: String,
    pub full_text: String,
    pub confirmation_prefix: String,
    pub confirmation_suffix: String,
    pub constituent_used: bool,
    pub quoted: String,
}

/// A word or punctuation token with its byte span in the source sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub span: Range<usize>,
}

/// Splits into word tokens (letters, digits, inner apostrophes) and single
/// punctuation tokens.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some((start, c)) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        if c.is_alphanumeric() {
            let mut end = start + c.len_utf8();
            while let Some(&(i, n)) = iter.peek() {
                if n.is_alphanumeric() {
                    end = i + n.len_utf8();
                    iter.next();
                } else if n == '\'' || n == '\u{2019}' {
                    let mut ahead = iter.clone();
                    ahead.next();
                    match ahead.peek() {
                        Some(&(_, m)) if m.is_alphanumeric() => {
                            end = i + n.len_utf8();
                            iter.next();
                        }
                        _ => break,
                    }
                } else {
                    break;
                }
            }
            tokens.push(Token { text: &text[start..end], span: start..end });
        } else {
            let end = start + c.len_utf8();
            tokens.push(Token { text: &text[start..end], span: start..end });
        }
    }
    tokens
}

fn is_punct(tok: &str) -> bool {
    tok.chars().all(|c| !c.is_alphanumeric())
}

/// Splits on `.`, `!` or `?` followed by whitespace, except after a known abbreviation.
pub fn sentence_tokenize(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (idx, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let next_is_space = chars.get(idx + 1).map(|&(_, n)| n.is_whitespace()).unwrap_or(false);
        if !next_is_space {
            continue;
        }
        let end = pos + c.len_utf8();
        if c == '.' {
            let last_word = text[start..end].split_whitespace().last().unwrap_or("");
            if ABBREVIATIONS.contains(&last_word.to_lowercase().as_str()) {
                continue;
            }
        }
        let piece = text[start..end].trim();
        if !piece.is_empty() {
            sentences.push(piece.to_string());
        }
        start = end;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

fn normalize_for_comparison(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

/// Screens a model correction: identical (modulo a final period and
/// whitespace) or multi-sentence outputs are rejected.
pub fn validate_correction(original: &str, corrected: &str) -> CorrectionResult {
    let reason = if normalize_for_comparison(original) == normalize_for_comparison(corrected) {
        Some(RejectionReason::NoChange)
    } else if sentence_tokenize(corrected).len() > 1 {
        Some(RejectionReason::MultiSentence)
    } else {
        None
    };
    CorrectionResult {
        original: original.to_string(),
        corrected: corrected.trim().to_string(),
        accepted: reason.is_none(),
        rejection_reason: reason,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Keep,
    Sub,
    Del,
    Ins,
}

/// Token-level minimal edit script between two sentences.
///
/// Costs come from Levenshtein distance over lowercased tokens. Backtracking
/// from the end prefers the diagonal, which keeps substitutions over
/// insert/delete pairs and pushes edits leftward. Case-only differences on
/// aligned tokens are reported as replacements so the script reproduces the
/// corrected tokens exactly. Adjacent edits merge into one span.
pub fn align_edits(original: &str, corrected: &str) -> Vec<EditSpan> {
    let a = tokenize(original);
    let b = tokenize(corrected);
    let al: Vec<String> = a.iter().map(|t| t.text.to_lowercase()).collect();
    let bl: Vec<String> = b.iter().map(|t| t.text.to_lowercase()).collect();
    let (n, m) = (a.len(), b.len());

    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(al[i - 1] != bl[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }

    let mut steps = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = al[i - 1] == bl[j - 1];
            if dp[i - 1][j - 1] + usize::from(!same) == dp[i][j] {
                let exact = a[i - 1].text == b[j - 1].text;
                steps.push(if exact { Step::Keep } else { Step::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i - 1][j] + 1 == dp[i][j] {
            steps.push(Step::Del);
            i -= 1;
        } else {
            steps.push(Step::Ins);
            j -= 1;
        }
    }
    steps.reverse();

    let mut spans = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut k = 0;
    while k < steps.len() {
        if steps[k] == Step::Keep {
            i += 1;
            j += 1;
            k += 1;
            continue;
        }
        let (i0, j0) = (i, j);
        while k < steps.len() && steps[k] != Step::Keep {
            match steps[k] {
                Step::Sub => {
                    i += 1;
                    j += 1;
                }
                Step::Del => i += 1,
                Step::Ins => j += 1,
                Step::Keep => unreachable!(),
            }
            k += 1;
        }
        let op = match (i > i0, j > j0) {
            (true, true) => EditOp::Replace,
            (true, false) => EditOp::Delete,
            _ => EditOp::Insert,
        };
        let error_type = classify_edit(op, &al, i0..i, &bl, j0..j);
        spans.push(EditSpan { op, original_tokens: i0..i, corrected_tokens: j0..j, error_type });
    }
    spans
}

fn classify_edit(
    op: EditOp,
    orig: &[String],
    orig_range: Range<usize>,
    corr: &[String],
    corr_range: Range<usize>,
) -> ErrorType {
    let bad = &orig[orig_range.clone()];
    let good = &corr[corr_range];
    let all_punct = bad.iter().chain(good).all(|t| is_punct(t));
    if all_punct {
        return ErrorType::Other;
    }
    match op {
        EditOp::Insert | EditOp::Delete => {
            let toks = if op == EditOp::Insert { good } else { bad };
            if toks.iter().all(|t| DETERMINERS.contains(&t.as_str())) {
                ErrorType::Determiner
            } else if toks.len() == 1 && PREPOSITIONS.contains(&toks[0].as_str()) {
                ErrorType::Preposition
            } else {
                ErrorType::WordChoice
            }
        }
        EditOp::Replace => {
            if bad.len() != 1 || good.len() != 1 {
                return ErrorType::WordChoice;
            }
            let (x, y) = (bad[0].as_str(), good[0].as_str());
            if x == y {
                return ErrorType::Other;
            }
            if DETERMINERS.contains(&x) && DETERMINERS.contains(&y) {
                return ErrorType::Determiner;
            }
            if shares_inflected_stem(x, y) {
                let prev = orig_range.start.checked_sub(1).map(|p| orig[p].as_str());
                return match prev {
                    Some(p) if SUBJECT_MARKERS.contains(&p) => ErrorType::VerbForm,
                    _ => ErrorType::NounNumber,
                };
            }
            if PREPOSITIONS.contains(&x) {
                return ErrorType::Preposition;
            }
            ErrorType::WordChoice
        }
    }
}

fn shares_inflected_stem(x: &str, y: &str) -> bool {
    let xc: Vec<char> = x.chars().collect();
    let yc: Vec<char> = y.chars().collect();
    let common = xc.iter().zip(&yc).take_while(|(p, q)| p == q).count();
    if common < 4 {
        return false;
    }
    let xs: String = xc[common..].iter().collect();
    let ys: String = yc[common..].iter().collect();
    INFLECTION_SUFFIXES.contains(&xs.as_str()) && INFLECTION_SUFFIXES.contains(&ys.as_str())
}

/// Applies an edit script to the original tokens, yielding corrected tokens.
pub fn apply_edits(original: &[String], corrected: &[String], edits: &[EditSpan]) -> Vec<String> {
    let mut out = Vec::new();
    let mut pos = 0;
    for e in edits {
        out.extend_from_slice(&original[pos..e.original_tokens.start]);
        out.extend_from_slice(&corrected[e.corrected_tokens.clone()]);
        pos = e.original_tokens.end;
    }
    out.extend_from_slice(&original[pos..]);
    out
}

/// Prefix, suffix and explanation phrasing for recasts.
#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackTemplates {
    pub version: u32,
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    pub explanations: BTreeMap<String, String>,
}

impl FeedbackTemplates {
    pub fn from_toml_str(s: &str) -> Result<Self, GrammarError> {
        let t: FeedbackTemplates =
            toml::from_str(s).map_err(|e| GrammarError::Templates(e.to_string()))?;
        if t.prefixes.is_empty() || t.suffixes.is_empty() {
            return Err(GrammarError::Templates("prefix and suffix lists must be non-empty".into()));
        }
        for ty in [
            ErrorType::Determiner,
            ErrorType::VerbForm,
            ErrorType::NounNumber,
            ErrorType::Preposition,
            ErrorType::WordChoice,
            ErrorType::Other,
        ] {
            if !t.explanations.contains_key(ty.key()) {
                return Err(GrammarError::Templates(format!("no template for {}", ty.key())));
            }
        }
        Ok(t)
    }

    pub fn builtin() -> &'static FeedbackTemplates {
        static CELL: OnceLock<FeedbackTemplates> = OnceLock::new();
        CELL.get_or_init(|| {
            FeedbackTemplates::from_toml_str(BUILTIN_TEMPLATES).expect("bundled templates parse")
        })
    }

    fn explanation(&self, ty: ErrorType, op: EditOp) -> &str {
        let specific = format!("{}.{}", ty.key(), op.key());
        self.explanations
            .get(&specific)
            .or_else(|| self.explanations.get(ty.key()))
            .map(String::as_str)
            .expect("validated on load")
    }
}

fn slice_tokens<'a>(text: &'a str, tokens: &[Token<'a>], range: Range<usize>) -> &'a str {
    if range.is_empty() {
        return "";
    }
    &text[tokens[range.start].span.start..tokens[range.end - 1].span.end]
}

/// Token range of the clause-like window around `seed` in the corrected sentence.
fn clause_window(tokens: &[Token<'_>], seed: Range<usize>) -> Range<usize> {
    let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut start = 0;
    for i in (0..seed.start).rev() {
        if lower[i] == "," || lower[i] == ";" {
            start = i + 1;
            break;
        }
        if CLAUSE_OPENERS.contains(&lower[i].as_str()) {
            start = i;
            break;
        }
    }
    let mut end = tokens.len();
    for (j, tok) in lower.iter().enumerate().skip(seed.end) {
        if matches!(tok.as_str(), "," | ";" | "." | "!" | "?")
            || CLAUSE_OPENERS.contains(&tok.as_str())
        {
            end = j;
            break;
        }
    }
    if start >= end {
        0..tokens.len()
    } else {
        start..end
    }
}

/// Renders a recast with the bundled templates.
pub fn render_recast(
    result: &CorrectionResult,
    edits: &[EditSpan],
    rng_seed: u64,
) -> Result<GrammarFeedback, GrammarError> {
    render_recast_with(FeedbackTemplates::builtin(), result, edits, rng_seed)
}

pub fn render_recast_with(
    templates: &FeedbackTemplates,
    result: &CorrectionResult,
    edits: &[EditSpan],
    rng_seed: u64,
) -> Result<GrammarFeedback, GrammarError> {
    if !result.accepted {
        return Err(GrammarError::NotAccepted(result.rejection_reason));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let prefix = &templates.prefixes[rng.gen_range(0..templates.prefixes.len())];
    let suffix = &templates.suffixes[rng.gen_range(0..templates.suffixes.len())];

    let corrected = result.corrected.as_str();
    let corr_tokens = tokenize(corrected);
    let orig_tokens = tokenize(&result.original);
    let word_count = corrected.split_whitespace().count();

    let first = edits.first();
    let (quoted, constituent_used) = match first {
        Some(edit) if word_count > MAX_FULL_RECAST_WORDS && !corr_tokens.is_empty() => {
            let window = clause_window(&corr_tokens, edit.corrected_tokens.clone());
            (slice_tokens(corrected, &corr_tokens, window), true)
        }
        _ => (corrected, false),
    };

    let explanation_text = match first {
        Some(edit) => {
            let bad = slice_tokens(&result.original, &orig_tokens, edit.original_tokens.clone());
            let good = slice_tokens(corrected, &corr_tokens, edit.corrected_tokens.clone());
            templates
                .explanation(edit.error_type, edit.op)
                .replace("{bad}", bad)
                .replace("{good}", good)
        }
        None => String::new(),
    };

    let recast_text = format!("{prefix} \"{quoted}\".");
    let full_text = [recast_text.as_str(), explanation_text.as_str(), suffix.as_str()]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ");
    Ok(GrammarFeedback {
        recast_text,
        explanation_text,
        full_text,
        confirmation_prefix: prefix.clone(),
        confirmation_suffix: suffix.clone(),
        constituent_used,
        quoted: quoted.to_string(),
    })
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    pred.trim() == gold.trim()
}

pub fn substring_match(pred: &str, gold: &str) -> bool {
    pred.contains(gold.trim())
}
