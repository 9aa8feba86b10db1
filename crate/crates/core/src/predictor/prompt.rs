//! Chat prompt encoding and response decoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Label;
use crate::checker::{ReasonSet, UnsoundReason};
use crate::ir::{print_function, Function, TransformationPair};

/// System message sent with every request and fine-tuning record.
pub const SYSTEM_TEXT: &str = "Your task involves analyzing the given IR transformations. \
On receiving a transformation in the \"Transformation: X \u{2192} Y\" format, analyze and respond in the \
\"Status: A Reason: B\" format. \"A\" denotes the transformation's correctness as CORRECT or UNSOUND. \
For UNSOUND transformations, list reasons \"B\". Your analysis involves a two-step approach:
- Special Value Injection: Inject specific values into both original and transformed IR to observe and compare behaviors.
- Step-by-Step Computation and Analysis: Execute detailed computations for both IR versions to pinpoint discrepancies.
Base your analysis on the following to assess soundness:
- Undefined Behavior Consistency: The target should only trigger UB if the source does. \
New UB in the target renders the transformation unsound.
- Return Domain Consistency: The target's return domain must align with the source's, except when the source triggers UB. \
A mismatched return domain without source UB suggests unsoundness.
- Poison Value Propagation: The target's return value should indicate poison only if the source\u{2019}s does. \
Any additional poison in the target signals unsoundness.
- Undefined Value Handling: The target's return value should be Undefined only if the source\u{2019}s is Undefined or poison. \
Introduction of Undefined values by the target without source justification is unsound.
- Return Value Consistency: The return values of both the source and target should match when the source is clear of \
Undefined or poison. Variances under a well-defined source indicate unsoundness.
- Memory State Refinement: Verify that the memory state after target execution refines that of the source's. \
Memory state inconsistencies suggest unsoundness.";

/// The six soundness criteria named in [`SYSTEM_TEXT`].
pub const CRITERIA: [&str; 6] = [
    "Undefined Behavior Consistency",
    "Return Domain Consistency",
    "Poison Value Propagation",
    "Undefined Value Handling",
    "Return Value Consistency",
    "Memory State Refinement",
];

/// The two analysis steps named in [`SYSTEM_TEXT`].
pub const ANALYSIS_STEPS: [&str; 2] = [
    "Special Value Injection",
    "Step-by-Step Computation and Analysis",
];

const USER_PREFIX: &str = "Transformation: ";
const ARROW: &str = " \u{2192} ";

/// Estimated token limit of the prediction models.
pub const MAX_PROMPT_TOKENS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
}

impl PromptBundle {
    /// Rough token count: one token per four characters, rounded up.
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn encode_user(src: &Function, tgt: &Function) -> String {
    format!(
        "{USER_PREFIX}{}{ARROW}{}",
        print_function(src),
        print_function(tgt)
    )
}

pub fn encode_prompt(pair: &TransformationPair) -> PromptBundle {
    PromptBundle {
        system: SYSTEM_TEXT.to_string(),
        user: encode_user(&pair.src, &pair.tgt),
    }
}

/// Splits a user message back into source and target text.
pub fn decode_user_prompt(user: &str) -> Option<(&str, &str)> {
    user.strip_prefix(USER_PREFIX)?.split_once(ARROW)
}

fn reason_phrase(r: UnsoundReason) -> &'static str {
    match r {
        UnsoundReason::ReturnValue => "return values",
        UnsoundReason::Memory => "memory",
        UnsoundReason::NewUB => "new undefined behavior",
    }
}

/// The assistant reply for a label. Reasons are ignored for `Sound`.
pub fn encode_assistant(label: Label, reasons: &ReasonSet) -> String {
    match label {
        Label::Sound => "Transformation status: SOUND Reason: none".to_string(),
        Label::Unsound => {
            let list: Vec<&str> = reasons.iter().map(|r| reason_phrase(*r)).collect();
            format!("Transformation status: UNSOUND Reason: {}", list.join(", "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeError {
    #[error("no status token in response")]
    Unparseable,
    #[error("unsound response names no recognizable reason")]
    MissingReason,
}

/// Label and reasons parsed from a model response.
pub fn decode_label(text: &str) -> Result<(Label, ReasonSet), DecodeError> {
    let lower = text.to_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find("status:") {
        let rest = &lower[from + pos + "status:".len()..];
        let word: String = rest
            .trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '"' || c == '\'')
            .chars()
            .take_while(|c| c.is_ascii_alphabetic())
            .collect();
        let label = match word.as_str() {
            "sound" | "correct" => Some(Label::Sound),
            "unsound" | "incorrect" => Some(Label::Unsound),
            _ => None,
        };
        match label {
            Some(Label::Sound) => return Ok((Label::Sound, ReasonSet::new())),
            Some(Label::Unsound) => {
                let tail = &rest[rest.find(word.as_str()).unwrap_or(0) + word.len()..];
                let reasons = scan_reasons(tail);
                if reasons.is_empty() {
                    return Err(DecodeError::MissingReason);
                }
                return Ok((Label::Unsound, reasons));
            }
            None => from += pos + "status:".len(),
        }
    }
    Err(DecodeError::Unparseable)
}

fn scan_reasons(lower: &str) -> ReasonSet {
    let mut reasons = ReasonSet::new();
    if lower.contains("return") {
        reasons.insert(UnsoundReason::ReturnValue);
    }
    if lower.contains("memory") {
        reasons.insert(UnsoundReason::Memory);
    }
    let ub_word = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|w| w == "ub");
    if lower.contains("undefined behavior") || lower.contains("undefined behaviour") || ub_word {
        reasons.insert(UnsoundReason::NewUB);
    }
    reasons
}
