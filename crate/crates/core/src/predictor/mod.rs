//! Soundness prediction for pairs the checker cannot decide.
//!
//! Every backend produces response text that goes through the same decoder,
//! so offline backends exercise the protocol exactly as a model would.

mod prompt;
mod remote;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{check_pair, CheckConfig, ReasonSet, UnsoundReason, Verdict};
use crate::ir::{print_function, TransformationPair};

pub use prompt::{
    decode_label, decode_user_prompt, encode_assistant, encode_prompt, encode_user,
    estimate_tokens, DecodeError, PromptBundle, ANALYSIS_STEPS, CRITERIA, MAX_PROMPT_TOKENS,
    SYSTEM_TEXT,
};
pub use remote::{RemoteClient, RemoteConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Sound,
    Unsound,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Sound => "sound",
            Label::Unsound => "unsound",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendId {
    Remote,
    Heuristic,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Remote(RemoteConfig),
    /// Sound iff the two sides are equal up to renaming.
    Heuristic,
    /// Runs the checker with a generous configuration; `noise_rate` is the
    /// probability of flipping the answer.
    Oracle {
        noise_rate: f64,
        seed: u64,
    },
}

impl BackendConfig {
    pub fn id(&self) -> BackendId {
        match self {
            BackendConfig::Remote(_) => BackendId::Remote,
            BackendConfig::Heuristic => BackendId::Heuristic,
            BackendConfig::Oracle { .. } => BackendId::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub status: Label,
    /// Empty iff `status` is `Sound`.
    pub reasons: ReasonSet,
    /// Response text as received.
    pub raw: String,
    pub backend: BackendId,
}

impl Prediction {
    pub fn decode(raw: &str, backend: BackendId) -> Result<Prediction, DecodeError> {
        let (status, reasons) = decode_label(raw)?;
        Ok(Prediction {
            status,
            reasons,
            raw: raw.to_string(),
            backend,
        })
    }
}

/// Decodes a response from an unspecified backend.
pub fn decode_response(text: &str) -> Result<Prediction, DecodeError> {
    Prediction::decode(text, BackendId::Remote)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode response: {0}")]
    Decode(#[from] DecodeError),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("prompt too large: about {estimated} tokens, limit {limit}")]
    TooLarge { estimated: usize, limit: usize },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// Checker settings used by the oracle backend.
pub fn oracle_check_config() -> CheckConfig {
    CheckConfig {
        max_enum_bits: 24,
        fuel: 1_000_000,
        undef_budget: 3,
        ..CheckConfig::default()
    }
}

/// A constructed backend; shareable across threads.
pub struct Predictor {
    config: BackendConfig,
    remote: Option<RemoteClient>,
}

impl Predictor {
    pub fn new(config: BackendConfig) -> Result<Predictor, PredictError> {
        let remote = match &config {
            BackendConfig::Remote(rc) => Some(RemoteClient::new(rc.clone())?),
            BackendConfig::Oracle { noise_rate, .. } if !(0.0..=1.0).contains(noise_rate) => {
                return Err(PredictError::InvalidConfig(format!(
                    "noise rate {noise_rate} is outside [0, 1]"
                )));
            }
            _ => None,
        };
        Ok(Predictor { config, remote })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn predict(&self, pair: &TransformationPair) -> Result<Prediction, PredictError> {
        let prompt = encode_prompt(pair);
        let estimated = prompt.estimated_tokens();
        if estimated > MAX_PROMPT_TOKENS {
            return Err(PredictError::TooLarge {
                estimated,
                limit: MAX_PROMPT_TOKENS,
            });
        }
        let raw = match &self.config {
            BackendConfig::Remote(_) => self
                .remote
                .as_ref()
                .expect("remote client")
                .complete(&prompt)?,
            BackendConfig::Heuristic => heuristic(pair),
            BackendConfig::Oracle { noise_rate, seed } => oracle(pair, *noise_rate, *seed),
        };
        Ok(Prediction::decode(&raw, self.config.id())?)
    }
}

pub fn predict(
    pair: &TransformationPair,
    backend: &BackendConfig,
) -> Result<Prediction, PredictError> {
    Predictor::new(backend.clone())?.predict(pair)
}

fn heuristic(pair: &TransformationPair) -> String {
    if pair.src.alpha_normalized() == pair.tgt.alpha_normalized() {
        encode_assistant(Label::Sound, &ReasonSet::new())
    } else {
        encode_assistant(
            Label::Unsound,
            &ReasonSet::from([UnsoundReason::ReturnValue]),
        )
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn oracle(pair: &TransformationPair, noise_rate: f64, seed: u64) -> String {
    let (mut label, mut reasons) = match check_pair(pair, &oracle_check_config()) {
        Verdict::Unsound { reasons, .. } => (Label::Unsound, reasons),
        Verdict::Sound | Verdict::Unknown { .. } => (Label::Sound, ReasonSet::new()),
    };
    let text = format!(
        "{}\0{}",
        print_function(&pair.src),
        print_function(&pair.tgt)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(text.as_bytes()));
    if noise_rate > 0.0 && rng.gen_bool(noise_rate) {
        (label, reasons) = match label {
            Label::Sound => (
                Label::Unsound,
                ReasonSet::from([UnsoundReason::ReturnValue]),
            ),
            Label::Unsound => (Label::Sound, ReasonSet::new()),
        };
    }
    encode_assistant(label, &reasons)
}
