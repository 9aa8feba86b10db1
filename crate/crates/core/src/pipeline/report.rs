//! Versioned JSON report documents.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Final, Routed, Stage};
use crate::checker::{CounterExample, ReasonSet, UnknownCause, Verdict};
use crate::fuzzer::{FuzzReport, FuzzVerdict, StrategyStats};
use crate::ir::TransformationPair;
use crate::predictor::{BackendId, Label, PredictError, Prediction};
use crate::semantics::{ExecOutcome, MemoryState, RuntimeValue};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub value: RuntimeValue,
}

/// A counterexample with named arguments; [`Self::to_counterexample`]
/// recovers the replayable form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterExampleDoc {
    pub args: Vec<NamedValue>,
    pub mem0: MemoryState,
    pub src_outcome: ExecOutcome,
    pub tgt_outcome: ExecOutcome,
}

impl CounterExampleDoc {
    pub fn new(pair: &TransformationPair, ce: &CounterExample) -> CounterExampleDoc {
        CounterExampleDoc {
            args: pair
                .src
                .params
                .iter()
                .zip(&ce.args)
                .map(|(p, v)| NamedValue {
                    name: p.name.clone(),
                    ty: p.ty.to_string(),
                    value: *v,
                })
                .collect(),
            mem0: ce.mem0.clone(),
            src_outcome: ce.src_outcome.clone(),
            tgt_outcome: ce.tgt_outcome.clone(),
        }
    }

    pub fn to_counterexample(&self) -> CounterExample {
        CounterExample {
            args: self.args.iter().map(|a| a.value).collect(),
            mem0: self.mem0.clone(),
            src_outcome: self.src_outcome.clone(),
            tgt_outcome: self.tgt_outcome.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerSummary {
    /// `sound`, `unsound` or `unknown`.
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<UnknownCause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub backend: Option<BackendId>,
    pub status: Option<Label>,
    pub reasons: ReasonSet,
    pub raw: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub found: bool,
    /// Trials run, including the diverging one.
    pub trials: u64,
    pub strategy_stats: StrategyStats,
    pub discarded: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub checker_ms: Option<f64>,
    pub predictor_ms: Option<f64>,
    pub fuzzer_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub pair_id: String,
    pub stage_trace: Vec<Stage>,
    #[serde(flatten)]
    pub final_state: Final,
    pub checker: Option<CheckerSummary>,
    pub prediction: Option<PredictionSummary>,
    pub fuzz: Option<FuzzSummary>,
    pub counterexample: Option<CounterExampleDoc>,
    pub timings_ms: Timings,
}

impl PipelineReport {
    pub fn new(
        pair: &TransformationPair,
        routed: Routed,
        verdict: Option<&Verdict>,
        prediction: Option<&Result<Prediction, PredictError>>,
        fuzz: Option<&FuzzReport>,
        timings: Timings,
    ) -> PipelineReport {
        let checker = verdict.map(|v| match v {
            Verdict::Sound => CheckerSummary {
                verdict: "sound".into(),
                cause: None,
            },
            Verdict::Unsound { .. } => CheckerSummary {
                verdict: "unsound".into(),
                cause: None,
            },
            Verdict::Unknown { cause } => CheckerSummary {
                verdict: "unknown".into(),
                cause: Some(*cause),
            },
        });
        let prediction = prediction.map(|p| match p {
            Ok(p) => PredictionSummary {
                backend: Some(p.backend),
                status: Some(p.status),
                reasons: p.reasons.clone(),
                raw: Some(p.raw.clone()),
                error: None,
            },
            Err(e) => PredictionSummary {
                backend: None,
                status: None,
                reasons: ReasonSet::new(),
                raw: None,
                error: Some(e.to_string()),
            },
        });
        let fuzz = fuzz.map(|f| FuzzSummary {
            found: matches!(f.verdict, FuzzVerdict::CounterexampleFound { .. }),
            trials: match &f.verdict {
                FuzzVerdict::CounterexampleFound { trial, .. } => trial + 1,
                FuzzVerdict::NoneFound { trials_run } => *trials_run,
            },
            strategy_stats: f.strategy_stats,
            discarded: f.discarded,
        });
        PipelineReport {
            schema_version: SCHEMA_VERSION,
            pair_id: pair.id.clone(),
            stage_trace: routed.trace,
            final_state: routed.final_state,
            checker,
            prediction,
            fuzz,
            counterexample: routed
                .counterexample
                .map(|ce| CounterExampleDoc::new(pair, &ce)),
            timings_ms: timings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn write_report(report: &PipelineReport, path: &Path) -> io::Result<()> {
    let mut text = report.to_json();
    text.push('\n');
    fs::write(path, text)
}

pub fn read_report(path: &Path) -> io::Result<PipelineReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
