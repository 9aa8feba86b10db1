//! Checker, predictor and fuzzer wired into one validation flow.
//!
//! A pair the checker decides is reported with formal provenance. Otherwise
//! the predictor is asked; predicted return-value or memory unsoundness is
//! handed to the fuzzer for confirmation, and everything else is reported as
//! predicted.

mod report;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checker::{
    check_pair, CheckConfig, CounterExample, ReasonSet, UnknownCause, UnsoundReason, Verdict,
};
use crate::fuzzer::{fuzz, FuzzConfig, FuzzReport, FuzzVerdict};
use crate::ir::TransformationPair;
use crate::predictor::{BackendConfig, Label, PredictError, Prediction, Predictor};

pub use report::{
    read_report, write_report, CounterExampleDoc, FuzzSummary, NamedValue, PipelineReport,
    PredictionSummary, Timings, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CheckerDecided,
    RoutedToPredictor,
    Predicted,
    RoutedToFuzzer,
    FuzzerConfirmed,
    FuzzerUnconfirmed,
    Reported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoundProvenance {
    Formal,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsoundProvenance {
    Formal,
    FuzzConfirmed,
    PredictedUnconfirmed,
}

/// Why a report ends undecided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalCause {
    UnboundedLoop,
    ExternalCall,
    EnumerationBudgetExceeded,
    Timeout,
    TruncatedUndefEnumeration,
    PredictorUnavailable,
    /// Only from a standalone fuzzing run.
    NoCounterexampleFound,
}

impl From<UnknownCause> for FinalCause {
    fn from(c: UnknownCause) -> FinalCause {
        match c {
            UnknownCause::UnboundedLoop => FinalCause::UnboundedLoop,
            UnknownCause::ExternalCall => FinalCause::ExternalCall,
            UnknownCause::EnumerationBudgetExceeded => FinalCause::EnumerationBudgetExceeded,
            UnknownCause::Timeout => FinalCause::Timeout,
            UnknownCause::TruncatedUndefEnumeration => FinalCause::TruncatedUndefEnumeration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "final", rename_all = "snake_case")]
pub enum Final {
    Sound {
        provenance: SoundProvenance,
    },
    Unsound {
        reasons: ReasonSet,
        provenance: UnsoundProvenance,
    },
    Unknown {
        cause: FinalCause,
    },
}

impl Final {
    /// Process exit code: 0 sound, 1 unsound, 2 unknown.
    pub fn exit_code(&self) -> i32 {
        match self {
            Final::Sound { .. } => 0,
            Final::Unsound { .. } => 1,
            Final::Unknown { .. } => 2,
        }
    }
}

/// Result of routing the stage outputs of one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routed {
    pub trace: Vec<Stage>,
    pub final_state: Final,
    pub counterexample: Option<CounterExample>,
}

/// Return-value and memory reasons of an unsound prediction, if any; the
/// fuzzer runs exactly when this is `Some`.
pub fn fuzz_reasons(
    verdict: &Verdict,
    prediction: &Result<Prediction, PredictError>,
) -> Option<ReasonSet> {
    if !matches!(verdict, Verdict::Unknown { .. }) {
        return None;
    }
    let p = prediction.as_ref().ok()?;
    if p.status != Label::Unsound {
        return None;
    }
    let rs: ReasonSet = p
        .reasons
        .iter()
        .copied()
        .filter(|r| matches!(r, UnsoundReason::ReturnValue | UnsoundReason::Memory))
        .collect();
    (!rs.is_empty()).then_some(rs)
}

/// Maps stage outputs to a trace and final state. Later-stage inputs are
/// ignored once an earlier stage decides; a missing fuzz report where one
/// was due counts as no counterexample.
pub fn finalize(
    verdict: &Verdict,
    prediction: Option<&Result<Prediction, PredictError>>,
    fuzz: Option<&FuzzReport>,
) -> Routed {
    let done = |mut trace: Vec<Stage>, final_state, counterexample| {
        trace.push(Stage::Reported);
        Routed {
            trace,
            final_state,
            counterexample,
        }
    };
    match verdict {
        Verdict::Sound => {
            return done(
                vec![Stage::CheckerDecided],
                Final::Sound {
                    provenance: SoundProvenance::Formal,
                },
                None,
            )
        }
        Verdict::Unsound {
            reasons,
            counterexample,
        } => {
            return done(
                vec![Stage::CheckerDecided],
                Final::Unsound {
                    reasons: reasons.clone(),
                    provenance: UnsoundProvenance::Formal,
                },
                Some(counterexample.clone()),
            )
        }
        Verdict::Unknown { .. } => {}
    }

    let unavailable = || Final::Unknown {
        cause: FinalCause::PredictorUnavailable,
    };
    let Some(prediction) = prediction else {
        return done(vec![Stage::RoutedToPredictor], unavailable(), None);
    };
    let p = match prediction {
        Ok(p) => p,
        Err(_) => return done(vec![Stage::RoutedToPredictor], unavailable(), None),
    };
    let mut trace = vec![Stage::RoutedToPredictor, Stage::Predicted];
    if p.status == Label::Sound {
        return done(
            trace,
            Final::Sound {
                provenance: SoundProvenance::Predicted,
            },
            None,
        );
    }
    let unconfirmed = Final::Unsound {
        reasons: p.reasons.clone(),
        provenance: UnsoundProvenance::PredictedUnconfirmed,
    };
    if fuzz_reasons(verdict, prediction).is_none() {
        return done(trace, unconfirmed, None);
    }
    trace.push(Stage::RoutedToFuzzer);
    match fuzz.map(|f| &f.verdict) {
        Some(FuzzVerdict::CounterexampleFound {
            counterexample,
            reasons,
            ..
        }) => {
            trace.push(Stage::FuzzerConfirmed);
            done(
                trace,
                Final::Unsound {
                    reasons: reasons.clone(),
                    provenance: UnsoundProvenance::FuzzConfirmed,
                },
                Some(counterexample.clone()),
            )
        }
        _ => {
            trace.push(Stage::FuzzerUnconfirmed);
            done(trace, unconfirmed, None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub check: CheckConfig,
    pub backend: BackendConfig,
    pub fuzz: FuzzConfig,
    /// Where the CLI writes the report; `None` means `<id>.report.json`.
    pub report_path: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            check: CheckConfig::default(),
            backend: BackendConfig::Remote(Default::default()),
            fuzz: FuzzConfig::default(),
            report_path: None,
        }
    }
}

/// A configured pipeline; the backend is built once and shared.
pub struct Pipeline {
    config: PipelineConfig,
    predictor: Result<Predictor, PredictError>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Pipeline {
        let predictor = Predictor::new(config.backend.clone());
        Pipeline { config, predictor }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs the whole flow on one pair. Stage errors end up in the report.
    pub fn validate(&self, pair: &TransformationPair) -> PipelineReport {
        let start = Instant::now();
        let mut timings = Timings::default();

        let t = Instant::now();
        let verdict = check_pair(pair, &self.config.check);
        timings.checker_ms = Some(ms(t));

        let mut prediction = None;
        let mut fuzz_report = None;
        if matches!(verdict, Verdict::Unknown { .. }) {
            let t = Instant::now();
            let p = match &self.predictor {
                Ok(pred) => pred.predict(pair),
                Err(e) => Err(e.clone()),
            };
            timings.predictor_ms = Some(ms(t));
            if let Some(reasons) = fuzz_reasons(&verdict, &p) {
                let t = Instant::now();
                fuzz_report = fuzz(pair, &reasons, &self.config.fuzz).ok();
                timings.fuzzer_ms = Some(ms(t));
            }
            prediction = Some(p);
        }

        let routed = finalize(&verdict, prediction.as_ref(), fuzz_report.as_ref());
        timings.total_ms = ms(start);
        PipelineReport::new(
            pair,
            routed,
            Some(&verdict),
            prediction.as_ref(),
            fuzz_report.as_ref(),
            timings,
        )
    }
}

/// One-shot [`Pipeline::validate`].
pub fn validate(pair: &TransformationPair, cfg: &PipelineConfig) -> PipelineReport {
    Pipeline::new(cfg.clone()).validate(pair)
}
