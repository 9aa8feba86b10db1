//! Bounded-exhaustive refinement checking of transformation pairs.
//!
//! Every input in a finite input space (parameters plus the initial contents
//! of pointer-parameter buffers) is run through both functions, undef choices
//! are enumerated, and the target's outcome set must refine the source's.
//! Small spaces are enumerated completely; larger ones fall back to a
//! boundary-value sub-lattice and can then only produce `Unsound` or
//! `Unknown`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{mask, Function, TransformationPair, Type};
use crate::semantics::{
    outcome_refines, outcome_set, ExecOutcome, MemoryLayout, MemoryState, Program,
    RefinementResult, RefinementStatus, RuntimeValue, UndefBudget, Violation,
};

/// Why a transformation is unsound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsoundReason {
    ReturnValue,
    Memory,
    #[serde(rename = "new_ub")]
    NewUB,
}

impl UnsoundReason {
    pub const ALL: [UnsoundReason; 3] = [
        UnsoundReason::ReturnValue,
        UnsoundReason::Memory,
        UnsoundReason::NewUB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UnsoundReason::ReturnValue => "return_value",
            UnsoundReason::Memory => "memory",
            UnsoundReason::NewUB => "new_ub",
        }
    }
}

impl fmt::Display for UnsoundReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for UnsoundReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "return_value" | "return" | "returnvalue" => Ok(UnsoundReason::ReturnValue),
            "memory" | "mem" => Ok(UnsoundReason::Memory),
            "new_ub" | "ub" | "newub" => Ok(UnsoundReason::NewUB),
            _ => Err(format!(
                "unknown unsoundness reason `{s}` (expected return_value, memory or new_ub)"
            )),
        }
    }
}

/// Reasons are kept ordered: return value, memory, new UB.
pub type ReasonSet = BTreeSet<UnsoundReason>;

/// Initial value of a buffer cell in the boundary sub-lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellInit {
    Zero,
    One,
    AllOnes,
}

impl CellInit {
    fn value(self, width: u32) -> u64 {
        match self {
            CellInit::Zero => 0,
            CellInit::One => 1,
            CellInit::AllOnes => mask(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Input spaces of at most this many bits are enumerated completely.
    pub max_enum_bits: u32,
    /// Step budget per execution.
    pub fuel: u64,
    /// Maximum undef uses enumerated per execution.
    pub undef_budget: u32,
    pub mem_cells_per_ptr_param: u32,
    /// Cell values used when the input space is too large to enumerate.
    pub mem_init_domain: Vec<CellInit>,
    pub timeout_ms: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            max_enum_bits: 20,
            fuel: 10_000,
            undef_budget: 2,
            mem_cells_per_ptr_param: 2,
            mem_init_domain: vec![CellInit::Zero, CellInit::One, CellInit::AllOnes],
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid checker configuration: {0}")]
pub struct ConfigError(pub String);

impl CheckConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("max_enum_bits", self.max_enum_bits as u64),
            ("fuel", self.fuel),
            ("undef_budget", self.undef_budget as u64),
            (
                "mem_cells_per_ptr_param",
                self.mem_cells_per_ptr_param as u64,
            ),
            ("timeout_ms", self.timeout_ms),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if self.mem_init_domain.is_empty() {
            return Err(ConfigError("mem_init_domain must not be empty".into()));
        }
        Ok(())
    }

    fn undef(&self) -> UndefBudget {
        UndefBudget::occurrences(self.undef_budget)
    }
}

/// A concrete input on which the target fails to refine the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterExample {
    pub args: Vec<RuntimeValue>,
    pub mem0: MemoryState,
    pub src_outcome: ExecOutcome,
    pub tgt_outcome: ExecOutcome,
}

impl CounterExample {
    /// Re-runs both functions on the recorded input: the recorded outcomes
    /// must reappear and refinement must still fail.
    pub fn reproduces(&self, pair: &TransformationPair, fuel: u64, undef_budget: u32) -> bool {
        let (Ok(src), Ok(tgt)) = (Program::lower(&pair.src), Program::lower(&pair.tgt)) else {
            return false;
        };
        let budget = UndefBudget::occurrences(undef_budget);
        let s = outcome_set(&src, &self.args, &self.mem0, fuel, budget);
        let t = outcome_set(&tgt, &self.args, &self.mem0, fuel, budget);
        s.outcomes.contains(&self.src_outcome)
            && t.outcomes.contains(&self.tgt_outcome)
            && outcome_refines(&t, &s).fails()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownCause {
    UnboundedLoop,
    ExternalCall,
    EnumerationBudgetExceeded,
    Timeout,
    TruncatedUndefEnumeration,
}

impl fmt::Display for UnknownCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnknownCause::UnboundedLoop => "unbounded_loop",
            UnknownCause::ExternalCall => "external_call",
            UnknownCause::EnumerationBudgetExceeded => "enumeration_budget_exceeded",
            UnknownCause::Timeout => "timeout",
            UnknownCause::TruncatedUndefEnumeration => "truncated_undef_enumeration",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Sound,
    Unsound {
        reasons: ReasonSet,
        counterexample: CounterExample,
    },
    Unknown {
        cause: UnknownCause,
    },
}

impl Verdict {
    pub fn unknown(cause: UnknownCause) -> Verdict {
        Verdict::Unknown { cause }
    }
}

/// Maps the structural violations of a failed refinement onto reasons.
/// Extra poison and mismatched values are both return-value problems.
pub fn classify_failure(result: &RefinementResult) -> ReasonSet {
    result
        .violations
        .iter()
        .map(|v| match v {
            Violation::TargetUb => UnsoundReason::NewUB,
            Violation::ExtraPoison | Violation::ValueMismatch => UnsoundReason::ReturnValue,
            Violation::MemoryMismatch => UnsoundReason::Memory,
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Values {
    /// Every value of the width, boundary values first.
    Full(u32),
    List(Vec<RuntimeValue>),
}

impl Values {
    fn len(&self) -> u128 {
        match self {
            Values::Full(w) => 1u128 << w,
            Values::List(v) => v.len() as u128,
        }
    }

    fn get(&self, k: u64) -> RuntimeValue {
        match self {
            Values::Full(w) => {
                let boundary = boundary_values(*w);
                let v = match boundary.get(k as usize) {
                    Some(&b) => b,
                    None => {
                        let mut sorted = boundary.clone();
                        sorted.sort_unstable();
                        let mut v = k - boundary.len() as u64;
                        for b in sorted {
                            if b <= v {
                                v += 1;
                            }
                        }
                        v
                    }
                };
                RuntimeValue::int(*w, v)
            }
            Values::List(vs) => vs[k as usize],
        }
    }
}

/// `{0, 1, all-ones, signed min, signed max}` for a width, deduplicated.
pub fn boundary_values(width: u32) -> Vec<u64> {
    let m = mask(width);
    let smin = 1u64 << (width - 1);
    let mut out = Vec::with_capacity(5);
    for v in [0, 1, m, smin, smin.wrapping_sub(1) & m] {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Param(usize),
    Cell(usize),
}

/// One concrete input: arguments and initial memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    pub args: Vec<RuntimeValue>,
    pub mem0: MemoryState,
}

/// The enumerable inputs of a function or pair, in a fixed canonical order:
/// mixed radix over buffer cells then parameters, last dimension fastest.
#[derive(Debug, Clone)]
pub struct InputSpace {
    layout: MemoryLayout,
    params: usize,
    dims: Vec<(Slot, Values)>,
    entropy_bits: u32,
    exhaustive: bool,
}

impl InputSpace {
    pub fn for_function(f: &Function, cfg: &CheckConfig) -> InputSpace {
        Self::build(
            f,
            MemoryLayout::for_function(f, cfg.mem_cells_per_ptr_param),
            cfg,
        )
    }

    pub fn for_pair(pair: &TransformationPair, cfg: &CheckConfig) -> InputSpace {
        Self::build(
            &pair.src,
            MemoryLayout::for_pair(pair, cfg.mem_cells_per_ptr_param),
            cfg,
        )
    }

    fn build(f: &Function, layout: MemoryLayout, cfg: &CheckConfig) -> InputSpace {
        let cell_bits = |t: Type| t.width().unwrap_or(0);
        let entropy_bits: u32 = f
            .params
            .iter()
            .map(|p| p.ty.width().unwrap_or(1))
            .chain((0..layout.total_cells()).map(|k| cell_bits(layout.cell_type(k))))
            .sum();
        let exhaustive = entropy_bits <= cfg.max_enum_bits;

        // Cells vary slowest and parameters fastest.
        let mut dims = Vec::new();
        for k in 0..layout.total_cells() {
            let values = match layout.cell_type(k) {
                Type::Ptr => Values::List(vec![RuntimeValue::Null]),
                Type::Int(w) if exhaustive => Values::Full(w),
                Type::Int(w) => {
                    let mut vs: Vec<RuntimeValue> = Vec::new();
                    for init in &cfg.mem_init_domain {
                        let v = RuntimeValue::int(w, init.value(w));
                        if !vs.contains(&v) {
                            vs.push(v);
                        }
                    }
                    Values::List(vs)
                }
            };
            dims.push((Slot::Cell(k), values));
        }
        for (i, p) in f.params.iter().enumerate() {
            let values = match p.ty {
                Type::Ptr => Values::List(vec![layout.pointer_to(i), RuntimeValue::Null]),
                Type::Int(w) if exhaustive => Values::Full(w),
                Type::Int(w) => Values::List(
                    boundary_values(w)
                        .into_iter()
                        .map(|v| RuntimeValue::int(w, v))
                        .collect(),
                ),
            };
            dims.push((Slot::Param(i), values));
        }
        InputSpace {
            layout,
            params: f.params.len(),
            dims,
            entropy_bits,
            exhaustive,
        }
    }

    /// Whether every input is enumerated (entropy within budget).
    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    /// Parameter bits plus buffer-cell bits; a pointer parameter counts one bit.
    pub fn entropy_bits(&self) -> u32 {
        self.entropy_bits
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn len(&self) -> u128 {
        self.dims.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `index`-th input in canonical order.
    pub fn input(&self, mut index: u128) -> Input {
        let mut args = vec![RuntimeValue::Poison; self.params];
        let mut cells = vec![RuntimeValue::Poison; self.layout.total_cells()];
        for (slot, values) in self.dims.iter().rev() {
            let n = values.len();
            let v = values.get((index % n) as u64);
            index /= n;
            match slot {
                Slot::Param(i) => args[*i] = v,
                Slot::Cell(k) => cells[*k] = v,
            }
        }
        Input {
            args,
            mem0: self.layout.build(&cells),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Input> + '_ {
        (0..self.len()).map(move |i| self.input(i))
    }
}

/// All inputs for `f` under `cfg`, in canonical order.
pub fn enumerate_inputs(f: &Function, cfg: &CheckConfig) -> InputSpace {
    InputSpace::for_function(f, cfg)
}

const CHUNK: u128 = 2048;

enum Event {
    Failure(Input, RefinementResult),
    OutOfFuel,
}

/// Decides refinement for `pair` by enumeration.
///
/// Inputs are visited in canonical order and the first input that either
/// fails refinement or runs out of fuel decides the verdict. Failures only
/// count when the source's undef choices were fully enumerated. Panics if
/// either function is malformed.
pub fn check_pair(pair: &TransformationPair, cfg: &CheckConfig) -> Verdict {
    if pair.src.has_external_call() || pair.tgt.has_external_call() {
        return Verdict::unknown(UnknownCause::ExternalCall);
    }
    let src = Program::lower(&pair.src).expect("source function must be well formed");
    let tgt = Program::lower(&pair.tgt).expect("target function must be well formed");
    let space = InputSpace::for_pair(pair, cfg);
    let budget = cfg.undef();
    let deadline = Instant::now() + Duration::from_millis(cfg.timeout_ms);
    let truncated = AtomicBool::new(false);

    let total = space.len();
    let mut start = 0u128;
    while start < total {
        if Instant::now() >= deadline {
            return Verdict::unknown(UnknownCause::Timeout);
        }
        let end = (start + CHUNK).min(total);
        let event = (start as u64..end as u64)
            .into_par_iter()
            .find_map_first(|i| {
                let input = space.input(i as u128);
                let s = outcome_set(&src, &input.args, &input.mem0, cfg.fuel, budget);
                let t = outcome_set(&tgt, &input.args, &input.mem0, cfg.fuel, budget);
                if !s.exhaustive || !t.exhaustive {
                    truncated.store(true, Ordering::Relaxed);
                }
                let r = outcome_refines(&t, &s);
                match r.status {
                    RefinementStatus::Holds => None,
                    RefinementStatus::Inconclusive => Some(Event::OutOfFuel),
                    RefinementStatus::Fails if s.exhaustive => Some(Event::Failure(input, r)),
                    RefinementStatus::Fails => None,
                }
            });
        match event {
            Some(Event::OutOfFuel) => return Verdict::unknown(UnknownCause::UnboundedLoop),
            Some(Event::Failure(input, r)) => {
                let reasons = classify_failure(&r);
                return Verdict::Unsound {
                    reasons,
                    counterexample: CounterExample {
                        args: input.args,
                        mem0: input.mem0,
                        src_outcome: r
                            .source_witness
                            .expect("failed refinement has a source outcome"),
                        tgt_outcome: r.witness.expect("failed refinement has a witness"),
                    },
                };
            }
            None => {}
        }
        start = end;
    }

    if !space.is_exhaustive() {
        Verdict::unknown(UnknownCause::EnumerationBudgetExceeded)
    } else if truncated.load(Ordering::Relaxed) {
        Verdict::unknown(UnknownCause::TruncatedUndefEnumeration)
    } else {
        Verdict::Sound
    }
}
