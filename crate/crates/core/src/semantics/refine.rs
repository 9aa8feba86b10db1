use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ExecOutcome, MemoryState, OutcomeSet, RuntimeValue};

/// Whether target value `tgt` is a permitted refinement of source value `src`.
///
/// Poison in the source permits anything. Undef in the source permits undef
/// or any defined value, but not poison. A defined source value must be
/// matched exactly.
pub fn value_refines(tgt: &RuntimeValue, src: &RuntimeValue) -> bool {
    match (src, tgt) {
        (RuntimeValue::Poison, _) => true,
        (RuntimeValue::Undef(_), RuntimeValue::Poison) => false,
        (RuntimeValue::Undef(_), _) => true,
        (s, t) => s == t,
    }
}

/// Cell-wise [`value_refines`] over caller-visible (parameter) buffers.
/// Blocks created by `alloca` are not observable and are ignored.
///
/// Panics if the two memories do not share the same parameter layout.
pub fn memory_refines(tgt: &MemoryState, src: &MemoryState) -> bool {
    let mut t = tgt.param_blocks();
    let mut s = src.param_blocks();
    loop {
        match (t.next(), s.next()) {
            (None, None) => return true,
            (Some(tb), Some(sb)) => {
                assert!(
                    tb.origin == sb.origin
                        && tb.elem == sb.elem
                        && tb.cells.len() == sb.cells.len(),
                    "memory layout mismatch between source and target"
                );
                if !tb
                    .cells
                    .iter()
                    .zip(&sb.cells)
                    .all(|(tc, sc)| value_refines(tc, sc))
                {
                    return false;
                }
            }
            _ => panic!("memory layout mismatch between source and target"),
        }
    }
}

/// Ways a target outcome set can fail to refine the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// Target triggers UB where the source never does.
    TargetUb,
    /// Target returns poison where the source returns something defined.
    ExtraPoison,
    /// Target returns a defined value the source cannot produce.
    ValueMismatch,
    /// Return value is fine but no matching source run leaves compatible memory.
    MemoryMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementStatus {
    Holds,
    Fails,
    /// An execution ran out of fuel, so nothing can be concluded.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementResult {
    pub status: RefinementStatus,
    pub violations: BTreeSet<Violation>,
    /// First offending target outcome.
    pub witness: Option<ExecOutcome>,
    /// Source outcome the witness is best compared against.
    pub source_witness: Option<ExecOutcome>,
    /// Set when either outcome set was sampled rather than enumerated.
    pub approximate: bool,
}

impl RefinementResult {
    pub fn holds(&self) -> bool {
        self.status == RefinementStatus::Holds
    }

    pub fn fails(&self) -> bool {
        self.status == RefinementStatus::Fails
    }
}

/// Checks that every target behavior is a permitted source behavior.
///
/// Source UB on any path permits anything. Otherwise target UB is a new UB,
/// each target return value must be refined by some source return value, and
/// for each target return some source run must match both value and memory.
pub fn outcome_refines(tgt: &OutcomeSet, src: &OutcomeSet) -> RefinementResult {
    let approximate = !tgt.exhaustive || !src.exhaustive;
    let mut result = RefinementResult {
        status: RefinementStatus::Holds,
        violations: BTreeSet::new(),
        witness: None,
        source_witness: None,
        approximate,
    };
    if src.has_ub() {
        return result;
    }
    if src.has_out_of_fuel() || tgt.has_out_of_fuel() {
        result.status = RefinementStatus::Inconclusive;
        return result;
    }

    let note =
        |v: Violation, t: &ExecOutcome, s: Option<&ExecOutcome>, r: &mut RefinementResult| {
            r.violations.insert(v);
            if r.witness.is_none() {
                r.witness = Some(t.clone());
                r.source_witness = s.or(src.outcomes.first()).cloned();
            }
        };

    for t in &tgt.outcomes {
        match t {
            ExecOutcome::TriggeredUb { .. } => note(Violation::TargetUb, t, None, &mut result),
            ExecOutcome::Returned { value, memory } => {
                let value_ok = |sv: &Option<RuntimeValue>| match (value, sv) {
                    (Some(tv), Some(sv)) => value_refines(tv, sv),
                    (None, None) => true,
                    _ => false,
                };
                let same_value = src.outcomes.iter().find(|s| match s {
                    ExecOutcome::Returned { value: sv, .. } => value_ok(sv),
                    _ => false,
                });
                let Some(value_match) = same_value else {
                    let v = if *value == Some(RuntimeValue::Poison) {
                        Violation::ExtraPoison
                    } else {
                        Violation::ValueMismatch
                    };
                    note(v, t, None, &mut result);
                    continue;
                };
                let full = src.outcomes.iter().any(|s| match s {
                    ExecOutcome::Returned {
                        value: sv,
                        memory: sm,
                    } => value_ok(sv) && memory_refines(memory, sm),
                    _ => false,
                });
                if !full {
                    note(Violation::MemoryMismatch, t, Some(value_match), &mut result);
                }
            }
            ExecOutcome::OutOfFuel => unreachable!("checked above"),
        }
    }
    if !result.violations.is_empty() {
        result.status = RefinementStatus::Fails;
    }
    result
}
