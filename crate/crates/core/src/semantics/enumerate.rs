use std::collections::HashSet;

use super::{execute, ExecOutcome, MemoryState, Program, RuntimeValue, UndefChoice};
use crate::ir::mask;

/// Largest total undef entropy (in bits) enumerated exhaustively per run.
pub const MAX_UNDEF_ENUM_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UndefBudget {
    /// Maximum dynamic undef uses on one path.
    pub max_occurrences: u32,
    /// Maximum summed width of those uses.
    pub max_bits: u32,
}

impl UndefBudget {
    pub fn occurrences(max_occurrences: u32) -> UndefBudget {
        UndefBudget {
            max_occurrences,
            max_bits: MAX_UNDEF_ENUM_BITS,
        }
    }
}

/// Every behavior of one function on one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeSet {
    /// Distinct outcomes in discovery order; never empty.
    pub outcomes: Vec<ExecOutcome>,
    /// False when undef choices were sampled rather than enumerated.
    pub exhaustive: bool,
}

impl OutcomeSet {
    pub fn singleton(o: ExecOutcome) -> OutcomeSet {
        OutcomeSet {
            outcomes: vec![o],
            exhaustive: true,
        }
    }

    pub fn has_ub(&self) -> bool {
        self.outcomes.iter().any(ExecOutcome::is_ub)
    }

    pub fn has_out_of_fuel(&self) -> bool {
        self.outcomes
            .iter()
            .any(|o| matches!(o, ExecOutcome::OutOfFuel))
    }

    pub fn returned(&self) -> impl Iterator<Item = (&Option<RuntimeValue>, &MemoryState)> {
        self.outcomes.iter().filter_map(|o| match o {
            ExecOutcome::Returned { value, memory } => Some((value, memory)),
            _ => None,
        })
    }
}

/// Replays a choice prefix, defaulting to zero past its end, and records the
/// width of every choice made.
struct Recorder {
    choices: Vec<u64>,
    widths: Vec<u32>,
}

impl UndefChoice for Recorder {
    fn choose(&mut self, width: u32) -> u64 {
        let i = self.widths.len();
        self.widths.push(width);
        if i < self.choices.len() {
            self.choices[i] & mask(width)
        } else {
            self.choices.push(0);
            0
        }
    }
}

struct Pattern<F: Fn(usize, u32) -> u64> {
    f: F,
    next: usize,
    used: usize,
}

impl<F: Fn(usize, u32) -> u64> UndefChoice for Pattern<F> {
    fn choose(&mut self, width: u32) -> u64 {
        let v = (self.f)(self.next, width) & mask(width);
        self.next += 1;
        self.used = self.next;
        v
    }
}

/// Collects the outcomes of `prog` over all undef choices.
///
/// Choices are enumerated depth-first, one choice sequence per control path,
/// as long as every path makes at most `budget.max_occurrences` undef
/// choices totalling at most `budget.max_bits` bits. Otherwise a fixed sample
/// of assignments is run instead and the set is marked non-exhaustive: all
/// zeros, all ones, and for each use `i` the assignment giving use `i` the
/// value 1 and every other use 0.
pub fn outcome_set(
    prog: &Program,
    args: &[RuntimeValue],
    mem0: &MemoryState,
    fuel: u64,
    budget: UndefBudget,
) -> OutcomeSet {
    let mut set = Collector::default();
    let mut choices: Vec<u64> = Vec::new();
    loop {
        let mut rec = Recorder {
            choices,
            widths: Vec::new(),
        };
        let out = execute(prog, args, mem0, fuel, &mut rec);
        let used = rec.widths.len();
        let bits: u32 = rec.widths.iter().sum();
        if used > budget.max_occurrences as usize || bits > budget.max_bits {
            return sampled(prog, args, mem0, fuel);
        }
        set.insert(out);
        choices = rec.choices;
        choices.truncate(used);
        // Odometer step over this path's choices, last choice fastest.
        let Some(j) = (0..used).rev().find(|&j| choices[j] < mask(rec.widths[j])) else {
            break;
        };
        choices[j] += 1;
        choices.truncate(j + 1);
    }
    OutcomeSet {
        outcomes: set.outcomes,
        exhaustive: true,
    }
}

fn sampled(prog: &Program, args: &[RuntimeValue], mem0: &MemoryState, fuel: u64) -> OutcomeSet {
    let mut set = Collector::default();
    let mut run = |f: &dyn Fn(usize, u32) -> u64| {
        let mut p = Pattern {
            f,
            next: 0,
            used: 0,
        };
        let out = execute(prog, args, mem0, fuel, &mut p);
        set.insert(out);
        p.used
    };
    let n = run(&|_, _| 0);
    run(&|_, _| u64::MAX);
    for i in 0..n {
        run(&|k, _| (k == i) as u64);
    }
    OutcomeSet {
        outcomes: set.outcomes,
        exhaustive: false,
    }
}

#[derive(Default)]
struct Collector {
    seen: HashSet<ExecOutcome>,
    outcomes: Vec<ExecOutcome>,
}

impl Collector {
    fn insert(&mut self, o: ExecOutcome) {
        if self.seen.insert(o.clone()) {
            self.outcomes.push(o);
        }
    }
}
