//! Reason-directed differential fuzzing.
//!
//! Used to confirm predicted return-value or memory unsoundness with a
//! concrete input. Inputs come from a seeded generator whose strategy depends
//! on the predicted reasons; the earliest diverging trial wins and is shrunk.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{classify_failure, CounterExample, Input, ReasonSet, UnsoundReason};
use crate::ir::{mask, TransformationPair, Type};
use crate::semantics::{
    outcome_refines, outcome_set, MemoryLayout, OutcomeSet, Program, RuntimeValue, UndefBudget,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub iterations: u64,
    pub seed: u64,
    pub fuel: u64,
    pub time_budget_ms: u64,
    pub undef_budget: u32,
    pub mem_cells_per_ptr_param: u32,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            iterations: 100_000,
            seed: 0,
            fuel: 1_000_000,
            time_budget_ms: 60_000,
            undef_budget: 2,
            mem_cells_per_ptr_param: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuzzError {
    #[error("fuzzing needs a return_value or memory reason, got {0:?}")]
    RejectedReason(ReasonSet),
    #[error("invalid fuzzer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ReturnValue,
    Memory,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub return_value: u64,
    pub memory: u64,
}

impl StrategyStats {
    fn count(&mut self, s: Strategy) {
        match s {
            Strategy::ReturnValue => self.return_value += 1,
            Strategy::Memory => self.memory += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.return_value + self.memory
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum FuzzVerdict {
    CounterexampleFound {
        counterexample: CounterExample,
        reasons: ReasonSet,
        /// Zero-based index of the diverging trial.
        trial: u64,
    },
    NoneFound {
        trials_run: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub verdict: FuzzVerdict,
    pub strategy_stats: StrategyStats,
    /// Trials dropped because an execution ran out of fuel.
    pub discarded: u64,
}

impl FuzzReport {
    pub fn counterexample(&self) -> Option<&CounterExample> {
        match &self.verdict {
            FuzzVerdict::CounterexampleFound { counterexample, .. } => Some(counterexample),
            FuzzVerdict::NoneFound { .. } => None,
        }
    }
}

/// `{0, 1, 2^w-1, 2^(w-1), 2^(w-1)-1}` followed by the remaining powers of two
/// up to 64.
pub fn fuzz_boundary_values(width: u32) -> Vec<u64> {
    let mut out = crate::checker::boundary_values(width);
    for k in 1..=6 {
        let v = 1u64 << k;
        if v <= mask(width) && !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Seeded, stateful input generator.
///
/// The return-value strategy cycles through the boundary values first, then
/// draws each argument from the boundary set or uniformly with equal odds and
/// leaves memory zeroed. The memory strategy fills cells from
/// `{0, 1, all-ones, uniform}` and gives every i1 parameter both values over
/// each aligned pair of memory trials.
pub struct InputGenerator {
    rng: ChaCha8Rng,
    params: Vec<Type>,
    layout: MemoryLayout,
    strategies: Vec<Strategy>,
    trial: u64,
    rv_trials: u64,
    mem_trials: u64,
    i1_bits: Vec<bool>,
}

impl InputGenerator {
    /// Fails unless `reasons` contains return value or memory.
    pub fn new(
        pair: &TransformationPair,
        reasons: &ReasonSet,
        seed: u64,
        cells: u32,
    ) -> Result<Self, FuzzError> {
        let mut strategies = Vec::new();
        if reasons.contains(&UnsoundReason::ReturnValue) {
            strategies.push(Strategy::ReturnValue);
        }
        if reasons.contains(&UnsoundReason::Memory) {
            strategies.push(Strategy::Memory);
        }
        if strategies.is_empty() {
            return Err(FuzzError::RejectedReason(reasons.clone()));
        }
        Ok(InputGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: pair.src.params.iter().map(|p| p.ty).collect(),
            layout: MemoryLayout::for_pair(pair, cells),
            strategies,
            trial: 0,
            rv_trials: 0,
            mem_trials: 0,
            i1_bits: Vec::new(),
        })
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn next_input(&mut self) -> (Strategy, Input) {
        let strategy = self.strategies[(self.trial % self.strategies.len() as u64) as usize];
        self.trial += 1;
        let input = match strategy {
            Strategy::ReturnValue => self.return_value_input(),
            Strategy::Memory => self.memory_input(),
        };
        (strategy, input)
    }

    fn pointer(&mut self, param: usize) -> RuntimeValue {
        if self.rng.gen_ratio(7, 8) {
            self.layout.pointer_to(param)
        } else {
            RuntimeValue::Null
        }
    }

    fn biased(&mut self, width: u32) -> u64 {
        if self.rng.gen_bool(0.5) {
            let b = fuzz_boundary_values(width);
            b[self.rng.gen_range(0..b.len())]
        } else {
            self.rng.gen::<u64>() & mask(width)
        }
    }

    fn return_value_input(&mut self) -> Input {
        let k = self.rv_trials;
        self.rv_trials += 1;
        let params = self.params.clone();
        let args = params
            .iter()
            .enumerate()
            .map(|(i, ty)| match *ty {
                Type::Ptr => self.pointer(i),
                Type::Int(w) => {
                    let b = fuzz_boundary_values(w);
                    if (k as usize) < b.len() {
                        RuntimeValue::int(w, b[k as usize])
                    } else {
                        RuntimeValue::int(w, self.biased(w))
                    }
                }
            })
            .collect();
        let cells = (0..self.layout.total_cells())
            .map(|c| match self.layout.cell_type(c) {
                Type::Int(w) => RuntimeValue::int(w, 0),
                Type::Ptr => RuntimeValue::Null,
            })
            .collect::<Vec<_>>();
        Input {
            args,
            mem0: self.layout.build(&cells),
        }
    }

    fn memory_input(&mut self) -> Input {
        let k = self.mem_trials;
        self.mem_trials += 1;
        let params = self.params.clone();
        if k.is_multiple_of(2) {
            self.i1_bits = params.iter().map(|_| self.rng.gen()).collect();
        }
        let args = params
            .iter()
            .enumerate()
            .map(|(i, ty)| match *ty {
                Type::Ptr => self.pointer(i),
                Type::Int(1) => RuntimeValue::bool(self.i1_bits[i] ^ (k % 2 == 1)),
                Type::Int(w) => RuntimeValue::int(w, self.biased(w)),
            })
            .collect();
        let cells = (0..self.layout.total_cells())
            .map(|c| match self.layout.cell_type(c) {
                Type::Int(w) => {
                    let v = match self.rng.gen_range(0..4) {
                        0 => 0,
                        1 => 1,
                        2 => mask(w),
                        _ => self.rng.gen::<u64>() & mask(w),
                    };
                    RuntimeValue::int(w, v)
                }
                Type::Ptr => RuntimeValue::Null,
            })
            .collect::<Vec<_>>();
        Input {
            args,
            mem0: self.layout.build(&cells),
        }
    }
}

/// Outcome of running both sides on one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivergenceResult {
    pub diverged: bool,
    /// Return value takes precedence when both differ.
    pub reason: Option<UnsoundReason>,
    /// Every return-value or memory reason observed.
    pub reasons: ReasonSet,
    /// Either side ran out of fuel; the trial says nothing.
    pub discarded: bool,
    pub src: OutcomeSet,
    pub tgt: OutcomeSet,
    pub counterexample: Option<CounterExample>,
}

struct Sides {
    src: Program,
    tgt: Program,
}

impl Sides {
    fn new(pair: &TransformationPair) -> Sides {
        Sides {
            src: Program::lower(&pair.src).expect("source function must be well formed"),
            tgt: Program::lower(&pair.tgt).expect("target function must be well formed"),
        }
    }

    fn run(&self, input: &Input, fuel: u64, undef_budget: u32) -> DivergenceResult {
        let budget = UndefBudget::occurrences(undef_budget);
        let src = outcome_set(&self.src, &input.args, &input.mem0, fuel, budget);
        let tgt = outcome_set(&self.tgt, &input.args, &input.mem0, fuel, budget);
        let r = outcome_refines(&tgt, &src);
        let discarded = src.has_out_of_fuel() || tgt.has_out_of_fuel();
        // A sampled source set could miss the matching behavior.
        let reasons: ReasonSet = if r.fails() && src.exhaustive {
            classify_failure(&r)
                .into_iter()
                .filter(|r| *r != UnsoundReason::NewUB)
                .collect()
        } else {
            ReasonSet::new()
        };
        let diverged = !reasons.is_empty();
        let counterexample = diverged.then(|| CounterExample {
            args: input.args.clone(),
            mem0: input.mem0.clone(),
            src_outcome: r
                .source_witness
                .clone()
                .expect("failed refinement has a source outcome"),
            tgt_outcome: r.witness.clone().expect("failed refinement has a witness"),
        });
        DivergenceResult {
            diverged,
            reason: reasons.iter().next().copied(),
            reasons,
            discarded,
            src,
            tgt,
            counterexample,
        }
    }
}

/// Runs both functions on `input` and compares return values and memory.
/// Source UB, new target UB and out-of-fuel runs never count as divergence.
pub fn run_differential(
    pair: &TransformationPair,
    input: &Input,
    fuel: u64,
    undef_budget: u32,
) -> DivergenceResult {
    Sides::new(pair).run(input, fuel, undef_budget)
}

/// Re-runs a recorded counterexample.
pub fn replay(
    pair: &TransformationPair,
    ce: &CounterExample,
    fuel: u64,
    undef_budget: u32,
) -> DivergenceResult {
    let input = Input {
        args: ce.args.clone(),
        mem0: ce.mem0.clone(),
    };
    run_differential(pair, &input, fuel, undef_budget)
}

/// Greedily moves each integer argument and memory cell toward zero, first
/// trying zero and then half the current value, while the input still
/// diverges. Returns the input unchanged if it does not diverge.
pub fn shrink(
    pair: &TransformationPair,
    ce: &CounterExample,
    fuel: u64,
    undef_budget: u32,
) -> CounterExample {
    let sides = Sides::new(pair);
    let layout = MemoryLayout::for_pair(
        pair,
        ce.mem0
            .param_blocks()
            .next()
            .map_or(0, |b| b.cells.len() as u32),
    );
    let mut args = ce.args.clone();
    let mut cells = layout.cells_of(&ce.mem0);
    let mut best = sides.run(
        &Input {
            args: args.clone(),
            mem0: ce.mem0.clone(),
        },
        fuel,
        undef_budget,
    );
    if !best.diverged {
        return ce.clone();
    }
    let positions = args.len() + cells.len();
    loop {
        let mut changed = false;
        for pos in 0..positions {
            let current = if pos < args.len() {
                args[pos]
            } else {
                cells[pos - args.len()]
            };
            let RuntimeValue::Int { width, value } = current else {
                continue;
            };
            for candidate in [0, value >> 1] {
                if candidate == value {
                    continue;
                }
                let mut a = args.clone();
                let mut c = cells.clone();
                let v = RuntimeValue::int(width, candidate);
                if pos < a.len() {
                    a[pos] = v;
                } else {
                    c[pos - a.len()] = v;
                }
                let input = Input {
                    args: a.clone(),
                    mem0: layout.build(&c),
                };
                let r = sides.run(&input, fuel, undef_budget);
                if r.diverged {
                    args = a;
                    cells = c;
                    best = r;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
    best.counterexample.expect("shrunk input diverges")
}

const BATCH: usize = 256;

/// Searches for a return-value or memory counterexample.
///
/// Trials are generated sequentially and evaluated in parallel batches; the
/// lowest diverging trial index wins, so the report depends only on the pair,
/// reasons and configuration (plus the time budget).
pub fn fuzz(
    pair: &TransformationPair,
    reasons: &ReasonSet,
    cfg: &FuzzConfig,
) -> Result<FuzzReport, FuzzError> {
    if cfg.iterations == 0 || cfg.fuel == 0 {
        return Err(FuzzError::InvalidConfig(
            "iterations and fuel must be positive".into(),
        ));
    }
    let mut gen = InputGenerator::new(pair, reasons, cfg.seed, cfg.mem_cells_per_ptr_param)?;
    let sides = Sides::new(pair);
    let deadline = Instant::now() + Duration::from_millis(cfg.time_budget_ms);
    let mut stats = StrategyStats::default();
    let mut discarded = 0;
    let mut trial = 0u64;

    while trial < cfg.iterations && Instant::now() < deadline {
        let n = BATCH.min((cfg.iterations - trial) as usize);
        let batch: Vec<(Strategy, Input)> = (0..n).map(|_| gen.next_input()).collect();
        let results: Vec<DivergenceResult> = batch
            .par_iter()
            .map(|(_, input)| sides.run(input, cfg.fuel, cfg.undef_budget))
            .collect();
        for (i, ((strategy, _), r)) in batch.iter().zip(results).enumerate() {
            stats.count(*strategy);
            if r.discarded {
                discarded += 1;
            }
            if let Some(ce) = r.counterexample {
                let shrunk = shrink(pair, &ce, cfg.fuel, cfg.undef_budget);
                let reasons = sides
                    .run(
                        &Input {
                            args: shrunk.args.clone(),
                            mem0: shrunk.mem0.clone(),
                        },
                        cfg.fuel,
                        cfg.undef_budget,
                    )
                    .reasons;
                return Ok(FuzzReport {
                    verdict: FuzzVerdict::CounterexampleFound {
                        counterexample: shrunk,
                        reasons,
                        trial: trial + i as u64,
                    },
                    strategy_stats: stats,
                    discarded,
                });
            }
        }
        trial += n as u64;
    }
    Ok(FuzzReport {
        verdict: FuzzVerdict::NoneFound { trials_run: trial },
        strategy_stats: stats,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_pair;

    fn ashr_sdiv() -> TransformationPair {
        parse_pair(
            "define i8 @f(i8 %x) { entry: %r = ashr i8 %x, 1 ret i8 %r }",
            "define i8 @f(i8 %x) { entry: %r = sdiv i8 %x, 2 ret i8 %r }",
            "ashr",
        )
        .unwrap()
    }

    fn rv() -> ReasonSet {
        ReasonSet::from([UnsoundReason::ReturnValue])
    }

    fn mem() -> ReasonSet {
        ReasonSet::from([UnsoundReason::Memory])
    }

    fn input(args: Vec<RuntimeValue>) -> Input {
        Input {
            args,
            mem0: crate::semantics::MemoryState::empty(),
        }
    }

    #[test]
    fn boundary_values_lead() {
        let mut g = InputGenerator::new(&ashr_sdiv(), &rv(), 3, 2).unwrap();
        let first: Vec<u64> = (0..5)
            .map(|_| g.next_input().1.args[0].as_int().unwrap())
            .collect();
        assert_eq!(first, vec![0, 1, 255, 128, 127]);
        assert_eq!(
            fuzz_boundary_values(8),
            vec![0, 1, 255, 128, 127, 2, 4, 8, 16, 32, 64]
        );
        assert_eq!(fuzz_boundary_values(1), vec![0, 1]);
    }

    #[test]
    fn generator_is_deterministic() {
        let p = ashr_sdiv();
        let seq = |seed| {
            let mut g = InputGenerator::new(&p, &rv(), seed, 2).unwrap();
            (0..50).map(|_| g.next_input().1).collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
        assert_ne!(seq(7), seq(8));
    }

    #[test]
    fn i1_params_flip_within_pairs() {
        let p = parse_pair(
            "define void @f(ptr %p, i1 %c) { entry: ret void }",
            "define void @f(ptr %p, i1 %c) { entry: ret void }",
            "b",
        )
        .unwrap();
        let mut g = InputGenerator::new(&p, &mem(), 11, 2).unwrap();
        for _ in 0..20 {
            let a = g.next_input().1.args[1];
            let b = g.next_input().1.args[1];
            assert_ne!(a, b);
        }
    }

    #[test]
    fn differential_examples() {
        let p = ashr_sdiv();
        let r = run_differential(&p, &input(vec![RuntimeValue::int(8, 255)]), 1000, 2);
        assert!(r.diverged);
        assert_eq!(r.reason, Some(UnsoundReason::ReturnValue));
        let r = run_differential(&p, &input(vec![RuntimeValue::int(8, 4)]), 1000, 2);
        assert!(!r.diverged);
    }

    #[test]
    fn new_ub_is_not_divergence() {
        let p = parse_pair(
            "define i8 @f(i8 %x) { entry: ret i8 0 }",
            "define i8 @f(i8 %x) { entry: %r = udiv i8 1, %x ret i8 0 }",
            "ub",
        )
        .unwrap();
        assert!(!run_differential(&p, &input(vec![RuntimeValue::int(8, 0)]), 1000, 2).diverged);
    }

    #[test]
    fn fuzz_finds_ashr_sdiv() {
        let cfg = FuzzConfig {
            seed: 1,
            ..FuzzConfig::default()
        };
        let rep = fuzz(&ashr_sdiv(), &rv(), &cfg).unwrap();
        let FuzzVerdict::CounterexampleFound {
            counterexample,
            reasons,
            ..
        } = &rep.verdict
        else {
            panic!("{rep:?}")
        };
        assert_eq!(reasons, &rv());
        assert!(replay(&ashr_sdiv(), counterexample, 1000, 2).diverged);
        assert_eq!(fuzz(&ashr_sdiv(), &rv(), &cfg).unwrap(), rep);
    }

    #[test]
    fn sound_pair_finds_nothing() {
        let p = parse_pair(
            "define i8 @f(i8 %x) { entry: %r = mul i8 %x, 2 ret i8 %r }",
            "define i8 @f(i8 %x) { entry: %r = shl i8 %x, 1 ret i8 %r }",
            "s",
        )
        .unwrap();
        let cfg = FuzzConfig {
            iterations: 1000,
            ..FuzzConfig::default()
        };
        let rep = fuzz(&p, &rv(), &cfg).unwrap();
        assert_eq!(rep.verdict, FuzzVerdict::NoneFound { trials_run: 1000 });
        assert_eq!(rep.strategy_stats.return_value, 1000);
    }

    #[test]
    fn new_ub_only_is_rejected() {
        let r = fuzz(
            &ashr_sdiv(),
            &ReasonSet::from([UnsoundReason::NewUB]),
            &FuzzConfig::default(),
        );
        assert!(matches!(r, Err(FuzzError::RejectedReason(_))));
    }

    #[test]
    fn shrink_fixed_point_and_minimal() {
        let p = ashr_sdiv();
        let ce = run_differential(&p, &input(vec![RuntimeValue::int(8, 255)]), 1000, 2)
            .counterexample
            .unwrap();
        let s = shrink(&p, &ce, 1000, 2);
        assert_eq!(s, ce);
        assert_eq!(shrink(&p, &s, 1000, 2), s);
    }

    #[test]
    fn shrink_reduces_memory() {
        let p = parse_pair(
            "define i8 @f(ptr %p, i8 %x) { entry: ret i8 %x }",
            "define i8 @f(ptr %p, i8 %x) { entry: %c = icmp ugt i8 %x, 3 %r = select i1 %c, i8 0, i8 %x ret i8 %r }",
            "m",
        )
        .unwrap();
        let layout = MemoryLayout::for_pair(&p, 2);
        let i = Input {
            args: vec![layout.pointer_to(0), RuntimeValue::int(8, 200)],
            mem0: layout.build(&[RuntimeValue::int(8, 77), RuntimeValue::int(8, 9)]),
        };
        let ce = run_differential(&p, &i, 1000, 2).counterexample.unwrap();
        let s = shrink(&p, &ce, 1000, 2);
        assert_eq!(s.args[1], RuntimeValue::int(8, 6));
        assert_eq!(layout.cells_of(&s.mem0), vec![RuntimeValue::int(8, 0); 2]);
    }
}
