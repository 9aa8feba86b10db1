//! Shared fixtures: the pad-buffer pairs, the loop wrapper, a straight-line
//! pair generator and an independent brute-force reference evaluator.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transval::checker::{CounterExample, ReasonSet, UnsoundReason};
use transval::ir::{parse_pair, TransformationPair};
use transval::semantics::RuntimeValue;

/// Iterations of the counting loop; enough to exhaust the default fuel.
pub const LOOP_ITERS: u32 = 5000;

/// Function text whose entry block spins through a counting loop before
/// falling into `body`, which must start with the label `exit:`.
pub fn looped(header: &str, body: &str) -> String {
    format!(
        "{header} {{\nentry:\n  br label %loop\nloop:\n  %i = phi i32 [ 0, %entry ], [ %next, %loop ]\n  %next = add i32 %i, 1\n  %done = icmp eq i32 %next, {LOOP_ITERS}\n  br i1 %done, label %exit, label %loop\n{body}\n}}\n"
    )
}

/// Function text with `body` (starting with `exit:`) as its only code.
pub fn straight(header: &str, body: &str) -> String {
    format!("{header} {{\n{body}\n}}\n")
}

fn wrap(header: &str, body: &str, with_loop: bool) -> String {
    if with_loop {
        looped(header, body)
    } else {
        straight(header, body)
    }
}

pub const PAD_HEADER: &str = "define void @pad_top(ptr %sram, i8 %pad_val, i1 %is_min_pad_value)";
pub const PAD_SRC_BODY: &str = "exit:\n  store i8 0, ptr %sram\n  ret void";
pub const PAD_TGT_BODY: &str =
    "exit:\n  %v = select i1 %is_min_pad_value, i8 %pad_val, i8 0\n  store i8 %v, ptr %sram\n  ret void";

/// Padding always writes zero in the source; the target writes the pad
/// value when the minimum-pad flag is set.
pub fn pad_pair(with_loop: bool) -> TransformationPair {
    pair(
        if with_loop { "pad_top_loop" } else { "pad_top" },
        &wrap(PAD_HEADER, PAD_SRC_BODY, with_loop),
        &wrap(PAD_HEADER, PAD_TGT_BODY, with_loop),
    )
}

pub fn reason_set(rs: &[UnsoundReason]) -> ReasonSet {
    rs.iter().copied().collect()
}

pub fn pair(id: &str, src: &str, tgt: &str) -> TransformationPair {
    parse_pair(src, tgt, id).unwrap_or_else(|e| panic!("fixture {id} does not parse: {e}"))
}

pub struct Known {
    pub id: &'static str,
    pub header: &'static str,
    pub src: &'static str,
    pub tgt: &'static str,
    /// `None` for a sound pair.
    pub reason: Option<UnsoundReason>,
}

pub const KNOWN: [Known; 5] = [
    Known {
        id: "mul2_shl1",
        header: "define i8 @f(i8 %x)",
        src: "exit:\n  %r = mul i8 %x, 2\n  ret i8 %r",
        tgt: "exit:\n  %r = shl i8 %x, 1\n  ret i8 %r",
        reason: None,
    },
    Known {
        id: "add0",
        header: "define i8 @f(i8 %x)",
        src: "exit:\n  %r = add i8 %x, 0\n  ret i8 %r",
        tgt: "exit:\n  ret i8 %x",
        reason: None,
    },
    Known {
        id: "ashr_sdiv",
        header: "define i8 @f(i8 %x)",
        src: "exit:\n  %r = ashr i8 %x, 1\n  ret i8 %r",
        tgt: "exit:\n  %r = sdiv i8 %x, 2\n  ret i8 %r",
        reason: Some(UnsoundReason::ReturnValue),
    },
    Known {
        id: "udiv_hoist",
        header: "define i8 @f(i8 %x, i8 %y, i1 %c)",
        src: "exit:\n  br i1 %c, label %div, label %out\ndiv:\n  %q = udiv i8 %x, %y\n  br label %out\nout:\n  %r = phi i8 [ %q, %div ], [ 0, %exit ]\n  ret i8 %r",
        tgt: "exit:\n  %q = udiv i8 %x, %y\n  %r = select i1 %c, i8 %q, i8 0\n  ret i8 %r",
        reason: Some(UnsoundReason::NewUB),
    },
    Known {
        id: "pad_top",
        header: PAD_HEADER,
        src: PAD_SRC_BODY,
        tgt: PAD_TGT_BODY,
        reason: Some(UnsoundReason::Memory),
    },
];

impl Known {
    pub fn pair(&self, with_loop: bool) -> TransformationPair {
        let id = if with_loop {
            format!("{}_loop", self.id)
        } else {
            self.id.to_string()
        };
        pair(
            &id,
            &wrap(self.header, self.src, with_loop),
            &wrap(self.header, self.tgt, with_loop),
        )
    }
}

// ---------------------------------------------------------------------------
// Straight-line programs and their reference semantics.

fn mask(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

fn signed(v: u64, w: u32) -> i64 {
    let sh = 64 - w;
    ((v << sh) as i64) >> sh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Int(u32),
    Ptr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opnd {
    Reg(usize),
    Const(u64),
    Undef,
    Poison,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ins {
    Bin {
        op: &'static str,
        nuw: bool,
        nsw: bool,
        exact: bool,
        w: u32,
        a: Opnd,
        b: Opnd,
    },
    Cmp {
        pred: &'static str,
        w: u32,
        a: Opnd,
        b: Opnd,
    },
    Sel {
        w: u32,
        c: Opnd,
        t: Opnd,
        e: Opnd,
    },
    Cast {
        op: &'static str,
        from: u32,
        to: u32,
        v: Opnd,
    },
    Load,
    Store(Opnd),
}

pub const BINOPS: [&str; 13] = [
    "add", "sub", "mul", "udiv", "sdiv", "urem", "srem", "shl", "lshr", "ashr", "and", "or", "xor",
];
pub const PREDS: [&str; 10] = [
    "eq", "ne", "ult", "ule", "ugt", "uge", "slt", "sle", "sgt", "sge",
];

fn wraps(op: &str) -> bool {
    matches!(op, "add" | "sub" | "mul" | "shl")
}

fn exacts(op: &str) -> bool {
    matches!(op, "udiv" | "sdiv" | "lshr" | "ashr")
}

/// A straight-line function. Slot `k` is parameter `k` for `k < params.len()`,
/// otherwise the result of instruction `k - params.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Func {
    pub params: Vec<Param>,
    pub body: Vec<Ins>,
    pub ret: (u32, Opnd),
}

impl Func {
    fn ptr_param(&self) -> Option<usize> {
        self.params.iter().position(|p| *p == Param::Ptr)
    }

    fn name(&self, slot: usize) -> String {
        if slot < self.params.len() {
            format!("%a{slot}")
        } else {
            format!("%v{}", slot - self.params.len())
        }
    }

    fn opnd(&self, o: Opnd, w: u32) -> String {
        match o {
            Opnd::Reg(s) => self.name(s),
            Opnd::Const(c) if w == 1 => if c & 1 == 1 { "true" } else { "false" }.to_string(),
            Opnd::Const(c) => c.to_string(),
            Opnd::Undef => "undef".into(),
            Opnd::Poison => "poison".into(),
        }
    }

    pub fn print(&self, name: &str) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .enumerate()
            .map(|(k, p)| match p {
                Param::Int(w) => format!("i{w} %a{k}"),
                Param::Ptr => format!("ptr %a{k}"),
            })
            .collect();
        let mut out = format!(
            "define i{} @{name}({}) {{\nentry:\n",
            self.ret.0,
            params.join(", ")
        );
        let p = self.ptr_param().map(|k| self.name(k)).unwrap_or_default();
        for (i, ins) in self.body.iter().enumerate() {
            let dst = self.name(self.params.len() + i);
            let line = match ins {
                Ins::Bin {
                    op,
                    nuw,
                    nsw,
                    exact,
                    w,
                    a,
                    b,
                } => {
                    let mut flags = String::new();
                    for (on, f) in [(*nuw, " nuw"), (*nsw, " nsw"), (*exact, " exact")] {
                        if on {
                            flags.push_str(f);
                        }
                    }
                    format!(
                        "{dst} = {op}{flags} i{w} {}, {}",
                        self.opnd(*a, *w),
                        self.opnd(*b, *w)
                    )
                }
                Ins::Cmp { pred, w, a, b } => {
                    format!(
                        "{dst} = icmp {pred} i{w} {}, {}",
                        self.opnd(*a, *w),
                        self.opnd(*b, *w)
                    )
                }
                Ins::Sel { w, c, t, e } => format!(
                    "{dst} = select i1 {}, i{w} {}, i{w} {}",
                    self.opnd(*c, 1),
                    self.opnd(*t, *w),
                    self.opnd(*e, *w)
                ),
                Ins::Cast { op, from, to, v } => {
                    format!("{dst} = {op} i{from} {} to i{to}", self.opnd(*v, *from))
                }
                Ins::Load => format!("{dst} = load i8, ptr {p}"),
                Ins::Store(v) => format!("store i8 {}, ptr {p}", self.opnd(*v, 8)),
            };
            out.push_str("  ");
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str(&format!(
            "  ret i{} {}\n}}\n",
            self.ret.0,
            self.opnd(self.ret.1, self.ret.0)
        ));
        out
    }

    fn operands(&self) -> Vec<(Opnd, u32)> {
        let mut v = Vec::new();
        for ins in &self.body {
            match *ins {
                Ins::Bin { w, a, b, .. } | Ins::Cmp { w, a, b, .. } => v.extend([(a, w), (b, w)]),
                Ins::Sel { w, c, t, e } => v.extend([(c, 1), (t, w), (e, w)]),
                Ins::Cast { from, v: x, .. } => v.push((x, from)),
                Ins::Load => {}
                Ins::Store(x) => v.push((x, 8)),
            }
        }
        v.push((self.ret.1, self.ret.0));
        v
    }

    /// Static undef sites and their summed width.
    pub fn undef_sites(&self) -> (u32, u32) {
        self.operands()
            .iter()
            .filter(|(o, _)| *o == Opnd::Undef)
            .fold((0, 0), |(n, b), (_, w)| (n + 1, b + w))
    }

    /// Input bits as the checker counts them: one bit per pointer plus its cell.
    pub fn entropy_bits(&self) -> u32 {
        self.params
            .iter()
            .map(|p| match p {
                Param::Int(w) => *w,
                Param::Ptr => 1 + 8,
            })
            .sum()
    }
}

/// `None` is poison.
type V = Option<u64>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Beh {
    Ub,
    Ret { value: V, cell: V },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arg {
    Int(u64),
    Ptr { valid: bool },
}

/// The values an operand may take at one use.
enum Vals {
    One(Option<V>),
    All(std::ops::RangeInclusive<u64>),
}

impl Iterator for Vals {
    type Item = V;

    fn next(&mut self) -> Option<V> {
        match self {
            Vals::One(v) => v.take(),
            Vals::All(r) => r.next().map(Some),
        }
    }
}

fn values(o: Opnd, w: u32, env: &[V]) -> Vals {
    match o {
        Opnd::Reg(s) => Vals::One(Some(env[s])),
        Opnd::Const(c) => Vals::One(Some(Some(c & mask(w)))),
        Opnd::Undef => Vals::All(0..=mask(w)),
        Opnd::Poison => Vals::One(Some(None)),
    }
}

/// `Err` is undefined behavior.
fn bin(op: &str, nuw: bool, nsw: bool, exact: bool, w: u32, a: V, b: V) -> Result<V, ()> {
    let m = mask(w);
    let smin = -(1i64 << (w - 1));
    let smax = (1i64 << (w - 1)) - 1;
    let is_signed_div = matches!(op, "sdiv" | "srem");
    if matches!(op, "udiv" | "sdiv" | "urem" | "srem") {
        match b {
            None | Some(0) => return Err(()),
            Some(d) if is_signed_div && d == m => match a {
                None => return Err(()),
                Some(x) if signed(x, w) == smin => return Err(()),
                _ => {}
            },
            _ => {}
        }
    }
    let (Some(a), Some(b)) = (a, b) else {
        return Ok(None);
    };
    let (sa, sb) = (signed(a, w), signed(b, w));
    let fits = |v: i64| v >= smin && v <= smax;
    let r = match op {
        "add" => {
            if (nuw && a + b > m) || (nsw && !fits(sa + sb)) {
                return Ok(None);
            }
            (a + b) & m
        }
        "sub" => {
            if (nuw && a < b) || (nsw && !fits(sa - sb)) {
                return Ok(None);
            }
            a.wrapping_sub(b) & m
        }
        "mul" => {
            if (nuw && a * b > m) || (nsw && !fits(sa * sb)) {
                return Ok(None);
            }
            (a * b) & m
        }
        "udiv" => {
            if exact && a % b != 0 {
                return Ok(None);
            }
            a / b
        }
        "urem" => a % b,
        "sdiv" => {
            if exact && sa % sb != 0 {
                return Ok(None);
            }
            (sa / sb) as u64 & m
        }
        "srem" => (sa % sb) as u64 & m,
        "shl" => {
            if b >= w as u64 {
                return Ok(None);
            }
            let r = (a << b) & m;
            if (nuw && r >> b != a) || (nsw && signed(r, w) >> b != sa) {
                return Ok(None);
            }
            r
        }
        "lshr" | "ashr" => {
            if b >= w as u64 || (exact && a & ((1 << b) - 1) != 0) {
                return Ok(None);
            }
            if op == "lshr" {
                a >> b
            } else {
                (sa >> b) as u64 & m
            }
        }
        "and" => a & b,
        "or" => a | b,
        "xor" => a ^ b,
        other => panic!("unknown binop {other}"),
    };
    Ok(Some(r))
}

fn cmp(pred: &str, w: u32, a: u64, b: u64) -> bool {
    let (sa, sb) = (signed(a, w), signed(b, w));
    match pred {
        "eq" => a == b,
        "ne" => a != b,
        "ult" => a < b,
        "ule" => a <= b,
        "ugt" => a > b,
        "uge" => a >= b,
        "slt" => sa < sb,
        "sle" => sa <= sb,
        "sgt" => sa > sb,
        "sge" => sa >= sb,
        other => panic!("unknown predicate {other}"),
    }
}

/// Every behavior of `f` on one input, found by carrying the set of all
/// reachable states through the body. Each undef operand fans out to every
/// value of its type.
pub fn behaviors(f: &Func, args: &[Arg], cell: u64) -> BTreeSet<Beh> {
    let n = f.params.len();
    let ptr_valid = args.contains(&Arg::Ptr { valid: true });
    let mut env0: Vec<V> = vec![None; n + f.body.len()];
    for (k, a) in args.iter().enumerate() {
        env0[k] = match a {
            Arg::Int(v) => Some(*v),
            Arg::Ptr { .. } => None,
        };
    }
    let mut states: Vec<(Vec<V>, V)> = vec![(env0, Some(cell))];
    let mut out = BTreeSet::new();
    for (i, ins) in f.body.iter().enumerate() {
        let dst = n + i;
        let mut next = Vec::new();
        for (env, cell) in states {
            let mut put = |v: V, c: V| {
                let mut e = env.clone();
                e[dst] = v;
                next.push((e, c));
            };
            match ins {
                Ins::Bin {
                    op,
                    nuw,
                    nsw,
                    exact,
                    w,
                    a,
                    b,
                } => {
                    for x in values(*a, *w, &env) {
                        for y in values(*b, *w, &env) {
                            match bin(op, *nuw, *nsw, *exact, *w, x, y) {
                                Ok(v) => put(v, cell),
                                Err(()) => {
                                    out.insert(Beh::Ub);
                                }
                            }
                        }
                    }
                }
                Ins::Cmp { pred, w, a, b } => {
                    for x in values(*a, *w, &env) {
                        for y in values(*b, *w, &env) {
                            put(x.zip(y).map(|(x, y)| cmp(pred, *w, x, y) as u64), cell);
                        }
                    }
                }
                Ins::Sel { w, c, t, e } => {
                    for cv in values(*c, 1, &env) {
                        match cv {
                            None => put(None, cell),
                            Some(1) => values(*t, *w, &env).for_each(|v| put(v, cell)),
                            Some(_) => values(*e, *w, &env).for_each(|v| put(v, cell)),
                        }
                    }
                }
                Ins::Cast { op, from, to, v } => {
                    for x in values(*v, *from, &env) {
                        let r = x.map(|x| match *op {
                            "zext" => x,
                            "sext" => signed(x, *from) as u64 & mask(*to),
                            _ => x & mask(*to),
                        });
                        put(r, cell);
                    }
                }
                Ins::Load => {
                    if ptr_valid {
                        put(cell, cell);
                    } else {
                        out.insert(Beh::Ub);
                    }
                }
                Ins::Store(v) => {
                    for x in values(*v, 8, &env) {
                        if ptr_valid {
                            put(None, x);
                        } else {
                            out.insert(Beh::Ub);
                        }
                    }
                }
            }
        }
        if next.len() > 1 {
            next.sort_unstable();
            next.dedup();
        }
        states = next;
    }
    for (env, cell) in states {
        for v in values(f.ret.1, f.ret.0, &env) {
            out.insert(Beh::Ret { value: v, cell });
        }
    }
    out
}

fn refines(t: V, s: V) -> bool {
    s.is_none() || s == t
}

/// Reasons the target behaviors are not permitted by the source ones;
/// empty when refinement holds.
pub fn refinement_reasons(src: &BTreeSet<Beh>, tgt: &BTreeSet<Beh>) -> ReasonSet {
    let mut reasons = ReasonSet::new();
    if src.contains(&Beh::Ub) {
        return reasons;
    }
    for t in tgt {
        match *t {
            Beh::Ub => {
                reasons.insert(UnsoundReason::NewUB);
            }
            Beh::Ret { value, cell } => {
                let rets = src.iter().filter_map(|s| match *s {
                    Beh::Ret {
                        value: sv,
                        cell: sc,
                    } => Some((sv, sc)),
                    Beh::Ub => None,
                });
                let mut value_ok = false;
                let mut full = false;
                for (sv, sc) in rets {
                    if refines(value, sv) {
                        value_ok = true;
                        full |= refines(cell, sc);
                    }
                }
                if !value_ok {
                    reasons.insert(UnsoundReason::ReturnValue);
                } else if !full {
                    reasons.insert(UnsoundReason::Memory);
                }
            }
        }
    }
    reasons
}

/// Every input of `f`: each integer parameter over its full range, each
/// pointer valid or null, and the pointed-to cell over its full range when
/// the pointer is valid.
pub fn all_inputs(f: &Func) -> Vec<(Vec<Arg>, u64)> {
    let mut inputs: Vec<(Vec<Arg>, u64)> = vec![(Vec::new(), 0)];
    for p in &f.params {
        let choices: Vec<Arg> = match p {
            Param::Int(w) => (0..=mask(*w)).map(Arg::Int).collect(),
            Param::Ptr => vec![Arg::Ptr { valid: true }, Arg::Ptr { valid: false }],
        };
        inputs = inputs
            .into_iter()
            .flat_map(|(a, c)| {
                choices.iter().map(move |x| {
                    let mut a = a.clone();
                    a.push(*x);
                    (a, c)
                })
            })
            .collect();
    }
    if f.ptr_param().is_some() {
        inputs = inputs
            .into_iter()
            .flat_map(|(a, _)| {
                // Behind a null pointer the cell is unreachable.
                let cells = if a.contains(&Arg::Ptr { valid: false }) {
                    0..=0
                } else {
                    0..=255u64
                };
                cells.map(move |c| (a.clone(), c))
            })
            .collect();
    }
    inputs
}

/// Reasons at one input.
pub fn reasons_at(src: &Func, tgt: &Func, args: &[Arg], cell: u64) -> ReasonSet {
    refinement_reasons(&behaviors(src, args, cell), &behaviors(tgt, args, cell))
}

/// Brute-force verdict: `None` when sound, else the reasons at the first
/// failing input found.
pub fn reference_verdict(src: &Func, tgt: &Func) -> Option<ReasonSet> {
    use rayon::prelude::*;
    all_inputs(src).par_iter().find_map_any(|(args, cell)| {
        let r = reasons_at(src, tgt, args, *cell);
        (!r.is_empty()).then_some(r)
    })
}

/// The reference view of a checker counterexample.
pub fn reference_input(ce: &CounterExample) -> (Vec<Arg>, u64) {
    let args = ce
        .args
        .iter()
        .map(|a| match a {
            RuntimeValue::Int { value, .. } => Arg::Int(*value),
            RuntimeValue::Ptr { .. } => Arg::Ptr { valid: true },
            RuntimeValue::Null => Arg::Ptr { valid: false },
            other => panic!("counterexample argument {other} is not a defined input"),
        })
        .collect();
    let cell = ce
        .mem0
        .blocks
        .first()
        .and_then(|b| b.cells.first())
        .and_then(RuntimeValue::as_int)
        .unwrap_or(0);
    (args, cell)
}

// ---------------------------------------------------------------------------
// Generator.

pub struct GenPair {
    pub id: String,
    pub src: Func,
    pub tgt: Func,
}

impl GenPair {
    pub fn pair(&self) -> TransformationPair {
        pair(&self.id, &self.src.print("g"), &self.tgt.print("g"))
    }
}

/// Summed input and undef bits allowed per function, keeping each
/// exhaustive check small.
pub const GEN_BIT_CAP: u32 = 18;

const SHAPES: [&[Param]; 5] = [
    &[Param::Int(8)],
    &[Param::Int(8), Param::Int(1)],
    &[Param::Int(8), Param::Int(8)],
    &[Param::Int(8), Param::Ptr],
    &[Param::Int(8), Param::Int(1), Param::Ptr],
];

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    undef_left: u32,
    sites_left: u32,
}

impl Gen<'_> {
    fn constant(&mut self, w: u32) -> Opnd {
        if w == 1 {
            return Opnd::Const(self.rng.gen_range(0..2));
        }
        let pool = [0u64, 1, 2, 3, 7, 8, 127, 128, 255];
        if self.rng.gen_bool(0.8) {
            Opnd::Const(*pool.choose(self.rng).unwrap())
        } else {
            Opnd::Const(self.rng.gen_range(0..256))
        }
    }

    fn special(&mut self, w: u32) -> Option<Opnd> {
        if self.rng.gen_bool(0.5) && self.sites_left > 0 && self.undef_left >= w {
            self.sites_left -= 1;
            self.undef_left -= w;
            Some(Opnd::Undef)
        } else if self.rng.gen_bool(0.5) {
            Some(Opnd::Poison)
        } else {
            None
        }
    }

    fn operand(&mut self, w: u32, slots: &[Option<u32>]) -> Opnd {
        let regs: Vec<usize> = (0..slots.len()).filter(|&s| slots[s] == Some(w)).collect();
        let roll: f64 = self.rng.gen();
        if roll < 0.08 {
            if let Some(o) = self.special(w) {
                return o;
            }
        }
        if roll < 0.72 && !regs.is_empty() {
            // Favor recent values so most of the body is live.
            let k = regs.len() - 1 - self.rng.gen_range(0..regs.len().min(3));
            return Opnd::Reg(regs[k]);
        }
        self.constant(w)
    }
}

fn gen_func(rng: &mut ChaCha8Rng, params: &[Param]) -> Func {
    let entropy: u32 = params
        .iter()
        .map(|p| match p {
            Param::Int(w) => *w,
            Param::Ptr => 9,
        })
        .sum();
    let has_ptr = params.contains(&Param::Ptr);
    let mut g = Gen {
        undef_left: (GEN_BIT_CAP - entropy).min(16),
        sites_left: 2,
        rng,
    };
    let mut slots: Vec<Option<u32>> = params
        .iter()
        .map(|p| match p {
            Param::Int(w) => Some(*w),
            Param::Ptr => None,
        })
        .collect();
    let len = g.rng.gen_range(2..=5);
    let mut body = Vec::new();
    for _ in 0..len {
        let roll: f64 = g.rng.gen();
        let has_i1 = slots.contains(&Some(1));
        let ins = if has_ptr && roll < 0.08 {
            Ins::Load
        } else if has_ptr && roll < 0.2 {
            Ins::Store(g.operand(8, &slots))
        } else if roll < 0.62 {
            let op = *BINOPS.choose(g.rng).unwrap();
            let w = if g.rng.gen_bool(0.1) { 1 } else { 8 };
            let (mut nuw, mut nsw, mut exact) = (false, false, false);
            if wraps(op) {
                nuw = g.rng.gen_bool(0.25);
                nsw = g.rng.gen_bool(0.25);
            }
            if exacts(op) {
                exact = g.rng.gen_bool(0.25);
            }
            let a = g.operand(w, &slots);
            let b = if matches!(op, "shl" | "lshr" | "ashr") && g.rng.gen_bool(0.6) {
                Opnd::Const(g.rng.gen_range(0..10) & mask(w))
            } else {
                g.operand(w, &slots)
            };
            Ins::Bin {
                op,
                nuw,
                nsw,
                exact,
                w,
                a,
                b,
            }
        } else if roll < 0.76 {
            let pred = *PREDS.choose(g.rng).unwrap();
            Ins::Cmp {
                pred,
                w: 8,
                a: g.operand(8, &slots),
                b: g.operand(8, &slots),
            }
        } else if roll < 0.9 && has_i1 {
            Ins::Sel {
                w: 8,
                c: g.operand(1, &slots),
                t: g.operand(8, &slots),
                e: g.operand(8, &slots),
            }
        } else if has_i1 && g.rng.gen_bool(0.6) {
            let op = if g.rng.gen_bool(0.5) { "zext" } else { "sext" };
            Ins::Cast {
                op,
                from: 1,
                to: 8,
                v: g.operand(1, &slots),
            }
        } else {
            Ins::Cast {
                op: "trunc",
                from: 8,
                to: 1,
                v: g.operand(8, &slots),
            }
        };
        slots.push(match &ins {
            Ins::Bin { w, .. } => Some(*w),
            Ins::Cmp { .. } => Some(1),
            Ins::Sel { w, .. } => Some(*w),
            Ins::Cast { to, .. } => Some(*to),
            Ins::Load => Some(8),
            Ins::Store(_) => None,
        });
        body.push(ins);
    }
    let last8 = (0..slots.len())
        .rev()
        .find(|&s| slots[s] == Some(8))
        .expect("first parameter is i8");
    Func {
        params: params.to_vec(),
        body,
        ret: (8, Opnd::Reg(last8)),
    }
}

fn operand_mut(ins: &mut Ins) -> Vec<(&mut Opnd, u32)> {
    match ins {
        Ins::Bin { w, a, b, .. } | Ins::Cmp { w, a, b, .. } => vec![(a, *w), (b, *w)],
        Ins::Sel { w, c, t, e } => vec![(c, 1), (t, *w), (e, *w)],
        Ins::Cast { from, v, .. } => vec![(v, *from)],
        Ins::Load => vec![],
        Ins::Store(v) => vec![(v, 8)],
    }
}

fn slot_widths(f: &Func) -> Vec<Option<u32>> {
    let mut slots: Vec<Option<u32>> = f
        .params
        .iter()
        .map(|p| match p {
            Param::Int(w) => Some(*w),
            Param::Ptr => None,
        })
        .collect();
    for ins in &f.body {
        slots.push(match ins {
            Ins::Bin { w, .. } | Ins::Sel { w, .. } => Some(*w),
            Ins::Cmp { .. } => Some(1),
            Ins::Cast { to, .. } => Some(*to),
            Ins::Load => Some(8),
            Ins::Store(_) => None,
        });
    }
    slots
}

/// Body indices whose result reaches the return value, or that may have an
/// effect of their own (stores, loads, division).
fn relevant(f: &Func) -> Vec<usize> {
    let n = f.params.len();
    let mut live = vec![false; f.body.len()];
    let mark = |o: Opnd, live: &mut Vec<bool>| {
        if let Opnd::Reg(s) = o {
            if s >= n {
                live[s - n] = true;
            }
        }
    };
    mark(f.ret.1, &mut live);
    for i in (0..f.body.len()).rev() {
        let effect = match &f.body[i] {
            Ins::Store(_) | Ins::Load => true,
            Ins::Bin { op, .. } => matches!(*op, "udiv" | "sdiv" | "urem" | "srem"),
            _ => false,
        };
        if effect {
            live[i] = true;
        }
        if live[i] {
            let mut ins = f.body[i].clone();
            for (o, _) in operand_mut(&mut ins) {
                mark(*o, &mut live);
            }
        }
    }
    (0..f.body.len()).filter(|&i| live[i]).collect()
}

/// One local edit of `src`; may or may not preserve its meaning.
fn mutate(rng: &mut ChaCha8Rng, src: &Func) -> Func {
    let cap = GEN_BIT_CAP - src.entropy_bits();
    let targets = relevant(src);
    loop {
        let mut f = src.clone();
        let n = f.params.len();
        let i = if targets.is_empty() || rng.gen_bool(0.1) {
            rng.gen_range(0..f.body.len())
        } else {
            *targets.choose(rng).unwrap()
        };
        let slots = slot_widths(&f);
        let changed = match rng.gen_range(0..12) {
            0 if rng.gen_bool(0.2) => return f,
            0 => false,
            1 | 10 | 11 => match &mut f.body[i] {
                Ins::Bin {
                    op,
                    nuw,
                    nsw,
                    exact,
                    ..
                } if wraps(op) || exacts(op) => {
                    if wraps(op) && rng.gen_bool(0.5) {
                        *nsw = !*nsw;
                    } else if wraps(op) {
                        *nuw = !*nuw;
                    } else {
                        *exact = !*exact;
                    }
                    true
                }
                _ => false,
            },
            2 => match &mut f.body[i] {
                Ins::Bin {
                    op,
                    nuw,
                    nsw,
                    exact,
                    ..
                } => {
                    *op = BINOPS.choose(rng).unwrap();
                    *nuw &= wraps(op);
                    *nsw &= wraps(op);
                    *exact &= exacts(op);
                    true
                }
                Ins::Cmp { pred, .. } => {
                    *pred = PREDS.choose(rng).unwrap();
                    true
                }
                _ => false,
            },
            3 => match &mut f.body[i] {
                Ins::Bin { a, b, .. } | Ins::Cmp { a, b, .. } => {
                    std::mem::swap(a, b);
                    true
                }
                Ins::Sel { t, e, .. } => {
                    std::mem::swap(t, e);
                    true
                }
                _ => false,
            },
            4 | 5 => {
                let mut ops = operand_mut(&mut f.body[i]);
                if ops.is_empty() {
                    false
                } else {
                    let k = rng.gen_range(0..ops.len());
                    let (o, w) = &mut ops[k];
                    let regs: Vec<usize> = (0..n + i).filter(|&s| slots[s] == Some(*w)).collect();
                    **o = match rng.gen_range(0..4) {
                        0 if !regs.is_empty() => Opnd::Reg(*regs.choose(rng).unwrap()),
                        1 => Opnd::Poison,
                        2 => Opnd::Undef,
                        _ => {
                            let pool = [0u64, 1, 2, 7, 8, 127, 128, 255];
                            Opnd::Const(*pool.choose(rng).unwrap() & mask(*w))
                        }
                    };
                    true
                }
            }
            6 => {
                let regs: Vec<usize> = (0..slots.len()).filter(|&s| slots[s] == Some(8)).collect();
                f.ret.1 = Opnd::Reg(*regs.choose(rng).unwrap());
                true
            }
            7 => match &mut f.body[i] {
                Ins::Bin { b, w, .. } | Ins::Cmp { b, w, .. } => {
                    if let Opnd::Const(c) = b {
                        *c = (*c + 1) & mask(*w);
                        true
                    } else {
                        false
                    }
                }
                _ => false,
            },
            8 => match f.body[i] {
                Ins::Bin { op, w, a, b, .. } if op == "mul" && b == Opnd::Const(2) => {
                    f.body[i] = Ins::Bin {
                        op: "shl",
                        nuw: false,
                        nsw: false,
                        exact: false,
                        w,
                        a,
                        b: Opnd::Const(1),
                    };
                    true
                }
                Ins::Bin { op, nuw, nsw, .. } if wraps(op) && (nuw || nsw) => {
                    // Dropping flags only removes poison.
                    if let Ins::Bin { nuw, nsw, .. } = &mut f.body[i] {
                        *nuw = false;
                        *nsw = false;
                    }
                    true
                }
                _ => false,
            },
            _ => match &mut f.body[i] {
                Ins::Bin { op, .. } if matches!(*op, "add" | "mul" | "and" | "or" | "xor") => {
                    if let Ins::Bin { a, b, .. } = &mut f.body[i] {
                        std::mem::swap(a, b);
                    }
                    true
                }
                _ => false,
            },
        };
        let (sites, bits) = f.undef_sites();
        if changed && f != *src && sites <= 2 && bits <= cap.min(16) {
            return f;
        }
    }
}

/// `n` pairs, each a generated source and a one-edit target, with input
/// plus undef entropy at most [`GEN_BIT_CAP`] bits per function.
pub fn generate_pairs(seed: u64, n: usize) -> Vec<GenPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let shape = SHAPES[rng.gen_range(0..SHAPES.len())];
            let src = gen_func(&mut rng, shape);
            let tgt = mutate(&mut rng, &src);
            GenPair {
                id: format!("gen{k:03}"),
                src,
                tgt,
            }
        })
        .collect()
}

fn bin_ins(op: &'static str, flags: (bool, bool, bool), a: Opnd, b: Opnd) -> Ins {
    Ins::Bin {
        op,
        nuw: flags.0,
        nsw: flags.1,
        exact: flags.2,
        w: 8,
        a,
        b,
    }
}

fn one(params: &[Param], body: Vec<Ins>) -> Func {
    let ret = (8, Opnd::Reg(params.len() + body.len() - 1));
    Func {
        params: params.to_vec(),
        body,
        ret,
    }
}

/// A fixed sweep touching every operation, flag, predicate and cast: each
/// flag added and removed, operands swapped, predicates swapped and
/// negated, and undef or poison fed to each operand position.
pub fn directed_pairs() -> Vec<GenPair> {
    const XY: [Param; 2] = [Param::Int(8), Param::Int(8)];
    const XC: [Param; 2] = [Param::Int(8), Param::Int(1)];
    let (x, y) = (Opnd::Reg(0), Opnd::Reg(1));
    let mut out: Vec<(Func, Func)> = Vec::new();
    let plain = (false, false, false);
    for op in BINOPS {
        let mut variants = vec![plain];
        if wraps(op) {
            variants.extend([
                (true, false, false),
                (false, true, false),
                (true, true, false),
            ]);
        }
        if exacts(op) {
            variants.push((false, false, true));
        }
        for &v in &variants[1..] {
            let base = one(&XY, vec![bin_ins(op, plain, x, y)]);
            let flagged = one(&XY, vec![bin_ins(op, v, x, y)]);
            out.push((base.clone(), flagged.clone()));
            out.push((flagged, base));
        }
        out.push((
            one(&XY, vec![bin_ins(op, plain, x, y)]),
            one(&XY, vec![bin_ins(op, plain, y, x)]),
        ));
        // One parameter keeps undef enumeration small.
        const X: [Param; 1] = [Param::Int(8)];
        for special in [Opnd::Undef, Opnd::Poison] {
            let xx = one(&X, vec![bin_ins(op, plain, x, x)]);
            out.push((one(&X, vec![bin_ins(op, plain, x, special)]), xx.clone()));
            out.push((one(&X, vec![bin_ins(op, plain, special, x)]), xx.clone()));
            out.push((xx.clone(), one(&X, vec![bin_ins(op, plain, special, x)])));
            out.push((xx, one(&X, vec![bin_ins(op, plain, x, special)])));
        }
    }
    let cmp_sel = |pred: &'static str, a: Opnd, b: Opnd| {
        one(
            &XY,
            vec![
                Ins::Cmp { pred, w: 8, a, b },
                Ins::Sel {
                    w: 8,
                    c: Opnd::Reg(2),
                    t: Opnd::Const(1),
                    e: Opnd::Const(2),
                },
            ],
        )
    };
    for (k, pred) in PREDS.iter().enumerate() {
        let swapped = match *pred {
            "ult" => "ugt",
            "ugt" => "ult",
            "ule" => "uge",
            "uge" => "ule",
            "slt" => "sgt",
            "sgt" => "slt",
            "sle" => "sge",
            "sge" => "sle",
            p => p,
        };
        out.push((cmp_sel(pred, x, y), cmp_sel(swapped, y, x)));
        out.push((
            cmp_sel(pred, x, y),
            cmp_sel(PREDS[(k + 1) % PREDS.len()], x, y),
        ));
    }
    for (op, from, to, param) in [("zext", 1, 8, 1), ("sext", 1, 8, 1), ("trunc", 8, 1, 0)] {
        let cast = |op| Ins::Cast {
            op,
            from,
            to,
            v: Opnd::Reg(param),
        };
        let widen = |ins: Ins| -> Vec<Ins> {
            if to == 1 {
                vec![
                    ins,
                    Ins::Sel {
                        w: 8,
                        c: Opnd::Reg(2),
                        t: Opnd::Const(5),
                        e: Opnd::Reg(0),
                    },
                ]
            } else {
                vec![ins]
            }
        };
        let other = if op == "zext" { "sext" } else { "zext" };
        if to == 8 {
            out.push((one(&XC, widen(cast(op))), one(&XC, widen(cast(other)))));
        }
        let and1 = bin_ins("and", plain, Opnd::Reg(0), Opnd::Const(1));
        out.push((
            one(&XC, widen(cast(op))),
            one(
                &XC,
                if to == 1 {
                    vec![
                        and1,
                        Ins::Cmp {
                            pred: "ne",
                            w: 8,
                            a: Opnd::Reg(2),
                            b: Opnd::Const(0),
                        },
                        Ins::Sel {
                            w: 8,
                            c: Opnd::Reg(3),
                            t: Opnd::Const(5),
                            e: Opnd::Reg(0),
                        },
                    ]
                } else {
                    widen(cast(op))
                },
            ),
        ));
    }
    let sel = |c: Opnd, t: Opnd, e: Opnd| one(&XC, vec![Ins::Sel { w: 8, c, t, e }]);
    let c = Opnd::Reg(1);
    out.push((sel(c, Opnd::Undef, x), sel(c, Opnd::Const(3), x)));
    out.push((sel(c, Opnd::Const(3), x), sel(c, Opnd::Undef, x)));
    out.push((sel(c, Opnd::Poison, x), sel(c, Opnd::Const(3), x)));
    out.push((sel(c, Opnd::Const(3), x), sel(c, Opnd::Poison, x)));
    out.push((
        sel(Opnd::Undef, Opnd::Const(3), x),
        sel(c, Opnd::Const(3), x),
    ));
    out.push((
        sel(Opnd::Poison, Opnd::Const(3), x),
        sel(c, Opnd::Const(3), x),
    ));
    out.push((
        sel(c, Opnd::Const(3), x),
        sel(Opnd::Poison, Opnd::Const(3), x),
    ));
    let p = [Param::Ptr];
    let store_load = |v: Opnd| Func {
        params: p.to_vec(),
        body: vec![Ins::Store(v), Ins::Load],
        ret: (8, Opnd::Reg(2)),
    };
    let load = one(&p, vec![Ins::Load]);
    let seven = Opnd::Const(7);
    out.push((store_load(Opnd::Undef), store_load(seven)));
    out.push((store_load(seven), store_load(Opnd::Undef)));
    out.push((store_load(Opnd::Poison), store_load(seven)));
    out.push((store_load(seven), store_load(Opnd::Poison)));
    out.push((load.clone(), store_load(seven)));
    out.push((store_load(seven), load));
    out.into_iter()
        .enumerate()
        .map(|(k, (src, tgt))| GenPair {
            id: format!("dir{k:03}"),
            src,
            tgt,
        })
        .collect()
}

/// The checker's per-input refinement, for comparison with
/// [`reasons_at`] on every input.
pub struct EngineView {
    src: transval::semantics::Program,
    tgt: transval::semantics::Program,
    layout: transval::semantics::MemoryLayout,
    widths: Vec<Option<u32>>,
}

impl EngineView {
    pub fn new(pair: &TransformationPair) -> EngineView {
        use transval::semantics::{MemoryLayout, Program};
        EngineView {
            src: Program::lower(&pair.src).expect("source lowers"),
            tgt: Program::lower(&pair.tgt).expect("target lowers"),
            layout: MemoryLayout::for_pair(pair, 1),
            widths: pair.src.params.iter().map(|p| p.ty.width()).collect(),
        }
    }

    /// `None` when the source's undef choices were not fully enumerated.
    pub fn reasons_at(
        &self,
        args: &[Arg],
        cell: u64,
        fuel: u64,
        undef_budget: u32,
    ) -> Option<ReasonSet> {
        use transval::checker::classify_failure;
        use transval::semantics::{outcome_refines, outcome_set, UndefBudget};
        let values: Vec<RuntimeValue> = args
            .iter()
            .zip(&self.widths)
            .enumerate()
            .map(|(i, (a, w))| match a {
                Arg::Int(v) => RuntimeValue::int(w.expect("integer parameter"), *v),
                Arg::Ptr { valid: true } => self.layout.pointer_to(i),
                Arg::Ptr { valid: false } => RuntimeValue::Null,
            })
            .collect();
        let cells = vec![RuntimeValue::int(8, cell); self.layout.total_cells()];
        let mem0 = self.layout.build(&cells);
        let budget = UndefBudget::occurrences(undef_budget);
        let s = outcome_set(&self.src, &values, &mem0, fuel, budget);
        let t = outcome_set(&self.tgt, &values, &mem0, fuel, budget);
        if !s.exhaustive {
            return None;
        }
        let r = outcome_refines(&t, &s);
        Some(if r.fails() {
            classify_failure(&r)
        } else {
            ReasonSet::new()
        })
    }
}

/// Reference verdict for `g` (`None` when sound, else the reasons at some
/// failing input) and the inputs, up to `limit`, on which the checker's
/// per-input refinement result differs from the reference.
pub fn compare_per_input(
    g: &GenPair,
    fuel: u64,
    undef_budget: u32,
    limit: usize,
) -> (Option<ReasonSet>, Vec<String>) {
    use rayon::prelude::*;
    let view = EngineView::new(&g.pair());
    let results: Vec<(ReasonSet, Option<String>)> = all_inputs(&g.src)
        .par_iter()
        .map(|(args, cell)| {
            let engine = view.reasons_at(args, *cell, fuel, undef_budget);
            let reference = reasons_at(&g.src, &g.tgt, args, *cell);
            let bad = (engine.as_ref() != Some(&reference)).then(|| {
                format!("{args:?} cell {cell}: checker {engine:?}, reference {reference:?}")
            });
            (reference, bad)
        })
        .collect();
    let verdict = results
        .iter()
        .find(|(r, _)| !r.is_empty())
        .map(|(r, _)| r.clone());
    let bad = results
        .into_iter()
        .filter_map(|(_, b)| b)
        .take(limit)
        .collect();
    (verdict, bad)
}
