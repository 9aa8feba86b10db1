use std::collections::HashMap;

use thiserror::Error;

use super::{ExecOutcome, InstLoc, MemBlock, MemoryState, RuntimeValue, UbKind};
use crate::ir::{
    mask, validate_ssa, BinOp, Branch, CastOp, Diagnostic, Flags, Function, IcmpPred, InstKind,
    Operand, Type,
};

/// Supplies a concrete bit pattern for each dynamic use of an undef value.
pub trait UndefChoice {
    fn choose(&mut self, width: u32) -> u64;
}

/// Resolves every undef to zero.
pub struct ZeroChoice;

impl UndefChoice for ZeroChoice {
    fn choose(&mut self, _width: u32) -> u64 {
        0
    }
}

/// Replays a fixed sequence of choices, then zeros.
#[derive(Debug, Clone, Default)]
pub struct FixedChoices {
    values: Vec<u64>,
    next: usize,
}

impl FixedChoices {
    pub fn new(values: Vec<u64>) -> Self {
        FixedChoices { values, next: 0 }
    }
}

impl UndefChoice for FixedChoices {
    fn choose(&mut self, width: u32) -> u64 {
        let v = self.values.get(self.next).copied().unwrap_or(0);
        self.next += 1;
        v & mask(width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("function `{name}` is not well formed: {} problem(s)", diagnostics.len())]
    Invalid {
        name: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("function `{name}` calls external function `@{callee}`, which cannot be executed")]
    ExternalCall { name: String, callee: String },
}

#[derive(Debug, Clone, Copy)]
enum Val {
    Slot(u32),
    Known(RuntimeValue),
    Undef(Type),
}

#[derive(Debug, Clone)]
enum Op {
    Bin {
        dst: u32,
        op: BinOp,
        flags: Flags,
        width: u32,
        lhs: Val,
        rhs: Val,
    },
    Cmp {
        dst: u32,
        pred: IcmpPred,
        width: u32,
        lhs: Val,
        rhs: Val,
    },
    Select {
        dst: u32,
        cond: Val,
        then_val: Val,
        else_val: Val,
    },
    Cast {
        dst: u32,
        op: CastOp,
        from: u32,
        to: u32,
        value: Val,
    },
    Alloca {
        dst: u32,
        ty: Type,
        count: u32,
    },
    Load {
        dst: u32,
        ty: Type,
        ptr: Val,
    },
    Store {
        ty: Type,
        value: Val,
        ptr: Val,
    },
}

#[derive(Debug, Clone)]
enum Term {
    Jump(u32),
    CondJump { cond: Val, then_b: u32, else_b: u32 },
    Ret(Option<Val>),
}

#[derive(Debug, Clone)]
struct Phi {
    dst: u32,
    incomings: Vec<(u32, Val)>,
}

#[derive(Debug, Clone)]
struct LBlock {
    phis: Vec<Phi>,
    ops: Vec<Op>,
    term: Term,
}

/// A validated function lowered to slot-indexed form for fast execution.
#[derive(Debug, Clone)]
pub struct Program {
    name: String,
    params: Vec<Type>,
    ret: Option<Type>,
    blocks: Vec<LBlock>,
    slots: usize,
}

impl Program {
    pub fn lower(f: &Function) -> Result<Program, LowerError> {
        let diagnostics = validate_ssa(f);
        if !diagnostics.is_empty() {
            return Err(LowerError::Invalid {
                name: f.name.clone(),
                diagnostics,
            });
        }
        if let Some(callee) = f.instructions().find_map(|i| match &i.kind {
            InstKind::CallExternal { name, .. } => Some(name.clone()),
            _ => None,
        }) {
            return Err(LowerError::ExternalCall {
                name: f.name.clone(),
                callee,
            });
        }

        let mut slots: HashMap<&str, u32> = HashMap::new();
        for p in &f.params {
            let n = slots.len() as u32;
            slots.insert(&p.name, n);
        }
        for inst in f.instructions() {
            if let Some(r) = &inst.result {
                let n = slots.len() as u32;
                slots.insert(r, n);
            }
        }
        let block_ids: HashMap<&str, u32> = f
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i as u32))
            .collect();
        let val = |o: &Operand| match o {
            Operand::Reg(r) => Val::Slot(slots[r.as_str()]),
            Operand::Const { ty, bits } => {
                Val::Known(RuntimeValue::int(ty.width().unwrap_or(64), *bits))
            }
            Operand::Undef(t) => Val::Undef(*t),
            Operand::Poison(_) => Val::Known(RuntimeValue::Poison),
            Operand::Null => Val::Known(RuntimeValue::Null),
        };
        let dst = |r: &Option<String>| {
            slots[r
                .as_deref()
                .expect("validated: value instructions are named")]
        };
        let width = |t: &Type| t.width().expect("validated: integer type");

        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let mut phis = Vec::new();
            let mut ops = Vec::new();
            let mut term = None;
            for inst in &b.insts {
                match &inst.kind {
                    InstKind::Phi { incomings, .. } => phis.push(Phi {
                        dst: dst(&inst.result),
                        incomings: incomings
                            .iter()
                            .map(|(l, v)| (block_ids[l.as_str()], val(v)))
                            .collect(),
                    }),
                    InstKind::BinOp {
                        op,
                        flags,
                        ty,
                        lhs,
                        rhs,
                    } => ops.push(Op::Bin {
                        dst: dst(&inst.result),
                        op: *op,
                        flags: *flags,
                        width: width(ty),
                        lhs: val(lhs),
                        rhs: val(rhs),
                    }),
                    InstKind::ICmp { pred, ty, lhs, rhs } => ops.push(Op::Cmp {
                        dst: dst(&inst.result),
                        pred: *pred,
                        width: width(ty),
                        lhs: val(lhs),
                        rhs: val(rhs),
                    }),
                    InstKind::Select {
                        cond,
                        then_val,
                        else_val,
                        ..
                    } => ops.push(Op::Select {
                        dst: dst(&inst.result),
                        cond: val(cond),
                        then_val: val(then_val),
                        else_val: val(else_val),
                    }),
                    InstKind::Cast {
                        op,
                        from,
                        value,
                        to,
                    } => ops.push(Op::Cast {
                        dst: dst(&inst.result),
                        op: *op,
                        from: width(from),
                        to: width(to),
                        value: val(value),
                    }),
                    InstKind::Alloca { ty, count } => ops.push(Op::Alloca {
                        dst: dst(&inst.result),
                        ty: *ty,
                        count: *count,
                    }),
                    InstKind::Load { ty, ptr } => ops.push(Op::Load {
                        dst: dst(&inst.result),
                        ty: *ty,
                        ptr: val(ptr),
                    }),
                    InstKind::Store { ty, value, ptr } => ops.push(Op::Store {
                        ty: *ty,
                        value: val(value),
                        ptr: val(ptr),
                    }),
                    InstKind::Br(Branch::Uncond(l)) => {
                        term = Some(Term::Jump(block_ids[l.as_str()]))
                    }
                    InstKind::Br(Branch::Cond {
                        cond,
                        then_label,
                        else_label,
                    }) => {
                        term = Some(Term::CondJump {
                            cond: val(cond),
                            then_b: block_ids[then_label.as_str()],
                            else_b: block_ids[else_label.as_str()],
                        })
                    }
                    InstKind::Ret(v) => term = Some(Term::Ret(v.as_ref().map(|(_, v)| val(v)))),
                    InstKind::CallExternal { .. } => unreachable!("rejected above"),
                }
            }
            blocks.push(LBlock {
                phis,
                ops,
                term: term.expect("validated: every block has a terminator"),
            });
        }

        Ok(Program {
            name: f.name.clone(),
            params: f.params.iter().map(|p| p.ty).collect(),
            ret: f.ret,
            blocks,
            slots: slots.len(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Type] {
        &self.params
    }

    pub fn ret(&self) -> Option<Type> {
        self.ret
    }
}

/// Lowers and runs `f` once. Fails only if `f` is not executable.
pub fn execute_function(
    f: &Function,
    args: &[RuntimeValue],
    mem0: &MemoryState,
    fuel: u64,
    choice: &mut dyn UndefChoice,
) -> Result<ExecOutcome, LowerError> {
    Ok(execute(&Program::lower(f)?, args, mem0, fuel, choice))
}

/// Runs `prog` on `args` and a copy of `mem0`, resolving each dynamic undef
/// use through `choice`. Each executed instruction (phis included) costs one
/// unit of `fuel`.
///
/// Panics if `args` does not match the parameter list.
pub fn execute(
    prog: &Program,
    args: &[RuntimeValue],
    mem0: &MemoryState,
    fuel: u64,
    choice: &mut dyn UndefChoice,
) -> ExecOutcome {
    assert_eq!(
        args.len(),
        prog.params.len(),
        "argument count mismatch for `{}`",
        prog.name
    );
    let mut m = Machine {
        regs: vec![RuntimeValue::Poison; prog.slots],
        mem: mem0.clone(),
        choice,
    };
    m.regs[..args.len()].copy_from_slice(args);

    let mut steps = 0u64;
    let mut block = 0u32;
    let mut pred: Option<u32> = None;
    let mut phi_vals = Vec::new();
    loop {
        let b = &prog.blocks[block as usize];
        let loc = |i: usize| InstLoc {
            block,
            inst: i as u32,
        };

        if !b.phis.is_empty() {
            let from = pred.expect("validated: entry block has no phis");
            phi_vals.clear();
            for phi in &b.phis {
                if steps == fuel {
                    return ExecOutcome::OutOfFuel;
                }
                steps += 1;
                let v = phi
                    .incomings
                    .iter()
                    .find(|(p, _)| *p == from)
                    .map(|(_, v)| *v)
                    .expect("validated: phi covers every predecessor");
                phi_vals.push(m.eval(v));
            }
            for (phi, v) in b.phis.iter().zip(&phi_vals) {
                m.regs[phi.dst as usize] = *v;
            }
        }

        for (i, op) in b.ops.iter().enumerate() {
            if steps == fuel {
                return ExecOutcome::OutOfFuel;
            }
            steps += 1;
            if let Err(ub) = m.step(op) {
                return ExecOutcome::TriggeredUb {
                    ub,
                    at: loc(b.phis.len() + i),
                };
            }
        }

        if steps == fuel {
            return ExecOutcome::OutOfFuel;
        }
        steps += 1;
        let term_loc = loc(b.phis.len() + b.ops.len());
        match &b.term {
            Term::Jump(t) => {
                pred = Some(block);
                block = *t;
            }
            Term::CondJump {
                cond,
                then_b,
                else_b,
            } => match m.eval_raw(*cond) {
                RuntimeValue::Int { value, .. } => {
                    pred = Some(block);
                    block = if value & 1 == 1 { *then_b } else { *else_b };
                }
                _ => {
                    return ExecOutcome::TriggeredUb {
                        ub: UbKind::BranchOnPoison,
                        at: term_loc,
                    }
                }
            },
            Term::Ret(v) => {
                let value = v.map(|v| m.eval(v));
                return ExecOutcome::Returned {
                    value,
                    memory: m.mem,
                };
            }
        }
    }
}

struct Machine<'c> {
    regs: Vec<RuntimeValue>,
    mem: MemoryState,
    choice: &'c mut dyn UndefChoice,
}

impl Machine<'_> {
    /// Operand value without resolving undef.
    fn eval_raw(&self, v: Val) -> RuntimeValue {
        match v {
            Val::Slot(s) => self.regs[s as usize],
            Val::Known(k) => k,
            Val::Undef(t) => RuntimeValue::Undef(t),
        }
    }

    /// Operand value at a use site: integer undef becomes a fresh choice.
    fn eval(&mut self, v: Val) -> RuntimeValue {
        match self.eval_raw(v) {
            RuntimeValue::Undef(Type::Int(w)) => RuntimeValue::int(w, self.choice.choose(w)),
            other => other,
        }
    }

    fn cell(&mut self, ptr: RuntimeValue, ty: Type) -> Result<&mut RuntimeValue, UbKind> {
        let RuntimeValue::Ptr { block, offset } = ptr else {
            return Err(UbKind::NullDeref);
        };
        let b: &mut MemBlock = self
            .mem
            .blocks
            .get_mut(block as usize)
            .ok_or(UbKind::OutOfBounds)?;
        if b.elem != ty {
            return Err(UbKind::IllTypedAccess);
        }
        b.cells.get_mut(offset as usize).ok_or(UbKind::OutOfBounds)
    }

    fn step(&mut self, op: &Op) -> Result<(), UbKind> {
        match *op {
            Op::Bin {
                dst,
                op,
                flags,
                width,
                lhs,
                rhs,
            } => {
                let a = self.eval(lhs);
                let b = self.eval(rhs);
                let is_div = matches!(op, BinOp::UDiv | BinOp::SDiv | BinOp::URem | BinOp::SRem);
                let r = match (a, b) {
                    // A poison divisor may be zero.
                    (_, RuntimeValue::Poison) if is_div => {
                        return Err(if matches!(op, BinOp::URem | BinOp::SRem) {
                            UbKind::RemByZero
                        } else {
                            UbKind::DivByZero
                        })
                    }
                    (_, RuntimeValue::Int { value: 0, .. }) if is_div => {
                        return Err(if matches!(op, BinOp::URem | BinOp::SRem) {
                            UbKind::RemByZero
                        } else {
                            UbKind::DivByZero
                        })
                    }
                    // A poison dividend may be the signed minimum.
                    (RuntimeValue::Poison, RuntimeValue::Int { value, .. })
                        if matches!(op, BinOp::SDiv | BinOp::SRem) && value == mask(width) =>
                    {
                        return Err(UbKind::DivOverflow)
                    }
                    (RuntimeValue::Int { value: a, .. }, RuntimeValue::Int { value: b, .. }) => {
                        match binop(op, flags, width, a, b)? {
                            Some(v) => RuntimeValue::int(width, v),
                            None => RuntimeValue::Poison,
                        }
                    }
                    _ => RuntimeValue::Poison,
                };
                self.regs[dst as usize] = r;
            }
            Op::Cmp {
                dst,
                pred,
                width,
                lhs,
                rhs,
            } => {
                let r = match (self.eval(lhs), self.eval(rhs)) {
                    (RuntimeValue::Int { value: a, .. }, RuntimeValue::Int { value: b, .. }) => {
                        RuntimeValue::bool(icmp(pred, width, a, b))
                    }
                    _ => RuntimeValue::Poison,
                };
                self.regs[dst as usize] = r;
            }
            Op::Select {
                dst,
                cond,
                then_val,
                else_val,
            } => {
                let r = match self.eval(cond) {
                    RuntimeValue::Int { value, .. } => {
                        self.eval(if value & 1 == 1 { then_val } else { else_val })
                    }
                    _ => RuntimeValue::Poison,
                };
                self.regs[dst as usize] = r;
            }
            Op::Cast {
                dst,
                op,
                from,
                to,
                value,
            } => {
                let r = match self.eval(value) {
                    RuntimeValue::Int { value, .. } => RuntimeValue::int(
                        to,
                        match op {
                            CastOp::Zext | CastOp::Trunc => value,
                            CastOp::Sext => sext(value, from) as u64,
                        },
                    ),
                    _ => RuntimeValue::Poison,
                };
                self.regs[dst as usize] = r;
            }
            Op::Alloca { dst, ty, count } => {
                let id = self.mem.blocks.len() as u32;
                self.mem.blocks.push(MemBlock {
                    elem: ty,
                    origin: super::BlockOrigin::Alloca,
                    cells: vec![RuntimeValue::Undef(ty); count as usize],
                });
                self.regs[dst as usize] = RuntimeValue::Ptr {
                    block: id,
                    offset: 0,
                };
            }
            Op::Load { dst, ty, ptr } => {
                let p = self.eval_raw(ptr);
                let v = *self.cell(p, ty)?;
                self.regs[dst as usize] = v;
            }
            Op::Store { ty, value, ptr } => {
                let v = self.eval(value);
                let p = self.eval_raw(ptr);
                *self.cell(p, ty)? = v;
            }
        }
        Ok(())
    }
}

pub(crate) fn sext(v: u64, width: u32) -> i64 {
    if width >= 64 {
        v as i64
    } else {
        let sh = 64 - width;
        ((v << sh) as i64) >> sh
    }
}

fn signed_range(width: u32) -> (i128, i128) {
    (-(1i128 << (width - 1)), (1i128 << (width - 1)) - 1)
}

/// Integer semantics of one binary operation. `Ok(None)` is poison.
pub(crate) fn binop(
    op: BinOp,
    flags: Flags,
    width: u32,
    a: u64,
    b: u64,
) -> Result<Option<u64>, UbKind> {
    let m = mask(width);
    let (sa, sb) = (sext(a, width) as i128, sext(b, width) as i128);
    let (smin, smax) = signed_range(width);
    let in_signed = |v: i128| v >= smin && v <= smax;
    let r = match op {
        BinOp::Add => {
            if (flags.nuw && (a as u128 + b as u128) > m as u128)
                || (flags.nsw && !in_signed(sa + sb))
            {
                return Ok(None);
            }
            a.wrapping_add(b) & m
        }
        BinOp::Sub => {
            if (flags.nuw && a < b) || (flags.nsw && !in_signed(sa - sb)) {
                return Ok(None);
            }
            a.wrapping_sub(b) & m
        }
        BinOp::Mul => {
            if (flags.nuw && (a as u128 * b as u128) > m as u128)
                || (flags.nsw && !in_signed(sa * sb))
            {
                return Ok(None);
            }
            a.wrapping_mul(b) & m
        }
        BinOp::UDiv => {
            if b == 0 {
                return Err(UbKind::DivByZero);
            }
            if flags.exact && !a.is_multiple_of(b) {
                return Ok(None);
            }
            a / b
        }
        BinOp::URem => {
            if b == 0 {
                return Err(UbKind::RemByZero);
            }
            a % b
        }
        BinOp::SDiv | BinOp::SRem => {
            if b == 0 {
                return Err(if op == BinOp::SDiv {
                    UbKind::DivByZero
                } else {
                    UbKind::RemByZero
                });
            }
            if sa == smin && sb == -1 {
                return Err(UbKind::DivOverflow);
            }
            if op == BinOp::SDiv {
                if flags.exact && sa % sb != 0 {
                    return Ok(None);
                }
                (sa / sb) as u64 & m
            } else {
                (sa % sb) as u64 & m
            }
        }
        BinOp::Shl => {
            if b >= width as u64 {
                return Ok(None);
            }
            let r = (a << b) & m;
            if (flags.nuw && r >> b != a) || (flags.nsw && (sext(r, width) >> b) as i128 != sa) {
                return Ok(None);
            }
            r
        }
        BinOp::LShr | BinOp::AShr => {
            if b >= width as u64 {
                return Ok(None);
            }
            if flags.exact && a & ((1u64 << b) - 1) != 0 {
                return Ok(None);
            }
            if op == BinOp::LShr {
                a >> b
            } else {
                (sext(a, width) >> b) as u64 & m
            }
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
    };
    Ok(Some(r))
}

pub(crate) fn icmp(pred: IcmpPred, width: u32, a: u64, b: u64) -> bool {
    let (sa, sb) = (sext(a, width), sext(b, width));
    match pred {
        IcmpPred::Eq => a == b,
        IcmpPred::Ne => a != b,
        IcmpPred::Ult => a < b,
        IcmpPred::Ule => a <= b,
        IcmpPred::Ugt => a > b,
        IcmpPred::Uge => a >= b,
        IcmpPred::Slt => sa < sb,
        IcmpPred::Sle => sa <= sb,
        IcmpPred::Sgt => sa > sb,
        IcmpPred::Sge => sa >= sb,
    }
}
