//! The mini SSA intermediate representation.
//!
//! A deliberately small, LLVM-assembly-like subset: fixed-width integers and
//! opaque pointers, integer arithmetic with `nsw`/`nuw`/`exact` flags,
//! comparisons, selects, casts, stack allocation, loads/stores, branches,
//! phis, returns and (parse-only) external calls. See `docs/grammar.md` for
//! the accepted text syntax.

mod parse;
mod print;
mod validate;

use std::fmt;

pub use parse::{parse_function, parse_function_unchecked, parse_pair, ParseError};
pub use print::print_function;
pub use validate::{validate_ssa, Diagnostic, DiagnosticKind};

/// Integer widths the IR supports.
pub const SUPPORTED_WIDTHS: [u32; 5] = [1, 8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    /// Fixed-width integer; width is one of [`SUPPORTED_WIDTHS`].
    Int(u32),
    Ptr,
}

impl Type {
    pub const I1: Type = Type::Int(1);
    pub const I8: Type = Type::Int(8);
    pub const I16: Type = Type::Int(16);
    pub const I32: Type = Type::Int(32);
    pub const I64: Type = Type::Int(64);

    pub fn int(width: u32) -> Option<Type> {
        SUPPORTED_WIDTHS
            .contains(&width)
            .then_some(Type::Int(width))
    }

    pub fn width(self) -> Option<u32> {
        match self {
            Type::Int(w) => Some(w),
            Type::Ptr => None,
        }
    }

    pub fn is_int(self) -> bool {
        matches!(self, Type::Int(_))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int(w) => write!(f, "i{w}"),
            Type::Ptr => f.write_str("ptr"),
        }
    }
}

impl std::str::FromStr for Type {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ptr" {
            return Ok(Type::Ptr);
        }
        s.strip_prefix('i')
            .and_then(|w| w.parse::<u32>().ok())
            .and_then(Type::int)
            .ok_or_else(|| format!("unsupported type `{s}`"))
    }
}

/// All-ones mask for an integer of `width` bits.
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(String),
    /// Integer constant; `bits` is already reduced modulo 2^width.
    Const {
        ty: Type,
        bits: u64,
    },
    Undef(Type),
    Poison(Type),
    Null,
}

impl Operand {
    pub fn int(ty: Type, value: i128) -> Operand {
        let w = ty.width().expect("integer constant needs an integer type");
        Operand::Const {
            ty,
            bits: (value as u128 as u64) & mask(w),
        }
    }

    pub fn reg(name: impl Into<String>) -> Operand {
        Operand::Reg(name.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    UDiv,
    SDiv,
    URem,
    SRem,
    Shl,
    LShr,
    AShr,
    And,
    Or,
    Xor,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::UDiv,
        BinOp::SDiv,
        BinOp::URem,
        BinOp::SRem,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::UDiv => "udiv",
            BinOp::SDiv => "sdiv",
            BinOp::URem => "urem",
            BinOp::SRem => "srem",
            BinOp::Shl => "shl",
            BinOp::LShr => "lshr",
            BinOp::AShr => "ashr",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Whether `nsw`/`nuw` are meaningful on this operation.
    pub fn allows_wrap_flags(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Shl)
    }

    pub fn allows_exact(self) -> bool {
        matches!(self, BinOp::UDiv | BinOp::SDiv | BinOp::LShr | BinOp::AShr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags {
    pub nuw: bool,
    pub nsw: bool,
    pub exact: bool,
}

impl Flags {
    pub const NONE: Flags = Flags {
        nuw: false,
        nsw: false,
        exact: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IcmpPred {
    Eq,
    Ne,
    Ult,
    Ule,
    Ugt,
    Uge,
    Slt,
    Sle,
    Sgt,
    Sge,
}

impl IcmpPred {
    pub const ALL: [IcmpPred; 10] = [
        IcmpPred::Eq,
        IcmpPred::Ne,
        IcmpPred::Ult,
        IcmpPred::Ule,
        IcmpPred::Ugt,
        IcmpPred::Uge,
        IcmpPred::Slt,
        IcmpPred::Sle,
        IcmpPred::Sgt,
        IcmpPred::Sge,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            IcmpPred::Eq => "eq",
            IcmpPred::Ne => "ne",
            IcmpPred::Ult => "ult",
            IcmpPred::Ule => "ule",
            IcmpPred::Ugt => "ugt",
            IcmpPred::Uge => "uge",
            IcmpPred::Slt => "slt",
            IcmpPred::Sle => "sle",
            IcmpPred::Sgt => "sgt",
            IcmpPred::Sge => "sge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<IcmpPred> {
        IcmpPred::ALL.into_iter().find(|p| p.mnemonic() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CastOp {
    Zext,
    Sext,
    Trunc,
}

impl CastOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CastOp::Zext => "zext",
            CastOp::Sext => "sext",
            CastOp::Trunc => "trunc",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<CastOp> {
        match s {
            "zext" => Some(CastOp::Zext),
            "sext" => Some(CastOp::Sext),
            "trunc" => Some(CastOp::Trunc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Branch {
    Uncond(String),
    Cond {
        cond: Operand,
        then_label: String,
        else_label: String,
    },
}

impl Branch {
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Branch::Uncond(l) => vec![l.as_str()],
            Branch::Cond {
                then_label,
                else_label,
                ..
            } => vec![then_label.as_str(), else_label.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InstKind {
    BinOp {
        op: BinOp,
        flags: Flags,
        ty: Type,
        lhs: Operand,
        rhs: Operand,
    },
    ICmp {
        pred: IcmpPred,
        ty: Type,
        lhs: Operand,
        rhs: Operand,
    },
    Select {
        cond: Operand,
        ty: Type,
        then_val: Operand,
        else_val: Operand,
    },
    Cast {
        op: CastOp,
        from: Type,
        value: Operand,
        to: Type,
    },
    Alloca {
        ty: Type,
        count: u32,
    },
    Load {
        ty: Type,
        ptr: Operand,
    },
    Store {
        ty: Type,
        value: Operand,
        ptr: Operand,
    },
    Br(Branch),
    Phi {
        ty: Type,
        incomings: Vec<(String, Operand)>,
    },
    Ret(Option<(Type, Operand)>),
    /// Parses and prints, but never executes.
    CallExternal {
        name: String,
        ret: Option<Type>,
        args: Vec<(Type, Operand)>,
    },
}

impl InstKind {
    pub fn is_terminator(&self) -> bool {
        matches!(self, InstKind::Br(_) | InstKind::Ret(_))
    }

    /// Type of the value this instruction defines, if any.
    pub fn result_type(&self) -> Option<Type> {
        match self {
            InstKind::BinOp { ty, .. } => Some(*ty),
            InstKind::ICmp { .. } => Some(Type::I1),
            InstKind::Select { ty, .. } => Some(*ty),
            InstKind::Cast { to, .. } => Some(*to),
            InstKind::Alloca { .. } => Some(Type::Ptr),
            InstKind::Load { ty, .. } => Some(*ty),
            InstKind::Phi { ty, .. } => Some(*ty),
            InstKind::CallExternal { ret, .. } => *ret,
            InstKind::Store { .. } | InstKind::Br(_) | InstKind::Ret(_) => None,
        }
    }

    /// Operands with the type each must have.
    pub fn typed_operands(&self) -> Vec<(&Operand, Type)> {
        match self {
            InstKind::BinOp { ty, lhs, rhs, .. } | InstKind::ICmp { ty, lhs, rhs, .. } => {
                vec![(lhs, *ty), (rhs, *ty)]
            }
            InstKind::Select {
                cond,
                ty,
                then_val,
                else_val,
            } => vec![(cond, Type::I1), (then_val, *ty), (else_val, *ty)],
            InstKind::Cast { from, value, .. } => vec![(value, *from)],
            InstKind::Alloca { .. } => vec![],
            InstKind::Load { ptr, .. } => vec![(ptr, Type::Ptr)],
            InstKind::Store { ty, value, ptr } => vec![(value, *ty), (ptr, Type::Ptr)],
            InstKind::Br(Branch::Uncond(_)) => vec![],
            InstKind::Br(Branch::Cond { cond, .. }) => vec![(cond, Type::I1)],
            InstKind::Phi { ty, incomings } => incomings.iter().map(|(_, v)| (v, *ty)).collect(),
            InstKind::Ret(None) => vec![],
            InstKind::Ret(Some((ty, v))) => vec![(v, *ty)],
            InstKind::CallExternal { args, .. } => args.iter().map(|(t, v)| (v, *t)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Inst {
    pub result: Option<String>,
    pub kind: InstKind,
}

impl Inst {
    pub fn new(result: Option<&str>, kind: InstKind) -> Inst {
        Inst {
            result: result.map(str::to_owned),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
}

impl Block {
    pub fn terminator(&self) -> Option<&InstKind> {
        self.insts
            .last()
            .map(|i| &i.kind)
            .filter(|k| k.is_terminator())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

/// A function; the first block is the entry block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    pub blocks: Vec<Block>,
}

impl Function {
    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn has_external_call(&self) -> bool {
        self.instructions()
            .any(|i| matches!(i.kind, InstKind::CallExternal { .. }))
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Inst> {
        self.blocks.iter().flat_map(|b| b.insts.iter())
    }

    /// Parameter types plus return type.
    pub fn signature(&self) -> (Vec<Type>, Option<Type>) {
        (self.params.iter().map(|p| p.ty).collect(), self.ret)
    }

    /// Copy with registers and labels renamed by order of appearance, so two
    /// alpha-equivalent functions compare equal.
    pub fn alpha_normalized(&self) -> Function {
        use std::collections::HashMap;
        let mut regs: HashMap<&str, String> = HashMap::new();
        for (i, p) in self.params.iter().enumerate() {
            regs.insert(&p.name, format!("a{i}"));
        }
        let mut n = 0;
        for inst in self.instructions() {
            if let Some(r) = &inst.result {
                regs.entry(r).or_insert_with(|| {
                    n += 1;
                    format!("v{}", n - 1)
                });
            }
        }
        let labels: HashMap<&str, String> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), format!("bb{i}")))
            .collect();
        let rl = |l: &String| labels.get(l.as_str()).cloned().unwrap_or_else(|| l.clone());
        let ro = |o: &Operand| match o {
            Operand::Reg(r) => {
                Operand::Reg(regs.get(r.as_str()).cloned().unwrap_or_else(|| r.clone()))
            }
            other => other.clone(),
        };
        let blocks =
            self.blocks
                .iter()
                .map(|b| Block {
                    label: rl(&b.label),
                    insts: b
                        .insts
                        .iter()
                        .map(|inst| Inst {
                            result: inst.result.as_ref().map(|r| {
                                regs.get(r.as_str()).cloned().unwrap_or_else(|| r.clone())
                            }),
                            kind: map_operands(&inst.kind, &ro, &rl),
                        })
                        .collect(),
                })
                .collect();
        Function {
            name: "f".into(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: regs[p.name.as_str()].clone(),
                    ty: p.ty,
                })
                .collect(),
            ret: self.ret,
            blocks,
        }
    }
}

fn map_operands(
    kind: &InstKind,
    op: &dyn Fn(&Operand) -> Operand,
    label: &dyn Fn(&String) -> String,
) -> InstKind {
    match kind {
        InstKind::BinOp {
            op: o,
            flags,
            ty,
            lhs,
            rhs,
        } => InstKind::BinOp {
            op: *o,
            flags: *flags,
            ty: *ty,
            lhs: op(lhs),
            rhs: op(rhs),
        },
        InstKind::ICmp { pred, ty, lhs, rhs } => InstKind::ICmp {
            pred: *pred,
            ty: *ty,
            lhs: op(lhs),
            rhs: op(rhs),
        },
        InstKind::Select {
            cond,
            ty,
            then_val,
            else_val,
        } => InstKind::Select {
            cond: op(cond),
            ty: *ty,
            then_val: op(then_val),
            else_val: op(else_val),
        },
        InstKind::Cast {
            op: c,
            from,
            value,
            to,
        } => InstKind::Cast {
            op: *c,
            from: *from,
            value: op(value),
            to: *to,
        },
        InstKind::Alloca { ty, count } => InstKind::Alloca {
            ty: *ty,
            count: *count,
        },
        InstKind::Load { ty, ptr } => InstKind::Load {
            ty: *ty,
            ptr: op(ptr),
        },
        InstKind::Store { ty, value, ptr } => InstKind::Store {
            ty: *ty,
            value: op(value),
            ptr: op(ptr),
        },
        InstKind::Br(Branch::Uncond(l)) => InstKind::Br(Branch::Uncond(label(l))),
        InstKind::Br(Branch::Cond {
            cond,
            then_label,
            else_label,
        }) => InstKind::Br(Branch::Cond {
            cond: op(cond),
            then_label: label(then_label),
            else_label: label(else_label),
        }),
        InstKind::Phi { ty, incomings } => InstKind::Phi {
            ty: *ty,
            incomings: incomings.iter().map(|(l, v)| (label(l), op(v))).collect(),
        },
        InstKind::Ret(v) => InstKind::Ret(v.as_ref().map(|(t, v)| (*t, op(v)))),
        InstKind::CallExternal { name, ret, args } => InstKind::CallExternal {
            name: name.clone(),
            ret: *ret,
            args: args.iter().map(|(t, v)| (*t, op(v))).collect(),
        },
    }
}

/// A source function and the target it was transformed into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformationPair {
    pub id: String,
    pub src: Function,
    pub tgt: Function,
}

impl TransformationPair {
    /// Pairs two functions, requiring identical parameter lists and return type.
    pub fn new(id: impl Into<String>, src: Function, tgt: Function) -> Result<Self, ParseError> {
        let same_params = src.params.len() == tgt.params.len()
            && src
                .params
                .iter()
                .zip(&tgt.params)
                .all(|(a, b)| a.name == b.name && a.ty == b.ty);
        if !same_params || src.ret != tgt.ret {
            return Err(ParseError::SignatureMismatch {
                src: signature_text(&src),
                tgt: signature_text(&tgt),
            });
        }
        Ok(TransformationPair {
            id: id.into(),
            src,
            tgt,
        })
    }
}

fn signature_text(f: &Function) -> String {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("{} %{}", p.ty, p.name))
        .collect();
    let ret = f.ret.map_or("void".to_string(), |t| t.to_string());
    format!("{ret} ({})", params.join(", "))
}
