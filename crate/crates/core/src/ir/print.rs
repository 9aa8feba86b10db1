use std::fmt::Write;

use super::{mask, Branch, Function, InstKind, Operand, Type};

/// Canonical text: one instruction per line, two-space indent, every block
/// labeled, trailing newline.
pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    let ret = f.ret.map_or("void".to_string(), |t| t.to_string());
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("{} %{}", p.ty, p.name))
        .collect();
    let _ = writeln!(out, "define {ret} @{}({}) {{", f.name, params.join(", "));
    for block in &f.blocks {
        let _ = writeln!(out, "{}:", block.label);
        for inst in &block.insts {
            out.push_str("  ");
            if let Some(r) = &inst.result {
                let _ = write!(out, "%{r} = ");
            }
            out.push_str(&print_kind(&inst.kind));
            out.push('\n');
        }
    }
    out.push_str("}\n");
    out
}

pub(crate) fn print_operand(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => format!("%{r}"),
        Operand::Const {
            ty: Type::Int(1),
            bits,
        } => if *bits & 1 == 1 { "true" } else { "false" }.into(),
        Operand::Const { ty, bits } => {
            let w = ty.width().unwrap_or(64);
            signed(*bits, w).to_string()
        }
        Operand::Undef(_) => "undef".into(),
        Operand::Poison(_) => "poison".into(),
        Operand::Null => "null".into(),
    }
}

fn signed(bits: u64, width: u32) -> i64 {
    let bits = bits & mask(width);
    if width < 64 && bits >> (width - 1) & 1 == 1 {
        (bits | !mask(width)) as i64
    } else {
        bits as i64
    }
}

fn print_kind(kind: &InstKind) -> String {
    let op = print_operand;
    match kind {
        InstKind::BinOp {
            op: o,
            flags,
            ty,
            lhs,
            rhs,
        } => {
            let mut s = o.mnemonic().to_string();
            if flags.nuw {
                s.push_str(" nuw");
            }
            if flags.nsw {
                s.push_str(" nsw");
            }
            if flags.exact {
                s.push_str(" exact");
            }
            format!("{s} {ty} {}, {}", op(lhs), op(rhs))
        }
        InstKind::ICmp { pred, ty, lhs, rhs } => {
            format!("icmp {} {ty} {}, {}", pred.mnemonic(), op(lhs), op(rhs))
        }
        InstKind::Select {
            cond,
            ty,
            then_val,
            else_val,
        } => format!(
            "select i1 {}, {ty} {}, {ty} {}",
            op(cond),
            op(then_val),
            op(else_val)
        ),
        InstKind::Cast {
            op: c,
            from,
            value,
            to,
        } => format!("{} {from} {} to {to}", c.mnemonic(), op(value)),
        InstKind::Alloca { ty, count: 1 } => format!("alloca {ty}"),
        InstKind::Alloca { ty, count } => format!("alloca {ty}, i32 {count}"),
        InstKind::Load { ty, ptr } => format!("load {ty}, ptr {}", op(ptr)),
        InstKind::Store { ty, value, ptr } => format!("store {ty} {}, ptr {}", op(value), op(ptr)),
        InstKind::Br(Branch::Uncond(l)) => format!("br label %{l}"),
        InstKind::Br(Branch::Cond {
            cond,
            then_label,
            else_label,
        }) => format!(
            "br i1 {}, label %{then_label}, label %{else_label}",
            op(cond)
        ),
        InstKind::Phi { ty, incomings } => {
            let inc: Vec<String> = incomings
                .iter()
                .map(|(l, v)| format!("[ {}, %{l} ]", op(v)))
                .collect();
            format!("phi {ty} {}", inc.join(", "))
        }
        InstKind::Ret(None) => "ret void".into(),
        InstKind::Ret(Some((ty, v))) => format!("ret {ty} {}", op(v)),
        InstKind::CallExternal { name, ret, args } => {
            let ret = ret.map_or("void".to_string(), |t| t.to_string());
            let args: Vec<String> = args.iter().map(|(t, v)| format!("{t} {}", op(v))).collect();
            format!("call {ret} @{name}({})", args.join(", "))
        }
    }
}
