use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{Function, InstKind, Operand, Type};
use crate::ir::CastOp;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    EmptyFunction,
    EmptyBlock,
    DuplicateLabel(String),
    DuplicateParameter(String),
    UnknownLabel(String),
    UndefinedRegister(String),
    DuplicateDefinition(String),
    UseNotDominated(String),
    MissingTerminator,
    MultipleTerminators,
    PhiInEntryBlock,
    PhiNotAtBlockStart,
    PhiIncomingMismatch,
    EntryHasPredecessors,
    InvalidFlag,
    TypeMismatch,
    InvalidCast,
    ReturnTypeMismatch,
}

/// One violated invariant and where it was found.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// `(block label, instruction index)`; `None` for function-level problems.
    pub location: Option<(String, usize)>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Some((b, i)) => write!(f, "{b}#{i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every structural invariant of `f`. Empty result means the function
/// is executable.
pub fn validate_ssa(f: &Function) -> Vec<Diagnostic> {
    let mut v = Validator {
        f,
        diags: Vec::new(),
    };
    v.run();
    v.diags
}

struct Validator<'a> {
    f: &'a Function,
    diags: Vec<Diagnostic>,
}

#[derive(Clone, Copy)]
enum Def {
    Param,
    Inst { block: usize, index: usize },
}

impl<'a> Validator<'a> {
    fn report(&mut self, kind: DiagnosticKind, loc: Option<(usize, usize)>, message: String) {
        let location = loc.map(|(b, i)| (self.f.blocks[b].label.clone(), i));
        self.diags.push(Diagnostic {
            kind,
            location,
            message,
        });
    }

    fn run(&mut self) {
        let f = self.f;
        if f.blocks.is_empty() {
            self.report(
                DiagnosticKind::EmptyFunction,
                None,
                "function has no blocks".into(),
            );
            return;
        }

        let mut labels: HashMap<&str, usize> = HashMap::new();
        for (i, b) in f.blocks.iter().enumerate() {
            if labels.insert(&b.label, i).is_some() {
                self.report(
                    DiagnosticKind::DuplicateLabel(b.label.clone()),
                    None,
                    format!("label `{}` defined more than once", b.label),
                );
            }
        }

        // Definitions and their types.
        let mut defs: HashMap<&str, (Def, Type)> = HashMap::new();
        for p in &f.params {
            if defs.insert(&p.name, (Def::Param, p.ty)).is_some() {
                self.report(
                    DiagnosticKind::DuplicateParameter(p.name.clone()),
                    None,
                    format!("parameter `%{}` declared twice", p.name),
                );
            }
        }
        for (bi, b) in f.blocks.iter().enumerate() {
            for (ii, inst) in b.insts.iter().enumerate() {
                if let (Some(r), Some(ty)) = (&inst.result, inst.kind.result_type()) {
                    if defs
                        .insert(
                            r,
                            (
                                Def::Inst {
                                    block: bi,
                                    index: ii,
                                },
                                ty,
                            ),
                        )
                        .is_some()
                    {
                        self.report(
                            DiagnosticKind::DuplicateDefinition(r.clone()),
                            Some((bi, ii)),
                            format!("register `%{r}` defined more than once"),
                        );
                    }
                }
            }
        }

        // Terminators and the CFG.
        let n = f.blocks.len();
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (bi, b) in f.blocks.iter().enumerate() {
            if b.insts.is_empty() {
                self.report(
                    DiagnosticKind::EmptyBlock,
                    Some((bi, 0)),
                    format!("block `{}` is empty", b.label),
                );
                continue;
            }
            let terms: Vec<usize> = b
                .insts
                .iter()
                .enumerate()
                .filter(|(_, i)| i.kind.is_terminator())
                .map(|(i, _)| i)
                .collect();
            if terms.len() > 1 {
                self.report(
                    DiagnosticKind::MultipleTerminators,
                    Some((bi, terms[1])),
                    format!("block `{}` has {} terminators", b.label, terms.len()),
                );
            }
            if !b.insts.last().unwrap().kind.is_terminator() {
                self.report(
                    DiagnosticKind::MissingTerminator,
                    Some((bi, b.insts.len() - 1)),
                    format!("block `{}` does not end with a terminator", b.label),
                );
            }
            for (ii, inst) in b.insts.iter().enumerate() {
                if let InstKind::Br(br) = &inst.kind {
                    for t in br.targets() {
                        match labels.get(t) {
                            Some(&ti) => {
                                if ii + 1 == b.insts.len() && !succs[bi].contains(&ti) {
                                    succs[bi].push(ti);
                                }
                            }
                            None => self.report(
                                DiagnosticKind::UnknownLabel(t.to_string()),
                                Some((bi, ii)),
                                format!("branch to unknown label `{t}`"),
                            ),
                        }
                    }
                }
            }
        }
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (b, ss) in succs.iter().enumerate() {
            for &s in ss {
                preds[s].push(b);
            }
        }
        if !preds[0].is_empty() {
            self.report(
                DiagnosticKind::EntryHasPredecessors,
                Some((0, 0)),
                "the entry block cannot be a branch target".into(),
            );
        }
        let dom = dominators(&succs, &preds);

        for (bi, b) in f.blocks.iter().enumerate() {
            let mut seen_non_phi = false;
            for (ii, inst) in b.insts.iter().enumerate() {
                let loc = Some((bi, ii));
                match &inst.kind {
                    InstKind::Phi { incomings, .. } => {
                        if bi == 0 {
                            self.report(
                                DiagnosticKind::PhiInEntryBlock,
                                loc,
                                "phi in the entry block".into(),
                            );
                        }
                        if seen_non_phi {
                            self.report(
                                DiagnosticKind::PhiNotAtBlockStart,
                                loc,
                                "phi after a non-phi instruction".into(),
                            );
                        }
                        let mut inc_labels: Vec<&str> =
                            incomings.iter().map(|(l, _)| l.as_str()).collect();
                        inc_labels.sort_unstable();
                        let distinct = inc_labels.len();
                        inc_labels.dedup();
                        let mut pred_labels: Vec<&str> = preds[bi]
                            .iter()
                            .map(|&p| f.blocks[p].label.as_str())
                            .collect();
                        pred_labels.sort_unstable();
                        if distinct != inc_labels.len() || inc_labels != pred_labels {
                            self.report(
                                DiagnosticKind::PhiIncomingMismatch,
                                loc,
                                format!(
                                    "phi incomings [{}] do not match predecessors [{}]",
                                    inc_labels.join(", "),
                                    pred_labels.join(", ")
                                ),
                            );
                        }
                    }
                    _ => seen_non_phi = true,
                }

                if let InstKind::BinOp { op, flags, .. } = &inst.kind {
                    if ((flags.nsw || flags.nuw) && !op.allows_wrap_flags())
                        || (flags.exact && !op.allows_exact())
                    {
                        self.report(
                            DiagnosticKind::InvalidFlag,
                            loc,
                            format!("flag not permitted on `{}`", op.mnemonic()),
                        );
                    }
                }
                if let InstKind::BinOp { ty: Type::Ptr, .. }
                | InstKind::ICmp { ty: Type::Ptr, .. } = &inst.kind
                {
                    self.report(
                        DiagnosticKind::TypeMismatch,
                        loc,
                        "arithmetic on a pointer".into(),
                    );
                }
                if let InstKind::Cast { op, from, to, .. } = &inst.kind {
                    let ok = match (from.width(), to.width()) {
                        (Some(a), Some(b)) => match op {
                            CastOp::Zext | CastOp::Sext => b > a,
                            CastOp::Trunc => b < a,
                        },
                        _ => false,
                    };
                    if !ok {
                        self.report(
                            DiagnosticKind::InvalidCast,
                            loc,
                            format!("invalid {} from {from} to {to}", op.mnemonic()),
                        );
                    }
                }
                if let InstKind::Ret(r) = &inst.kind {
                    if r.as_ref().map(|(t, _)| *t) != f.ret {
                        self.report(
                            DiagnosticKind::ReturnTypeMismatch,
                            loc,
                            "return value does not match the declared return type".into(),
                        );
                    }
                }

                // Operand definitions, types and dominance.
                let phi_preds: Option<Vec<&str>> = match &inst.kind {
                    InstKind::Phi { incomings, .. } => {
                        Some(incomings.iter().map(|(l, _)| l.as_str()).collect())
                    }
                    _ => None,
                };
                for (k, (operand, expected)) in inst.kind.typed_operands().into_iter().enumerate() {
                    match operand {
                        Operand::Reg(r) => {
                            let Some(&(def, ty)) = defs.get(r.as_str()) else {
                                self.report(
                                    DiagnosticKind::UndefinedRegister(r.clone()),
                                    loc,
                                    format!("use of undefined register `%{r}`"),
                                );
                                continue;
                            };
                            if ty != expected {
                                self.report(
                                    DiagnosticKind::TypeMismatch,
                                    loc,
                                    format!("`%{r}` has type {ty}, expected {expected}"),
                                );
                            }
                            let Def::Inst {
                                block: db,
                                index: di,
                            } = def
                            else {
                                continue;
                            };
                            let dominated = match &phi_preds {
                                Some(pl) => match labels.get(pl[k]) {
                                    Some(&p) => {
                                        !dom.reachable(p) || db == p || dom.dominates(db, p)
                                    }
                                    None => true,
                                },
                                None => {
                                    !dom.reachable(bi)
                                        || (db == bi && di < ii)
                                        || (db != bi && dom.dominates(db, bi))
                                }
                            };
                            if !dominated {
                                self.report(
                                    DiagnosticKind::UseNotDominated(r.clone()),
                                    loc,
                                    format!("use of `%{r}` is not dominated by its definition"),
                                );
                            }
                        }
                        Operand::Const { ty, .. } | Operand::Undef(ty) | Operand::Poison(ty) => {
                            if *ty != expected {
                                self.report(
                                    DiagnosticKind::TypeMismatch,
                                    loc,
                                    format!("constant of type {ty}, expected {expected}"),
                                );
                            }
                        }
                        Operand::Null => {
                            if expected != Type::Ptr {
                                self.report(
                                    DiagnosticKind::TypeMismatch,
                                    loc,
                                    format!("null used as {expected}"),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Dominators {
    /// `sets[b]` holds the dominators of `b`; empty for unreachable blocks.
    sets: Vec<HashSet<usize>>,
}

impl Dominators {
    fn reachable(&self, b: usize) -> bool {
        !self.sets[b].is_empty()
    }

    fn dominates(&self, a: usize, b: usize) -> bool {
        self.sets[b].contains(&a)
    }
}

fn dominators(succs: &[Vec<usize>], preds: &[Vec<usize>]) -> Dominators {
    let n = succs.len();
    let mut reachable = vec![false; n];
    let mut stack = vec![0usize];
    while let Some(b) = stack.pop() {
        if std::mem::replace(&mut reachable[b], true) {
            continue;
        }
        stack.extend(succs[b].iter().copied().filter(|&s| !reachable[s]));
    }
    let all: HashSet<usize> = (0..n).filter(|&b| reachable[b]).collect();
    let mut sets: Vec<HashSet<usize>> = (0..n)
        .map(|b| {
            if b == 0 {
                HashSet::from([0])
            } else if reachable[b] {
                all.clone()
            } else {
                HashSet::new()
            }
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..n {
            if !reachable[b] {
                continue;
            }
            let mut new: Option<HashSet<usize>> = None;
            for &p in preds[b].iter().filter(|&&p| reachable[p]) {
                new = Some(match new {
                    None => sets[p].clone(),
                    Some(acc) => acc.intersection(&sets[p]).copied().collect(),
                });
            }
            let mut new = new.unwrap_or_default();
            new.insert(b);
            if new != sets[b] {
                sets[b] = new;
                changed = true;
            }
        }
    }
    Dominators { sets }
}
