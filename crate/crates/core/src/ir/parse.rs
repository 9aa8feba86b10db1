use thiserror::Error;

use super::{
    validate_ssa, BinOp, Block, Branch, CastOp, Diagnostic, Flags, Function, IcmpPred, Inst,
    InstKind, Operand, Param, TransformationPair, Type,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("function violates SSA invariants: {}", join_diagnostics(.0))]
    Ssa(Vec<Diagnostic>),
    #[error("signature mismatch: source is `{src}`, target is `{tgt}`")]
    SignatureMismatch { src: String, tgt: String },
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses one function and checks every structural invariant.
pub fn parse_function(text: &str) -> Result<Function, ParseError> {
    let f = parse_function_unchecked(text)?;
    let diags = validate_ssa(&f);
    if diags.is_empty() {
        Ok(f)
    } else {
        Err(ParseError::Ssa(diags))
    }
}

/// Parses one function, checking syntax only.
pub fn parse_function_unchecked(text: &str) -> Result<Function, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let f = p.function()?;
    if let Some(t) = p.peek() {
        return Err(p.error_at(t, format!("unexpected {} after end of function", t.tok)));
    }
    Ok(f)
}

pub fn parse_pair(
    src_text: &str,
    tgt_text: &str,
    id: &str,
) -> Result<TransformationPair, ParseError> {
    let src = parse_function(src_text)?;
    let tgt = parse_function(tgt_text)?;
    TransformationPair::new(id, src, tgt)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Local(String),
    Global(String),
    Int(i128),
    Punct(char),
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Local(n) => write!(f, "`%{n}`"),
            Tok::Global(n) => write!(f, "`@{n}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    let (mut line, mut line_start) = (1usize, 0usize);
    while let Some(&(i, c)) = chars.peek() {
        let column = text[line_start..i].chars().count() + 1;
        let err = |message: String| ParseError::Syntax {
            line,
            column,
            message,
        };
        if c == '\n' {
            chars.next();
            line += 1;
            line_start = i + 1;
            continue;
        }
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == ';' {
            while let Some(&(_, c)) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
            }
            continue;
        }
        let take_name = |chars: &mut std::iter::Peekable<std::str::CharIndices<'_>>| {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if !is_name_char(c) {
                    break;
                }
                s.push(c);
                chars.next();
            }
            s
        };
        let tok = match c {
            '%' | '@' => {
                chars.next();
                let name = take_name(&mut chars);
                if name.is_empty() {
                    return Err(err(format!("expected a name after `{c}`")));
                }
                if c == '%' {
                    Tok::Local(name)
                } else {
                    Tok::Global(name)
                }
            }
            '-' | '0'..='9' => {
                let mut s = String::new();
                s.push(c);
                chars.next();
                while let Some(&(_, d)) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                // Labels may start with a digit (`1:`); treat trailing name chars as a word.
                if let Some(&(_, d)) = chars.peek() {
                    if is_name_char(d) && !s.starts_with('-') {
                        let rest = take_name(&mut chars);
                        out.push(Token {
                            tok: Tok::Word(s + &rest),
                            line,
                            column,
                        });
                        continue;
                    }
                }
                let v: i128 = s
                    .parse()
                    .map_err(|_| err(format!("malformed integer literal `{s}`")))?;
                Tok::Int(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' || c == '.' => {
                Tok::Word(take_name(&mut chars))
            }
            ',' | '(' | ')' | '{' | '}' | '[' | ']' | '=' | ':' => {
                chars.next();
                Tok::Punct(c)
            }
            other => return Err(err(format!("unexpected character `{other}`"))),
        };
        out.push(Token { tok, line, column });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + k).map(|t| &t.tok)
    }

    fn error_at(&self, t: &Token, message: String) -> ParseError {
        ParseError::Syntax {
            line: t.line,
            column: t.column,
            message,
        }
    }

    fn error_here(&self, message: String) -> ParseError {
        match self.peek() {
            Some(t) => self.error_at(t, message),
            None => {
                let (line, column) = self
                    .tokens
                    .last()
                    .map_or((1, 1), |t| (t.line, t.column + 1));
                ParseError::Syntax {
                    line,
                    column,
                    message,
                }
            }
        }
    }

    fn found(&self) -> String {
        self.peek()
            .map_or("end of input".to_string(), |t| t.tok.to_string())
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek_at(0) == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek_at(0), Some(Tok::Word(x)) if x == w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char, what: &str) -> PResult<()> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.error_here(format!("expected `{c}` {what}, found {}", self.found())))
        }
    }

    fn expect_word(&mut self, w: &str) -> PResult<()> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.error_here(format!("expected `{w}`, found {}", self.found())))
        }
    }

    fn word(&mut self, what: &str) -> PResult<String> {
        match self.peek_at(0) {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.error_here(format!("expected {what}, found {}", self.found()))),
        }
    }

    fn local(&mut self, what: &str) -> PResult<String> {
        match self.peek_at(0) {
            Some(Tok::Local(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.error_here(format!("expected {what}, found {}", self.found()))),
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        let here = self.pos;
        let w = self.word("a type")?;
        w.parse::<Type>().map_err(|m| {
            self.pos = here;
            self.error_here(m)
        })
    }

    /// Return type: a type or `void`.
    fn ret_ty(&mut self) -> PResult<Option<Type>> {
        if self.eat_word("void") {
            Ok(None)
        } else {
            self.ty().map(Some)
        }
    }

    fn function(&mut self) -> PResult<Function> {
        self.expect_word("define")?;
        let ret = self.ret_ty()?;
        let name = match self.next() {
            Some(Tok::Global(n)) => n,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.error_here(format!(
                    "expected function name `@...`, found {}",
                    self.found()
                )));
            }
        };
        self.expect_punct('(', "to open the parameter list")?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                let ty = self.ty()?;
                let name = self.local("a parameter name")?;
                params.push(Param { name, ty });
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',', "between parameters")?;
            }
        }
        self.expect_punct('{', "to open the function body")?;
        let mut blocks: Vec<Block> = Vec::new();
        loop {
            if self.eat_punct('}') {
                break;
            }
            if self.peek().is_none() {
                return Err(self.error_here("expected `}` to close the function body".into()));
            }
            if let (Some(Tok::Word(l)), Some(Tok::Punct(':'))) = (self.peek_at(0), self.peek_at(1))
            {
                blocks.push(Block {
                    label: l.clone(),
                    insts: Vec::new(),
                });
                self.pos += 2;
                continue;
            }
            let inst = self.instruction()?;
            if blocks.is_empty() {
                blocks.push(Block {
                    label: "entry".into(),
                    insts: Vec::new(),
                });
            }
            blocks.last_mut().unwrap().insts.push(inst);
        }
        Ok(Function {
            name,
            params,
            ret,
            blocks,
        })
    }

    fn label_ref(&mut self) -> PResult<String> {
        self.expect_word("label")?;
        self.local("a block label `%name`")
    }

    /// Operand whose type is known from context.
    fn operand(&mut self, ty: Type) -> PResult<Operand> {
        let t = self
            .peek()
            .cloned()
            .ok_or_else(|| self.error_here("expected an operand, found end of input".into()))?;
        let op = match &t.tok {
            Tok::Local(n) => Operand::Reg(n.clone()),
            Tok::Int(v) => {
                let w = ty
                    .width()
                    .ok_or_else(|| self.error_at(&t, "integer literal used as a pointer".into()))?;
                let lo = -(1i128 << (w - 1));
                let hi = 1i128 << w;
                if *v < lo || *v >= hi {
                    return Err(self.error_at(&t, format!("literal {v} does not fit in {ty}")));
                }
                Operand::int(ty, *v)
            }
            Tok::Word(w) => match w.as_str() {
                "true" | "false" if ty == Type::I1 => Operand::Const {
                    ty,
                    bits: (w == "true") as u64,
                },
                "undef" => Operand::Undef(ty),
                "poison" => Operand::Poison(ty),
                "null" if ty == Type::Ptr => Operand::Null,
                _ => {
                    return Err(
                        self.error_at(&t, format!("expected an operand of type {ty}, found `{w}`"))
                    )
                }
            },
            other => return Err(self.error_at(&t, format!("expected an operand, found {other}"))),
        };
        self.pos += 1;
        Ok(op)
    }

    fn typed_operand(&mut self) -> PResult<(Type, Operand)> {
        let ty = self.ty()?;
        let op = self.operand(ty)?;
        Ok((ty, op))
    }

    fn instruction(&mut self) -> PResult<Inst> {
        let start = self.pos;
        let result = match (self.peek_at(0), self.peek_at(1)) {
            (Some(Tok::Local(n)), Some(Tok::Punct('='))) => {
                let n = n.clone();
                self.pos += 2;
                Some(n)
            }
            _ => None,
        };
        let opcode_at = self.pos;
        let opcode = self.word("an instruction")?;
        let kind = match opcode.as_str() {
            op if BinOp::from_mnemonic(op).is_some() => {
                let op = BinOp::from_mnemonic(op).unwrap();
                let mut flags = Flags::NONE;
                loop {
                    if self.eat_word("nsw") {
                        flags.nsw = true;
                    } else if self.eat_word("nuw") {
                        flags.nuw = true;
                    } else if self.eat_word("exact") {
                        flags.exact = true;
                    } else {
                        break;
                    }
                }
                let ty = self.ty()?;
                let lhs = self.operand(ty)?;
                self.expect_punct(',', "before the second operand")?;
                let rhs = self.operand(ty)?;
                InstKind::BinOp {
                    op,
                    flags,
                    ty,
                    lhs,
                    rhs,
                }
            }
            "icmp" => {
                let p = self.word("a comparison predicate")?;
                let pred = IcmpPred::from_mnemonic(&p)
                    .ok_or_else(|| self.error_here(format!("unknown icmp predicate `{p}`")))?;
                let ty = self.ty()?;
                let lhs = self.operand(ty)?;
                self.expect_punct(',', "before the second operand")?;
                let rhs = self.operand(ty)?;
                InstKind::ICmp { pred, ty, lhs, rhs }
            }
            "select" => {
                let cty = self.ty()?;
                let cond = self.operand(cty)?;
                if cty != Type::I1 {
                    return Err(self.error_here("select condition must be i1".into()));
                }
                self.expect_punct(',', "after the select condition")?;
                let (ty, then_val) = self.typed_operand()?;
                self.expect_punct(',', "between select arms")?;
                let (ty2, else_val) = self.typed_operand()?;
                if ty != ty2 {
                    return Err(
                        self.error_here(format!("select arms have different types {ty} and {ty2}"))
                    );
                }
                InstKind::Select {
                    cond,
                    ty,
                    then_val,
                    else_val,
                }
            }
            c if CastOp::from_mnemonic(c).is_some() => {
                let op = CastOp::from_mnemonic(c).unwrap();
                let (from, value) = self.typed_operand()?;
                self.expect_word("to")?;
                let to = self.ty()?;
                InstKind::Cast {
                    op,
                    from,
                    value,
                    to,
                }
            }
            "alloca" => {
                let ty = self.ty()?;
                let mut count = 1u32;
                if self.eat_punct(',') {
                    let cty = self.ty()?;
                    match self.operand(cty)? {
                        Operand::Const { bits, .. } if bits >= 1 && bits <= u32::MAX as u64 => {
                            count = bits as u32
                        }
                        _ => {
                            return Err(
                                self.error_here("alloca count must be a positive constant".into())
                            )
                        }
                    }
                }
                InstKind::Alloca { ty, count }
            }
            "load" => {
                let ty = self.ty()?;
                self.expect_punct(',', "after the loaded type")?;
                let (pty, ptr) = self.typed_operand()?;
                if pty != Type::Ptr {
                    return Err(self.error_here("load address must have type ptr".into()));
                }
                InstKind::Load { ty, ptr }
            }
            "store" => {
                let (ty, value) = self.typed_operand()?;
                self.expect_punct(',', "before the store address")?;
                let (pty, ptr) = self.typed_operand()?;
                if pty != Type::Ptr {
                    return Err(self.error_here("store address must have type ptr".into()));
                }
                InstKind::Store { ty, value, ptr }
            }
            "br" => {
                if matches!(self.peek_at(0), Some(Tok::Word(w)) if w == "label") {
                    InstKind::Br(Branch::Uncond(self.label_ref()?))
                } else {
                    let (cty, cond) = self.typed_operand()?;
                    if cty != Type::I1 {
                        return Err(self.error_here("branch condition must be i1".into()));
                    }
                    self.expect_punct(',', "after the branch condition")?;
                    let then_label = self.label_ref()?;
                    self.expect_punct(',', "between branch targets")?;
                    let else_label = self.label_ref()?;
                    InstKind::Br(Branch::Cond {
                        cond,
                        then_label,
                        else_label,
                    })
                }
            }
            "phi" => {
                let ty = self.ty()?;
                let mut incomings = Vec::new();
                loop {
                    self.expect_punct('[', "to open a phi incoming")?;
                    let v = self.operand(ty)?;
                    self.expect_punct(',', "inside a phi incoming")?;
                    let l = self.local("a predecessor label")?;
                    self.expect_punct(']', "to close a phi incoming")?;
                    incomings.push((l, v));
                    if !self.eat_punct(',') {
                        break;
                    }
                }
                InstKind::Phi { ty, incomings }
            }
            "ret" => match self.ret_ty()? {
                None => InstKind::Ret(None),
                Some(ty) => InstKind::Ret(Some((ty, self.operand(ty)?))),
            },
            "call" => {
                let ret = self.ret_ty()?;
                let name = match self.next() {
                    Some(Tok::Global(n)) => n,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error_here(format!(
                            "expected callee `@name`, found {}",
                            self.found()
                        )));
                    }
                };
                self.expect_punct('(', "to open the argument list")?;
                let mut args = Vec::new();
                if !self.eat_punct(')') {
                    loop {
                        args.push(self.typed_operand()?);
                        if self.eat_punct(')') {
                            break;
                        }
                        self.expect_punct(',', "between arguments")?;
                    }
                }
                InstKind::CallExternal { name, ret, args }
            }
            other => {
                self.pos = opcode_at;
                return Err(self.error_here(format!("unknown instruction `{other}`")));
            }
        };
        let defines = kind.result_type().is_some();
        match (&result, defines) {
            (Some(_), false) => {
                self.pos = start;
                Err(self.error_here(format!("`{opcode}` does not produce a value")))
            }
            (None, true) if !matches!(kind, InstKind::CallExternal { .. }) => {
                self.pos = start;
                Err(self.error_here(format!("result of `{opcode}` must be named")))
            }
            _ => Ok(Inst { result, kind }),
        }
    }
}
