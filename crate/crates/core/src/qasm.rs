//! OpenQASM 2 subset: parsing, macro expansion and lowering to a noisy
//! circuit with dephasing after every two-qubit gate.
//!
//! `include "qelib1.inc"` is satisfied by a built-in gate table plus the
//! composite gates of the standard header as macros; the file system is
//! never consulted. Rotation angles follow OpenQASM conventions
//! (`rz(λ) = exp(-iλZ/2)`), so `rz(λ)` lowers to [`Gate::Rz`] with half the
//! angle. `rx`, `ry`, `u2`, `u3` and `u` are lowered through `rz`, `h`, `s`
//! and `sdg` up to global phase.

use std::collections::HashMap;

use crate::circuit::{Circuit, Gate, Layer};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Qasm {
        line,
        column,
        message: message.into(),
    })
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
        let c = chars[*i];
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col);
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col);
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col);
            advance(&mut i, &mut line, &mut col);
            loop {
                if i + 1 >= chars.len() {
                    return err(l0, c0, "unterminated block comment");
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    advance(&mut i, &mut line, &mut col);
                    advance(&mut i, &mut line, &mut col);
                    break;
                }
                advance(&mut i, &mut line, &mut col);
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col);
            }
            out.push(Token { tok: Tok::Ident(s), line: l0, col: c0 });
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-') && s.ends_with(['e', 'E']);
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    s.push(d);
                    advance(&mut i, &mut line, &mut col);
                } else {
                    break;
                }
            }
            match s.parse::<f64>() {
                Ok(v) => out.push(Token { tok: Tok::Num(v), line: l0, col: c0 }),
                Err(_) => return err(l0, c0, format!("malformed number `{s}`")),
            }
        } else if c == '"' {
            advance(&mut i, &mut line, &mut col);
            let mut s = String::new();
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\n' {
                    return err(l0, c0, "unterminated string");
                }
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col);
            }
            if i >= chars.len() {
                return err(l0, c0, "unterminated string");
            }
            advance(&mut i, &mut line, &mut col);
            out.push(Token { tok: Tok::Str(s), line: l0, col: c0 });
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                "->" => Some("->"),
                "==" => Some("=="),
                _ => None,
            };
            if let Some(s) = sym {
                advance(&mut i, &mut line, &mut col);
                advance(&mut i, &mut line, &mut col);
                out.push(Token { tok: Tok::Sym(s), line: l0, col: c0 });
                continue;
            }
            let s = match c {
                ';' => ";",
                ',' => ",",
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                '{' => "{",
                '}' => "}",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '/' => "/",
                '^' => "^",
                _ => return err(l0, c0, format!("unexpected character `{c}`")),
            };
            advance(&mut i, &mut line, &mut col);
            out.push(Token { tok: Tok::Sym(s), line: l0, col: c0 });
        }
    }
    Ok(out)
}

/// Angle expression inside a gate definition, with parameters unresolved.
#[derive(Clone, Debug)]
enum Expr {
    Num(f64),
    Param(usize),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(String, Box<Expr>),
}

impl Expr {
    fn eval(&self, args: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Param(i) => args[*i],
            Expr::Neg(e) => -e.eval(args),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(args), b.eval(args));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(args);
                match f.as_str() {
                    "sin" => v.sin(),
                    "cos" => v.cos(),
                    "tan" => v.tan(),
                    "exp" => v.exp(),
                    "ln" => v.ln(),
                    _ => v.sqrt(),
                }
            }
        }
    }
}

/// Macro body statement: gate name, parameter expressions, argument slots.
#[derive(Clone, Debug)]
struct BodyCall {
    name: String,
    params: Vec<Expr>,
    args: Vec<usize>,
    line: usize,
    col: usize,
}

#[derive(Clone, Debug)]
struct GateDef {
    n_params: usize,
    n_args: usize,
    body: Vec<BodyCall>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    /// Built-in gate after macro expansion; qubits are global indices.
    Gate {
        name: String,
        params: Vec<f64>,
        qubits: Vec<usize>,
        line: usize,
    },
    Barrier { qubits: Vec<usize> },
    Measure { qubit: usize, cbit: usize },
    Reset { qubit: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Register {
    pub name: String,
    pub size: usize,
    /// Global index of element 0.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QasmProgram {
    pub version: String,
    pub qregs: Vec<Register>,
    pub cregs: Vec<Register>,
    pub statements: Vec<Statement>,
}

impl QasmProgram {
    pub fn num_qubits(&self) -> usize {
        self.qregs.iter().map(|r| r.size).sum()
    }

    pub fn gate_count(&self) -> usize {
        self.statements
            .iter()
            .filter(|s| matches!(s, Statement::Gate { .. }))
            .count()
    }
}

/// Built-in gates: (parameters, qubits).
fn builtin(name: &str) -> Option<(usize, usize)> {
    Some(match name {
        "h" | "x" | "y" | "z" | "s" | "sdg" | "t" | "tdg" | "sx" | "sxdg" | "id" => (0, 1),
        "rz" | "u1" | "rx" | "ry" | "p" => (1, 1),
        "u2" => (2, 1),
        "u3" | "u" | "U" => (3, 1),
        "cx" | "CX" | "cz" | "swap" => (0, 2),
        _ => return None,
    })
}

/// Composite gates of the standard header, as macros over built-ins.
const QELIB_COMPOSITES: &str = "
gate cu1(lambda) a,b { u1(lambda/2) a; cx a,b; u1(-lambda/2) b; cx a,b; u1(lambda/2) b; }
gate cp(lambda) a,b { u1(lambda/2) a; cx a,b; u1(-lambda/2) b; cx a,b; u1(lambda/2) b; }
gate crz(lambda) a,b { rz(lambda/2) b; cx a,b; rz(-lambda/2) b; cx a,b; }
gate crx(lambda) a,b { u1(pi/2) b; cx a,b; u3(-lambda/2,0,0) b; cx a,b; u3(lambda/2,-pi/2,0) b; }
gate cry(lambda) a,b { ry(lambda/2) b; cx a,b; ry(-lambda/2) b; cx a,b; }
gate cu3(theta,phi,lambda) c,t { u1((lambda+phi)/2) c; u1((lambda-phi)/2) t; cx c,t; u3(-theta/2,0,-(phi+lambda)/2) t; cx c,t; u3(theta/2,phi,0) t; }
gate cy a,b { sdg b; cx a,b; s b; }
gate ch a,b { h b; sdg b; cx a,b; h b; t b; cx a,b; t b; h b; s b; x b; s a; }
gate ccx a,b,c { h c; cx b,c; tdg c; cx a,c; t c; cx b,c; tdg c; cx a,c; t b; t c; h c; cx a,b; t a; tdg b; cx a,b; }
gate cswap a,b,c { cx c,b; ccx a,b,c; cx c,b; }
gate rzz(theta) a,b { cx a,b; u1(theta) b; cx a,b; }
gate u0(gamma) q { id q; }
";

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    qregs: Vec<Register>,
    cregs: Vec<Register>,
    defs: HashMap<String, GateDef>,
    statements: Vec<Statement>,
}

/// An operand: one element or a whole register.
enum Operand {
    One(usize),
    All(usize, usize),
}

impl Parser {
    fn here(&self) -> (usize, usize) {
        match self.toks.get(self.pos).or(self.toks.last()) {
            Some(t) => (t.line, t.col),
            None => (1, 1),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Result<Token> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => {
                let (l, c) = self.here();
                err(l, c, "unexpected end of input")
            }
        }
    }

    fn expect(&mut self, sym: &'static str) -> Result<()> {
        let t = self.next()?;
        if t.tok == Tok::Sym(sym) {
            Ok(())
        } else {
            err(t.line, t.col, format!("expected `{sym}`, found {:?}", t.tok))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize)> {
        let t = self.next()?;
        match t.tok {
            Tok::Ident(s) => Ok((s, t.line, t.col)),
            other => err(t.line, t.col, format!("expected identifier, found {other:?}")),
        }
    }

    fn integer(&mut self) -> Result<usize> {
        let t = self.next()?;
        match t.tok {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
            other => err(t.line, t.col, format!("expected non-negative integer, found {other:?}")),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn expr(&mut self, params: &[String]) -> Result<Expr> {
        let mut lhs = self.term(params)?;
        while self.is_sym("+") || self.is_sym("-") {
            let op = if self.is_sym("+") { '+' } else { '-' };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term(params)?));
        }
        Ok(lhs)
    }

    fn term(&mut self, params: &[String]) -> Result<Expr> {
        let mut lhs = self.factor(params)?;
        while self.is_sym("*") || self.is_sym("/") {
            let op = if self.is_sym("*") { '*' } else { '/' };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.factor(params)?));
        }
        Ok(lhs)
    }

    fn factor(&mut self, params: &[String]) -> Result<Expr> {
        let base = self.unary(params)?;
        if self.is_sym("^") {
            self.pos += 1;
            let exp = self.factor(params)?;
            return Ok(Expr::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self, params: &[String]) -> Result<Expr> {
        if self.is_sym("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary(params)?)));
        }
        if self.is_sym("+") {
            self.pos += 1;
            return self.unary(params);
        }
        let t = self.next()?;
        match t.tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym("(") => {
                let e = self.expr(params)?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if let Some(i) = params.iter().position(|p| *p == name) {
                    return Ok(Expr::Param(i));
                }
                if ["sin", "cos", "tan", "exp", "ln", "sqrt"].contains(&name.as_str()) {
                    self.expect("(")?;
                    let e = self.expr(params)?;
                    self.expect(")")?;
                    return Ok(Expr::Call(name, Box::new(e)));
                }
                err(t.line, t.col, format!("unknown identifier `{name}` in expression"))
            }
            other => err(t.line, t.col, format!("unexpected {other:?} in expression")),
        }
    }

    fn operand(&mut self, cregs: bool) -> Result<Operand> {
        let (name, line, col) = self.ident()?;
        let regs = if cregs { &self.cregs } else { &self.qregs };
        let Some(reg) = regs.iter().find(|r| r.name == name).cloned() else {
            return err(line, col, format!("undeclared register `{name}`"));
        };
        if self.is_sym("[") {
            self.pos += 1;
            let (l, c) = self.here();
            let idx = self.integer()?;
            self.expect("]")?;
            if idx >= reg.size {
                return err(l, c, format!("index {idx} out of range for register `{name}[{}]`", reg.size));
            }
            Ok(Operand::One(reg.offset + idx))
        } else {
            Ok(Operand::All(reg.offset, reg.size))
        }
    }

    fn operand_list(&mut self) -> Result<Vec<Operand>> {
        let mut ops = vec![self.operand(false)?];
        while self.is_sym(",") {
            self.pos += 1;
            ops.push(self.operand(false)?);
        }
        Ok(ops)
    }

    /// Broadcasts whole-register operands element-wise.
    fn broadcast(ops: &[Operand], line: usize, col: usize) -> Result<Vec<Vec<usize>>> {
        let width = ops.iter().fold(None, |acc, o| match (acc, o) {
            (acc, Operand::One(_)) => acc,
            (None, Operand::All(_, s)) => Some(Ok(*s)),
            (Some(Ok(w)), Operand::All(_, s)) if w == *s => Some(Ok(w)),
            (_, Operand::All(..)) => Some(Err(())),
        });
        match width {
            None => Ok(vec![ops
                .iter()
                .map(|o| match o {
                    Operand::One(q) => *q,
                    Operand::All(..) => unreachable!(),
                })
                .collect()]),
            Some(Err(())) => err(line, col, "register operands of different sizes"),
            Some(Ok(w)) => Ok((0..w)
                .map(|k| {
                    ops.iter()
                        .map(|o| match o {
                            Operand::One(q) => *q,
                            Operand::All(off, _) => off + k,
                        })
                        .collect()
                })
                .collect()),
        }
    }

    fn emit(&mut self, name: &str, params: Vec<f64>, qubits: Vec<usize>, line: usize, col: usize, depth: usize) -> Result<()> {
        if depth > 64 {
            return err(line, col, "gate definitions nested too deeply");
        }
        for (a, q) in qubits.iter().enumerate() {
            if qubits[..a].contains(q) {
                return err(line, col, format!("gate `{name}` uses qubit {q} twice"));
            }
        }
        if let Some(def) = self.defs.get(name).cloned() {
            if params.len() != def.n_params || qubits.len() != def.n_args {
                return err(
                    line,
                    col,
                    format!(
                        "gate `{name}` takes {} parameter(s) and {} qubit(s), got {} and {}",
                        def.n_params,
                        def.n_args,
                        params.len(),
                        qubits.len()
                    ),
                );
            }
            for call in &def.body {
                let p: Vec<f64> = call.params.iter().map(|e| e.eval(&params)).collect();
                let q: Vec<usize> = call.args.iter().map(|&a| qubits[a]).collect();
                self.emit(&call.name, p, q, call.line, call.col, depth + 1)?;
            }
            return Ok(());
        }
        match builtin(name) {
            Some((np, nq)) if np == params.len() && nq == qubits.len() => {
                self.statements.push(Statement::Gate {
                    name: name.to_string(),
                    params,
                    qubits,
                    line,
                });
                Ok(())
            }
            Some((np, nq)) => err(
                line,
                col,
                format!(
                    "gate `{name}` takes {np} parameter(s) and {nq} qubit(s), got {} and {}",
                    params.len(),
                    qubits.len()
                ),
            ),
            None => err(line, col, format!("unknown gate `{name}`")),
        }
    }

    fn load_composites(&mut self) -> Result<()> {
        let mut sub = Parser {
            toks: lex(QELIB_COMPOSITES)?,
            pos: 0,
            qregs: Vec::new(),
            cregs: Vec::new(),
            defs: HashMap::new(),
            statements: Vec::new(),
        };
        while sub.pos < sub.toks.len() {
            sub.statement()?;
        }
        for (name, def) in sub.defs {
            self.defs.entry(name).or_insert(def);
        }
        Ok(())
    }

    fn gate_def(&mut self) -> Result<()> {
        let (name, line, col) = self.ident()?;
        if builtin(&name).is_some() || self.defs.contains_key(&name) {
            return err(line, col, format!("gate `{name}` already defined"));
        }
        let mut params = Vec::new();
        if self.is_sym("(") {
            self.pos += 1;
            if !self.is_sym(")") {
                params.push(self.ident()?.0);
                while self.is_sym(",") {
                    self.pos += 1;
                    params.push(self.ident()?.0);
                }
            }
            self.expect(")")?;
        }
        let mut args = vec![self.ident()?.0];
        while self.is_sym(",") {
            self.pos += 1;
            args.push(self.ident()?.0);
        }
        self.expect("{")?;
        let mut body = Vec::new();
        while !self.is_sym("}") {
            let (g, gl, gc) = self.ident()?;
            if g == "barrier" {
                while !self.is_sym(";") {
                    self.next()?;
                }
                self.pos += 1;
                continue;
            }
            let mut p = Vec::new();
            if self.is_sym("(") {
                self.pos += 1;
                if !self.is_sym(")") {
                    p.push(self.expr(&params)?);
                    while self.is_sym(",") {
                        self.pos += 1;
                        p.push(self.expr(&params)?);
                    }
                }
                self.expect(")")?;
            }
            let mut a = Vec::new();
            loop {
                let (arg, al, ac) = self.ident()?;
                match args.iter().position(|x| *x == arg) {
                    Some(i) => a.push(i),
                    None => return err(al, ac, format!("unknown gate argument `{arg}`")),
                }
                if self.is_sym(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            self.expect(";")?;
            body.push(BodyCall {
                name: g,
                params: p,
                args: a,
                line: gl,
                col: gc,
            });
        }
        self.expect("}")?;
        self.defs.insert(
            name,
            GateDef {
                n_params: params.len(),
                n_args: args.len(),
                body,
            },
        );
        Ok(())
    }

    fn register(&mut self, quantum: bool) -> Result<()> {
        let (name, line, col) = self.ident()?;
        self.expect("[")?;
        let size = self.integer()?;
        self.expect("]")?;
        self.expect(";")?;
        let regs = if quantum { &mut self.qregs } else { &mut self.cregs };
        if regs.iter().any(|r| r.name == name) {
            return err(line, col, format!("register `{name}` declared twice"));
        }
        let offset = regs.iter().map(|r| r.size).sum();
        regs.push(Register { name, size, offset });
        Ok(())
    }

    fn statement(&mut self) -> Result<()> {
        let (word, line, col) = self.ident()?;
        match word.as_str() {
            "include" => {
                let t = self.next()?;
                match t.tok {
                    Tok::Str(f) if f == "qelib1.inc" => self.load_composites()?,
                    Tok::Str(f) => return err(t.line, t.col, format!("cannot include `{f}`; only qelib1.inc is built in")),
                    other => return err(t.line, t.col, format!("expected file name, found {other:?}")),
                }
                self.expect(";")
            }
            "qreg" => self.register(true),
            "creg" => self.register(false),
            "gate" => self.gate_def(),
            "opaque" | "if" => err(line, col, format!("`{word}` is not supported")),
            "barrier" => {
                let ops = self.operand_list()?;
                self.expect(";")?;
                let qubits = Self::broadcast(&ops, line, col)?.concat();
                self.statements.push(Statement::Barrier { qubits });
                Ok(())
            }
            "measure" => {
                let q = self.operand(false)?;
                self.expect("->")?;
                let c = self.operand(true)?;
                self.expect(";")?;
                let pairs: Vec<(usize, usize)> = match (q, c) {
                    (Operand::One(a), Operand::One(b)) => vec![(a, b)],
                    (Operand::All(a, s), Operand::All(b, t)) if s == t => (0..s).map(|k| (a + k, b + k)).collect(),
                    _ => return err(line, col, "measure operands must match in size"),
                };
                for (qubit, cbit) in pairs {
                    self.statements.push(Statement::Measure { qubit, cbit });
                }
                Ok(())
            }
            "reset" => {
                let ops = vec![self.operand(false)?];
                self.expect(";")?;
                for q in Self::broadcast(&ops, line, col)?.concat() {
                    self.statements.push(Statement::Reset { qubit: q });
                }
                Ok(())
            }
            _ => {
                let mut params = Vec::new();
                if self.is_sym("(") {
                    self.pos += 1;
                    if !self.is_sym(")") {
                        params.push(self.expr(&[])?.eval(&[]));
                        while self.is_sym(",") {
                            self.pos += 1;
                            params.push(self.expr(&[])?.eval(&[]));
                        }
                    }
                    self.expect(")")?;
                }
                if builtin(&word).is_none() && !self.defs.contains_key(&word) {
                    return err(line, col, format!("unknown gate `{word}`"));
                }
                let ops = self.operand_list()?;
                self.expect(";")?;
                for qubits in Self::broadcast(&ops, line, col)? {
                    self.emit(&word, params.clone(), qubits, line, col, 0)?;
                }
                Ok(())
            }
        }
    }
}

pub fn parse(text: &str) -> Result<QasmProgram> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        qregs: Vec::new(),
        cregs: Vec::new(),
        defs: HashMap::new(),
        statements: Vec::new(),
    };
    let (l, c) = p.here();
    match p.ident() {
        Ok((h, _, _)) if h == "OPENQASM" => {}
        _ => return err(l, c, "missing `OPENQASM 2.0;` header"),
    }
    let t = p.next()?;
    let version = match t.tok {
        Tok::Num(2.0) => "2.0".to_string(),
        other => return err(t.line, t.col, format!("unsupported version {other:?}")),
    };
    p.expect(";")?;
    while p.pos < p.toks.len() {
        p.statement()?;
    }
    Ok(QasmProgram {
        version,
        qregs: p.qregs,
        cregs: p.cregs,
        statements: p.statements,
    })
}

/// Engine gates for one built-in call.
fn lower_gate(name: &str, params: &[f64], q: &[usize]) -> Vec<Gate> {
    use Gate::*;
    let a = q[0];
    let rz = |lambda: f64| Rz(a, lambda / 2.0);
    match name {
        "h" => vec![H(a)],
        "x" => vec![X(a)],
        "y" => vec![Y(a)],
        "z" => vec![Z(a)],
        "s" => vec![S(a)],
        "sdg" => vec![Sdg(a)],
        "t" => vec![T(a)],
        "tdg" => vec![Tdg(a)],
        "sx" => vec![SqrtX(a)],
        "sxdg" => vec![SqrtXdg(a)],
        "id" => vec![Rz(a, 0.0)],
        "rz" => vec![rz(params[0])],
        "u1" | "p" => vec![U1(a, params[0])],
        "rx" => vec![H(a), rz(params[0]), H(a)],
        "ry" => vec![Sdg(a), H(a), rz(params[0]), H(a), S(a)],
        "u2" => lower_u3(a, std::f64::consts::FRAC_PI_2, params[0], params[1]),
        "u3" | "u" | "U" => lower_u3(a, params[0], params[1], params[2]),
        "cx" | "CX" => vec![Cx(a, q[1])],
        "cz" => vec![Cz(a, q[1])],
        "swap" => vec![Swap(a, q[1])],
        _ => unreachable!("parser admits only built-in gates"),
    }
}

/// `U3(θ,φ,λ) ∝ RZ(φ) RY(θ) RZ(λ)`, in time order.
fn lower_u3(a: usize, theta: f64, phi: f64, lambda: f64) -> Vec<Gate> {
    use Gate::*;
    vec![
        Rz(a, lambda / 2.0),
        Sdg(a),
        H(a),
        Rz(a, theta / 2.0),
        H(a),
        S(a),
        Rz(a, phi / 2.0),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredGate {
    pub gate: Gate,
    pub clifford: bool,
    /// Source line of the statement that produced it.
    pub line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QasmNoiseSite {
    pub qubit: usize,
    /// Running count of two-qubit gates on this qubit (1-based).
    pub time: usize,
    /// Index into `gates` of the two-qubit gate it follows.
    pub after_gate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredCircuit {
    pub n: usize,
    pub gates: Vec<LoweredGate>,
    /// Final per-qubit two-qubit-gate counters.
    pub two_qubit_counts: Vec<usize>,
    pub noise_sites: Vec<QasmNoiseSite>,
    pub measurements: Vec<(usize, usize)>,
}

impl LoweredCircuit {
    pub fn is_clifford(&self) -> bool {
        self.gates.iter().all(|g| g.clifford)
    }

    /// Layered circuit: runs of single-qubit gates form noiseless layers and
    /// every two-qubit gate forms its own layer with both qubits noisy.
    pub fn to_circuit(&self) -> Result<Circuit> {
        let mut layers = Vec::new();
        let mut pending: Vec<Gate> = Vec::new();
        for g in &self.gates {
            if g.gate.is_two_qubit() {
                if !pending.is_empty() {
                    layers.push(Layer::new(std::mem::take(&mut pending), Vec::new()));
                }
                layers.push(Layer::new(vec![g.gate], g.gate.qubits()));
            } else {
                pending.push(g.gate);
            }
        }
        if !pending.is_empty() {
            layers.push(Layer::new(pending, Vec::new()));
        }
        Circuit::new(self.n, layers)
    }
}

pub fn lower(program: &QasmProgram) -> LoweredCircuit {
    let n = program.num_qubits();
    let mut gates = Vec::new();
    let mut counts = vec![0usize; n];
    let mut sites = Vec::new();
    let mut measurements = Vec::new();
    for s in &program.statements {
        match s {
            Statement::Gate {
                name,
                params,
                qubits,
                line,
            } => {
                for g in lower_gate(name, params, qubits) {
                    gates.push(LoweredGate {
                        gate: g,
                        clifford: g.is_clifford(),
                        line: *line,
                    });
                }
                if qubits.len() == 2 {
                    let after_gate = gates.len() - 1;
                    for &q in qubits {
                        counts[q] += 1;
                        sites.push(QasmNoiseSite {
                            qubit: q,
                            time: counts[q],
                            after_gate,
                        });
                    }
                }
            }
            Statement::Measure { qubit, cbit } => measurements.push((*qubit, *cbit)),
            Statement::Barrier { .. } | Statement::Reset { .. } => {}
        }
    }
    LoweredCircuit {
        n,
        gates,
        two_qubit_counts: counts,
        noise_sites: sites,
        measurements,
    }
}

/// Reads and lowers a QASM file.
pub fn load(path: &std::path::Path) -> Result<LoweredCircuit> {
    let text = std::fs::read_to_string(path)?;
    Ok(lower(&parse(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::unitary;
    use nalgebra::DMatrix;
    use num_complex::Complex64 as C64;

    fn prog(body: &str) -> Result<QasmProgram> {
        parse(&format!("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n{body}"))
    }

    #[test]
    fn single_cx() {
        let p = parse("OPENQASM 2.0; qreg q[2]; cx q[0],q[1];").unwrap();
        assert_eq!(p.gate_count(), 1);
        let l = lower(&p);
        assert_eq!(l.gates[0].gate, Gate::Cx(0, 1));
        assert_eq!(l.noise_sites.len(), 2);
    }

    #[test]
    fn undeclared_index_reports_position() {
        let e = prog("qreg q[2];\nh q[5];").unwrap_err();
        match e {
            Error::Qasm { line, column, .. } => assert_eq!((line, column), (4, 5)),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(prog("qreg q[2];\nh r[0];"), Err(Error::Qasm { line: 4, .. })));
        assert!(matches!(prog("qreg q[2];\nfoo q[0];"), Err(Error::Qasm { .. })));
        assert!(matches!(prog("qreg q[2];\ncx q[0];"), Err(Error::Qasm { .. })));
        assert!(matches!(prog("qreg q[2];\nh q[0] $"), Err(Error::Qasm { .. })));
    }

    #[test]
    fn per_qubit_clock() {
        let l = lower(&prog("qreg q[3];\ncx q[0],q[1];\ncx q[1],q[2];").unwrap());
        let s: Vec<(usize, usize)> = l.noise_sites.iter().map(|s| (s.qubit, s.time)).collect();
        assert_eq!(s, vec![(0, 1), (1, 1), (1, 2), (2, 1)]);
        let l = lower(&prog("qreg q[2];\nh q;\nt q[1];").unwrap());
        assert!(l.noise_sites.is_empty());
        assert_eq!(l.gates.len(), 3);
        let l = lower(&prog("qreg q[2];\ncx q[0],q[1];\ncx q[0],q[1];\ncx q[0],q[1];").unwrap());
        let t0: Vec<usize> = l.noise_sites.iter().filter(|s| s.qubit == 0).map(|s| s.time).collect();
        assert_eq!(t0, vec![1, 2, 3]);
    }

    #[test]
    fn macros_comments_and_measurements() {
        let p = prog(
            "// comment\nqreg a[1]; qreg b[2]; creg c[3];\n\
             gate bell x, y { h x; cx x, y; }\n\
             gate rot(t) x { rz(t/2) x; /* inline */ }\n\
             bell a[0], b[1];\nrot(pi) b;\nbarrier a, b[0];\nmeasure b -> c[1];",
        );
        assert!(p.is_err(), "size mismatch must be rejected");
        let p = prog(
            "qreg a[1]; qreg b[2]; creg c[2];\n\
             gate bell x, y { h x; cx x, y; }\n\
             gate rot(t) x { rz(t/2) x; }\n\
             bell a[0], b[1];\nrot(pi) b;\nbarrier a, b[0];\nmeasure b -> c;",
        )
        .unwrap();
        assert_eq!(p.num_qubits(), 3);
        assert_eq!(p.gate_count(), 4);
        let l = lower(&p);
        assert_eq!(l.gates[1].gate, Gate::Cx(0, 2));
        assert_eq!(l.gates[2].gate, Gate::Rz(1, std::f64::consts::PI / 4.0));
        assert_eq!(l.measurements, vec![(1, 0), (2, 1)]);
    }

    fn equal_up_to_phase(a: &DMatrix<C64>, b: &DMatrix<C64>) -> bool {
        let ip = (a.adjoint() * b).trace();
        let d = a.nrows() as f64;
        (ip.norm() - d).abs() < 1e-10
    }

    fn rz_std(t: f64) -> DMatrix<C64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::from_polar(1.0, -t / 2.0),
            C64::from_polar(1.0, t / 2.0),
        ]))
    }

    fn ry_std(t: f64) -> DMatrix<C64> {
        let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
        DMatrix::from_row_slice(2, 2, &[c.into(), (-s).into(), s.into(), c.into()])
    }

    #[test]
    fn rotations_match_openqasm_definitions() {
        let (t, p, l) = (0.7, -1.3, 2.1);
        let u = unitary(1, &lower_gate("u3", &[t, p, l], &[0])).unwrap();
        assert!(equal_up_to_phase(&u, &(rz_std(p) * ry_std(t) * rz_std(l))));
        let u = unitary(1, &lower_gate("ry", &[t], &[0])).unwrap();
        assert!(equal_up_to_phase(&u, &ry_std(t)));
        let u = unitary(1, &lower_gate("rz", &[t], &[0])).unwrap();
        assert!(equal_up_to_phase(&u, &rz_std(t)));
        let h = unitary(1, &[Gate::H(0)]).unwrap();
        let u = unitary(1, &lower_gate("rx", &[t], &[0])).unwrap();
        assert!(equal_up_to_phase(&u, &(&h * rz_std(t) * &h)));
    }

    /// Dense unitary of a program body on `n` qubits.
    fn program_unitary(n: usize, body: &str) -> DMatrix<C64> {
        let l = lower(&prog(&format!("qreg q[{n}];\n{body}")).unwrap());
        let gates: Vec<Gate> = l.gates.iter().map(|g| g.gate).collect();
        unitary(n, &gates).unwrap()
    }

    /// Basis permutation `col -> f(col)` times a phase `phase(col)`.
    fn monomial(n: usize, f: impl Fn(usize) -> usize, phase: impl Fn(usize) -> C64) -> DMatrix<C64> {
        let d = 1 << n;
        let mut m = DMatrix::zeros(d, d);
        for col in 0..d {
            m[(f(col), col)] = phase(col);
        }
        m
    }

    #[test]
    fn header_composites_match_their_definitions() {
        let one = |_| C64::new(1.0, 0.0);
        let bit = |b: usize, k: usize| (b >> k) & 1 == 1;
        let ccx = monomial(3, |b| if bit(b, 0) && bit(b, 1) { b ^ 4 } else { b }, one);
        assert!(equal_up_to_phase(&program_unitary(3, "ccx q[0],q[1],q[2];"), &ccx));
        let fredkin = monomial(
            3,
            |b| if bit(b, 0) && bit(b, 1) != bit(b, 2) { b ^ 6 } else { b },
            one,
        );
        assert!(equal_up_to_phase(&program_unitary(3, "cswap q[0],q[1],q[2];"), &fredkin));
        let lambda = 0.83;
        let cphase = monomial(2, |b| b, |b| if b == 3 { C64::from_polar(1.0, lambda) } else { C64::new(1.0, 0.0) });
        assert!(equal_up_to_phase(&program_unitary(2, "cu1(0.83) q[0],q[1];"), &cphase));
        assert!(equal_up_to_phase(&program_unitary(2, "cp(0.83) q[0],q[1];"), &cphase));
        let i = C64::new(0.0, 1.0);
        // controlled Y: target flips with phase i on |c=1,t=0> -> |1,1>
        let cy = monomial(
            2,
            |b| if bit(b, 0) { b ^ 2 } else { b },
            |b| match b {
                1 => i,
                3 => -i,
                _ => C64::new(1.0, 0.0),
            },
        );
        assert!(equal_up_to_phase(&program_unitary(2, "cy q[0],q[1];"), &cy));
        let zz = monomial(2, |b| b, |b| if bit(b, 0) != bit(b, 1) { C64::from_polar(1.0, lambda) } else { C64::new(1.0, 0.0) });
        assert!(equal_up_to_phase(&program_unitary(2, "rzz(0.83) q[0],q[1];"), &zz));
        // a file may define its own version of a header gate
        let own = parse("OPENQASM 2.0; gate ccx a,b,c { x a; } qreg q[3]; ccx q[0],q[1],q[2];").unwrap();
        assert_eq!(lower(&own).gates.len(), 1);
    }

    #[test]
    fn layered_circuit_places_noise_after_two_qubit_gates() {
        let l = lower(&prog("qreg q[3];\nh q[0];\nt q[1];\ncx q[0],q[1];\nswap q[1],q[2];\nh q[2];").unwrap());
        let c = l.to_circuit().unwrap();
        assert_eq!(c.num_layers(), 4);
        assert_eq!(c.layers()[1].noise, vec![0, 1]);
        assert_eq!(c.layers()[2].noise, vec![1, 2]);
        assert!(c.layers()[3].noise.is_empty());
        assert!(!l.is_clifford());
    }

    #[test]
    fn deterministic() {
        let text = "OPENQASM 2.0; qreg q[3]; h q; cx q[0],q[2]; rz(0.3) q[1];";
        assert_eq!(lower(&parse(text).unwrap()), lower(&parse(text).unwrap()));
    }
}
