//! Small arithmetic expression language for coefficients in config files.
//!
//! Variables: `t`, `x1..xd` (`x` = `x1`), `w1..wm` (`w` = `w1`, the value
//! of the driving Wiener lattice at the current node), `level`, `node`,
//! and the state arguments `u`, `y1..yd` (`y` = `y1`), `z1..zm` (`z` = `z1`).
//! Constants: `pi`, plus any named parameters supplied by the caller.
//! Functions: `sin cos tan exp log sqrt abs sinh cosh tanh pos neg sign`,
//! `min(a, b, ...)`, `max(a, b, ...)`, `pow(a, b)`,
//! `ind(v, lo, hi)` (1 when `lo <= v <= hi`, else 0).
//! Operators: `+ - * / ^` with the usual precedence, `^` right-associative.

use std::collections::BTreeMap;
use std::fmt;

/// Error with a byte offset into the expression source.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    T,
    X(usize),
    W(usize),
    U,
    Y(usize),
    Z(usize),
    Level,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sinh,
    Cosh,
    Tanh,
    Pos,
    Neg,
    Sign,
    Min,
    Max,
    Pow,
    Ind,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "pos" => Func::Pos,
            "neg" => Func::Neg,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            "ind" => Func::Ind,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 1,
            Func::Pow => n == 2,
            Func::Ind => n == 3,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Arguments an expression is evaluated at.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExprArgs<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub w: &'a [f64],
    pub level: usize,
    pub node: usize,
    pub u: f64,
    pub y: &'a [f64],
    pub z: &'a [f64],
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
    uses_state: bool,
}

impl Expr {
    /// Parse `src` for spatial dimension `d` and noise dimension `m`.
    pub fn parse(
        src: &str,
        d: usize,
        m: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            d,
            m,
            params,
            uses_state: false,
            end: src.len(),
        };
        let root = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(ExprError {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind),
            });
        }
        Ok(Self {
            root,
            source: src.to_string(),
            uses_state: p.uses_state,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            root: Node::Num(c),
            source: c.to_string(),
            uses_state: false,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression reads `u`, `y*` or `z*`.
    pub fn uses_state(&self) -> bool {
        self.uses_state
    }

    /// `Some(c)` when the expression is a literal constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Num(c) => Some(c),
            _ => None,
        }
    }

    pub fn eval(&self, args: &ExprArgs) -> f64 {
        eval(&self.root, args)
    }
}

fn eval(n: &Node, a: &ExprArgs) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(v) => match *v {
            Var::T => a.t,
            Var::X(k) => a.x.get(k).copied().unwrap_or(0.0),
            Var::W(r) => a.w.get(r).copied().unwrap_or(0.0),
            Var::U => a.u,
            Var::Y(k) => a.y.get(k).copied().unwrap_or(0.0),
            Var::Z(r) => a.z.get(r).copied().unwrap_or(0.0),
            Var::Level => a.level as f64,
            Var::Node => a.node as f64,
        },
        Node::Neg(e) => -eval(e, a),
        Node::Bin(op, l, r) => {
            let (l, r) = (eval(l, a), eval(r, a));
            match op {
                '+' => l + r,
                '-' => l - r,
                '*' => l * r,
                '/' => l / r,
                _ => l.powf(r),
            }
        }
        Node::Call(f, args) => {
            let v0 = eval(&args[0], a);
            match f {
                Func::Sin => v0.sin(),
                Func::Cos => v0.cos(),
                Func::Tan => v0.tan(),
                Func::Exp => v0.exp(),
                Func::Log => v0.ln(),
                Func::Sqrt => v0.sqrt(),
                Func::Abs => v0.abs(),
                Func::Sinh => v0.sinh(),
                Func::Cosh => v0.cosh(),
                Func::Tanh => v0.tanh(),
                Func::Pos => v0.max(0.0),
                Func::Neg => (-v0).max(0.0),
                Func::Sign => {
                    if v0 > 0.0 {
                        1.0
                    } else if v0 < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Min => args[1..].iter().fold(v0, |m, e| m.min(eval(e, a))),
                Func::Max => args[1..].iter().fold(v0, |m, e| m.max(eval(e, a))),
                Func::Pow => v0.powf(eval(&args[1], a)),
                Func::Ind => {
                    let (lo, hi) = (eval(&args[1], a), eval(&args[2], a));
                    if v0 >= lo && v0 <= hi {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokKind::Op(c) => write!(f, "'{c}'"),
            TokKind::LParen => write!(f, "'('"),
            TokKind::RParen => write!(f, "')'"),
            TokKind::Comma => write!(f, "','"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token { kind: TokKind::Num(v), offset: start });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ',' => TokKind::Comma,
            _ => {
                return Err(ExprError {
                    offset: start,
                    message: format!("unexpected character '{c}'"),
                })
            }
        };
        out.push(Token { kind, offset: start });
        i += c.len_utf8();
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    d: usize,
    m: usize,
    params: &'a BTreeMap<String, f64>,
    uses_state: bool,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.offset).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(TokKind::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(TokKind::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(TokKind::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(TokKind::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(TokKind::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return self.err("unexpected end of expression");
        };
        match tok.kind {
            TokKind::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            TokKind::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&TokKind::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            TokKind::Ident(name) => {
                self.pos += 1;
                if self.peek() == Some(&TokKind::LParen) {
                    let Some(func) = Func::lookup(&name) else {
                        return Err(ExprError {
                            offset: tok.offset,
                            message: format!("unknown function '{name}'"),
                        });
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&TokKind::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    if self.peek() != Some(&TokKind::RParen) {
                        return self.err("expected ',' or ')'");
                    }
                    self.pos += 1;
                    if !func.arity_ok(args.len()) {
                        return Err(ExprError {
                            offset: tok.offset,
                            message: format!("wrong number of arguments ({}) for '{name}'", args.len()),
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                self.variable(&name, tok.offset)
            }
            other => self.err(format!("unexpected {other}")),
        }
    }

    fn variable(&mut self, name: &str, offset: usize) -> Result<Node, ExprError> {
        let indexed = |prefix: &str, limit: usize| -> Option<Result<usize, ExprError>> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() {
                return Some(Ok(0));
            }
            let k: usize = rest.parse().ok()?;
            if k == 0 || k > limit {
                return Some(Err(ExprError {
                    offset,
                    message: format!("'{name}' out of range (dimension {limit})"),
                }));
            }
            Some(Ok(k - 1))
        };
        let var = match name {
            "t" => Var::T,
            "u" => {
                self.uses_state = true;
                Var::U
            }
            "level" => Var::Level,
            "node" => Var::Node,
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            _ => {
                if let Some(&c) = self.params.get(name) {
                    return Ok(Node::Num(c));
                }
                if let Some(k) = indexed("x", self.d) {
                    Var::X(k?)
                } else if let Some(r) = indexed("w", self.m) {
                    Var::W(r?)
                } else if let Some(k) = indexed("y", self.d) {
                    self.uses_state = true;
                    Var::Y(k?)
                } else if let Some(r) = indexed("z", self.m) {
                    self.uses_state = true;
                    Var::Z(r?)
                } else {
                    return Err(ExprError {
                        offset,
                        message: format!("unknown variable '{name}'"),
                    });
                }
            }
        };
        Ok(Node::Var(var))
    }
}
