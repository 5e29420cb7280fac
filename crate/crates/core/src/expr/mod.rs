//! Closed-form scalar expressions over the state `x1..xn` and time `t`.
//!
//! Expressions are parsed once, are immutable afterwards, and can be
//! evaluated from any number of threads. The grammar is deliberately small:
//! `+ - * /`, literal non-negative integer powers `^`, unary minus,
//! parentheses, the functions `sin cos exp ln sqrt tanh` and the constants
//! `pi` and `e`. Real powers are written `exp(q*ln(b))`.

mod diff;
mod lexer;
mod parser;

use std::fmt;

use thiserror::Error;

pub use diff::{differentiate, simplify};
pub use parser::{parse, ParseError};

/// A free symbol of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    /// State component, zero based (`x1` is `State(0)`).
    State(usize),
    Time,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::State(i) => write!(f, "x{}", i + 1),
            Symbol::Time => f.write_str("t"),
        }
    }
}

/// The set of identifiers an expression may refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    dim: usize,
    time: bool,
}

impl Scope {
    /// `x1..xn` and `t`.
    pub fn new(dim: usize) -> Self {
        Scope { dim, time: true }
    }

    /// `x1..xn` only; used for output maps and plant vector fields.
    pub fn state(dim: usize) -> Self {
        Scope { dim, time: false }
    }

    /// `t` only; used for bounds and disturbances.
    pub fn time() -> Self {
        Scope { dim: 0, time: true }
    }

    /// No free symbols at all.
    pub fn constant() -> Self {
        Scope { dim: 0, time: false }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolve(&self, name: &str) -> Option<Symbol> {
        if name == "t" {
            return self.time.then_some(Symbol::Time);
        }
        let index = name.strip_prefix('x')?;
        if index.starts_with('0') || index.is_empty() {
            return None;
        }
        let i: usize = index.parse().ok()?;
        (i >= 1 && i <= self.dim).then_some(Symbol::State(i - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
}

impl UnaryOp {
    pub fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Ln => Some("ln"),
            UnaryOp::Sqrt => Some("sqrt"),
            UnaryOp::Tanh => Some("tanh"),
        }
    }

    pub fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            "sqrt" => UnaryOp::Sqrt,
            "tanh" => UnaryOp::Tanh,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Symbol),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// Values for the free symbols of an expression.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64]) -> Self {
        Env { t, x }
    }

    pub fn time(t: f64) -> Env<'static> {
        Env { t, x: &[] }
    }

    pub fn state(x: &'a [f64]) -> Self {
        Env { t: 0.0, x }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("{op} domain error at `{node}`: argument {arg}")]
    Domain {
        op: &'static str,
        node: String,
        arg: f64,
    },
    #[error("symbol {0} is not bound")]
    Unbound(Symbol),
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var(symbol: Symbol) -> Self {
        Expr::Var(symbol)
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Number of nodes in the tree.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Whether `symbol` occurs anywhere in the tree.
    pub fn depends_on(&self, symbol: Symbol) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(s) => *s == symbol,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.depends_on(symbol),
            Expr::Binary(_, a, b) => a.depends_on(symbol) || b.depends_on(symbol),
        }
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(Symbol::Time) => Ok(env.t),
            Expr::Var(s @ Symbol::State(i)) => env.x.get(*i).copied().ok_or(EvalError::Unbound(*s)),
            Expr::Unary(op, a) => {
                let v = a.eval(env)?;
                match op {
                    UnaryOp::Neg => Ok(-v),
                    UnaryOp::Sin => Ok(v.sin()),
                    UnaryOp::Cos => Ok(v.cos()),
                    UnaryOp::Exp => Ok(v.exp()),
                    UnaryOp::Tanh => Ok(v.tanh()),
                    UnaryOp::Ln if v > 0.0 => Ok(v.ln()),
                    UnaryOp::Sqrt if v >= 0.0 => Ok(v.sqrt()),
                    UnaryOp::Ln | UnaryOp::Sqrt => Err(EvalError::Domain {
                        op: op.function_name().unwrap_or("?"),
                        node: self.to_string(),
                        arg: v,
                    }),
                }
            }
            Expr::Binary(op, a, b) => {
                let l = a.eval(env)?;
                let r = b.eval(env)?;
                match op {
                    BinaryOp::Add => Ok(l + r),
                    BinaryOp::Sub => Ok(l - r),
                    BinaryOp::Mul => Ok(l * r),
                    BinaryOp::Div if r != 0.0 => Ok(l / r),
                    BinaryOp::Div => Err(EvalError::Domain {
                        op: "division",
                        node: self.to_string(),
                        arg: r,
                    }),
                }
            }
            Expr::Pow(a, k) => Ok(powi(a.eval(env)?, *k)),
        }
    }

    /// Evaluates with bindings given by name, e.g. `[("x1", 2.0), ("t", 0.0)]`.
    pub fn eval_named(&self, bindings: &[(&str, f64)]) -> Result<f64, EvalError> {
        let scope = Scope::new(usize::MAX);
        let mut t = None;
        let mut x: Vec<Option<f64>> = Vec::new();
        for (name, value) in bindings {
            match scope.resolve(name) {
                Some(Symbol::Time) => t = Some(*value),
                Some(Symbol::State(i)) => {
                    if x.len() <= i {
                        x.resize(i + 1, None);
                    }
                    x[i] = Some(*value);
                }
                None => {}
            }
        }
        for sym in self.symbols() {
            let bound = match sym {
                Symbol::Time => t.is_some(),
                Symbol::State(i) => x.get(i).copied().flatten().is_some(),
            };
            if !bound {
                return Err(EvalError::Unbound(sym));
            }
        }
        let dense: Vec<f64> = x.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        self.eval(&Env::new(t.unwrap_or(f64::NAN), &dense))
    }

    /// Sorted, deduplicated free symbols.
    pub fn symbols(&self) -> Vec<Symbol> {
        fn walk(e: &Expr, out: &mut Vec<Symbol>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(s) => out.push(*s),
                Expr::Unary(_, a) | Expr::Pow(a, _) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            // parenthesized wherever it is a child, so it never reparses as a negation
            Expr::Const(c) if c.is_sign_negative() => 0,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn powi(base: f64, k: u32) -> f64 {
    match i32::try_from(k) {
        Ok(k) => base.powi(k),
        Err(_) => base.powf(k as f64),
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // Debug keeps the shortest round-trip representation and switches to
    // exponent notation for very large or small magnitudes.
    let s = format!("{c:?}");
    f.write_str(s.strip_suffix(".0").unwrap_or(&s))
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(s) => write!(f, "{s}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.function_name().unwrap_or("?")),
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                write_child(f, a, a.precedence() < p)?;
                match op {
                    BinaryOp::Add | BinaryOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => write!(f, "{}", op.symbol())?,
                }
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(a, k) => {
                // Chained powers parse left-associatively, so a power base
                // needs no parentheses.
                write_child(f, a, a.precedence() < 4)?;
                write!(f, "^{k}")
            }
        }
    }
}
