//! Output constraints and their compilation into positivity predicates.
//!
//! A constraint bounds one output `y = h(x)` by time-varying bounds. A
//! funnel constraint `lower(t) < h(x) < upper(t)` yields two predicates
//! `h - lower` and `upper - h`; a one-sided constraint yields one. All
//! constraints hold at `(t, x)` exactly when every predicate is positive.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, differentiate, Env, EvalError, Expr, ParseError, Scope, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `lower(t) < h(x) < upper(t)`
    #[serde(rename = "funnel")]
    Funnel,
    /// `lower(t) < h(x)`
    #[serde(rename = "lbo")]
    LowerBounded,
    /// `h(x) < upper(t)`
    #[serde(rename = "ubo")]
    UpperBounded,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Funnel => "funnel",
            ConstraintKind::LowerBounded => "lbo",
            ConstraintKind::UpperBounded => "ubo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConstraintError {
    #[error("no constraints given")]
    Empty,
    #[error("constraint {index} ({kind}) requires a {side} bound")]
    MissingBound {
        index: usize,
        kind: ConstraintKind,
        side: Side,
    },
    #[error("constraint {index} ({kind}) must not have a {side} bound")]
    UnexpectedBound {
        index: usize,
        kind: ConstraintKind,
        side: Side,
    },
    #[error("constraint {index}: output map must depend on the state only")]
    OutputDependsOnTime { index: usize },
    #[error("constraint {index}: {side} bound must depend on time only")]
    BoundDependsOnState { index: usize, side: Side },
    #[error("constraint {index}: output map refers to x{symbol} but the state has dimension {dim}")]
    Dimension { index: usize, symbol: usize, dim: usize },
    #[error("constraint {index}: {side} bound {what} is not finite at t = {t}")]
    BoundNotFinite {
        index: usize,
        side: Side,
        what: &'static str,
        t: f64,
    },
    #[error("constraint {index}: {side} bound cannot be evaluated at t = {t}: {source}")]
    BoundEval {
        index: usize,
        side: Side,
        t: f64,
        source: EvalError,
    },
    #[error("constraint {index}: funnel width upper - lower = {gap} is not positive at t = {t}")]
    Separation { index: usize, gap: f64, t: f64 },
    #[error("constraint {index}: cannot parse {field}: {source}")]
    Parse {
        index: usize,
        field: &'static str,
        source: ParseError,
    },
}

/// Sampling grid on `[0, t_end]` used to certify bound properties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub t_end: f64,
    pub samples: usize,
}

impl Horizon {
    pub fn new(t_end: f64) -> Self {
        Horizon { t_end, samples: 2001 }
    }

    pub fn with_samples(t_end: f64, samples: usize) -> Self {
        Horizon {
            t_end,
            samples: samples.max(2),
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let last = (self.samples - 1) as f64;
        (0..self.samples).map(move |k| self.t_end * k as f64 / last)
    }
}

/// One output constraint as written by the user.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConstraint {
    pub kind: ConstraintKind,
    /// Output map `h(x)`.
    pub output: Expr,
    pub lower: Option<Expr>,
    pub upper: Option<Expr>,
}

impl OutputConstraint {
    pub fn funnel(output: Expr, lower: Expr, upper: Expr) -> Self {
        OutputConstraint {
            kind: ConstraintKind::Funnel,
            output,
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    pub fn lower_bounded(output: Expr, lower: Expr) -> Self {
        OutputConstraint {
            kind: ConstraintKind::LowerBounded,
            output,
            lower: Some(lower),
            upper: None,
        }
    }

    pub fn upper_bounded(output: Expr, upper: Expr) -> Self {
        OutputConstraint {
            kind: ConstraintKind::UpperBounded,
            output,
            lower: None,
            upper: Some(upper),
        }
    }

    /// Parses the output map against `x1..x{dim}` and the bounds against `t`.
    pub fn parse(
        kind: ConstraintKind,
        output: &str,
        lower: Option<&str>,
        upper: Option<&str>,
        dim: usize,
    ) -> Result<Self, ConstraintError> {
        let parse_field = |field: &'static str, text: &str, scope: Scope| {
            expr::parse(text, scope).map_err(|source| ConstraintError::Parse {
                index: 0,
                field,
                source,
            })
        };
        Ok(OutputConstraint {
            kind,
            output: parse_field("h", output, Scope::state(dim))?,
            lower: lower.map(|s| parse_field("lower", s, Scope::time())).transpose()?,
            upper: upper.map(|s| parse_field("upper", s, Scope::time())).transpose()?,
        })
    }

    fn bound(&self, side: Side) -> Option<&Expr> {
        match side {
            Side::Lower => self.lower.as_ref(),
            Side::Upper => self.upper.as_ref(),
        }
    }

    /// Kind-specific bound presence and symbol usage.
    pub fn check_shape(&self, index: usize, dim: usize) -> Result<(), ConstraintError> {
        let (need_lower, need_upper) = match self.kind {
            ConstraintKind::Funnel => (true, true),
            ConstraintKind::LowerBounded => (true, false),
            ConstraintKind::UpperBounded => (false, true),
        };
        for (side, needed) in [(Side::Lower, need_lower), (Side::Upper, need_upper)] {
            match (self.bound(side), needed) {
                (None, true) => {
                    return Err(ConstraintError::MissingBound {
                        index,
                        kind: self.kind,
                        side,
                    })
                }
                (Some(_), false) => {
                    return Err(ConstraintError::UnexpectedBound {
                        index,
                        kind: self.kind,
                        side,
                    })
                }
                (Some(b), true) if b.symbols().iter().any(|s| matches!(s, Symbol::State(_))) => {
                    return Err(ConstraintError::BoundDependsOnState { index, side })
                }
                _ => {}
            }
        }
        for sym in self.output.symbols() {
            match sym {
                Symbol::Time => return Err(ConstraintError::OutputDependsOnTime { index }),
                Symbol::State(i) if i >= dim => {
                    return Err(ConstraintError::Dimension {
                        index,
                        symbol: i + 1,
                        dim,
                    })
                }
                Symbol::State(_) => {}
            }
        }
        Ok(())
    }
}

/// Sampled certificate for one constraint's bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCertificate {
    /// Largest sampled `|bound|` over the present bounds.
    pub max_abs: f64,
    /// Largest sampled `|d bound / dt|` over the present bounds.
    pub max_abs_rate: f64,
    /// Sampled minimum of `upper - lower` for funnel constraints.
    pub separation: Option<f64>,
}

fn certify(index: usize, c: &OutputConstraint, horizon: &Horizon) -> Result<BoundCertificate, ConstraintError> {
    let mut cert = BoundCertificate {
        max_abs: 0.0,
        max_abs_rate: 0.0,
        separation: None,
    };
    let rates: Vec<(Side, &Expr, Expr)> = [Side::Lower, Side::Upper]
        .into_iter()
        .filter_map(|side| c.bound(side).map(|b| (side, b, differentiate(b, Symbol::Time))))
        .collect();
    for t in horizon.times() {
        let env = Env::time(t);
        let mut values = [None, None];
        for (side, bound, rate) in &rates {
            let eval = |e: &Expr| {
                e.eval(&env).map_err(|source| ConstraintError::BoundEval {
                    index,
                    side: *side,
                    t,
                    source,
                })
            };
            let v = eval(bound)?;
            let r = eval(rate)?;
            for (what, val) in [("value", v), ("derivative", r)] {
                if !val.is_finite() {
                    return Err(ConstraintError::BoundNotFinite {
                        index,
                        side: *side,
                        what,
                        t,
                    });
                }
            }
            cert.max_abs = cert.max_abs.max(v.abs());
            cert.max_abs_rate = cert.max_abs_rate.max(r.abs());
            values[*side as usize] = Some(v);
        }
        if let [Some(lo), Some(hi)] = values {
            let gap = hi - lo;
            if gap <= MIN_SEPARATION {
                return Err(ConstraintError::Separation { index, gap, t });
            }
            cert.separation = Some(cert.separation.map_or(gap, |s: f64| s.min(gap)));
        }
    }
    Ok(cert)
}

/// Smallest admissible sampled funnel width.
pub const MIN_SEPARATION: f64 = 1e-9;

/// A single positivity condition `psi(t, x) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub value: Expr,
    /// `d psi / d x_j` for each state component.
    pub gradient: Vec<Expr>,
    /// `d2 psi / dx_i dx_j`, row-major.
    pub hessian: Vec<Vec<Expr>>,
    pub time_derivative: Expr,
    /// Index of the source constraint in the caller's original list.
    pub source: usize,
    pub side: Side,
}

/// A constraint after ordering, with its derivative expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledConstraint {
    pub kind: ConstraintKind,
    pub source: usize,
    pub output: Expr,
    /// Row of the output Jacobian, `d h / d x_j`.
    pub jacobian: Vec<Expr>,
    /// `d2 h / dx_i dx_j`, row-major.
    pub hessian: Vec<Vec<Expr>>,
    pub lower: Option<Expr>,
    pub upper: Option<Expr>,
    pub lower_rate: Option<Expr>,
    pub upper_rate: Option<Expr>,
    pub certificate: BoundCertificate,
}

/// Number of constraints `m`, funnel constraints `p` and lower-bounded
/// one-sided constraints `q`. There are `m + p` predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

impl Counts {
    pub fn predicates(&self) -> usize {
        self.m + self.p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateSet {
    dim: usize,
    predicates: Vec<Predicate>,
    constraints: Vec<CompiledConstraint>,
    counts: Counts,
}

fn hessian_of(gradient: &[Expr], dim: usize) -> Vec<Vec<Expr>> {
    gradient
        .iter()
        .map(|g| (0..dim).map(|j| differentiate(g, Symbol::State(j))).collect())
        .collect()
}

impl PredicateSet {
    /// Orders constraints funnel first, then lower-bounded, then
    /// upper-bounded (stable within each class), validates their bounds on
    /// `horizon` and derives all predicate expressions.
    pub fn compile(constraints: &[OutputConstraint], dim: usize, horizon: &Horizon) -> Result<Self, ConstraintError> {
        if constraints.is_empty() {
            return Err(ConstraintError::Empty);
        }
        let mut certs = Vec::with_capacity(constraints.len());
        for (i, c) in constraints.iter().enumerate() {
            c.check_shape(i, dim)?;
            certs.push(certify(i, c, horizon)?);
        }
        let mut order: Vec<usize> = (0..constraints.len()).collect();
        order.sort_by_key(|&i| match constraints[i].kind {
            ConstraintKind::Funnel => 0,
            ConstraintKind::LowerBounded => 1,
            ConstraintKind::UpperBounded => 2,
        });

        let mut compiled = Vec::with_capacity(order.len());
        let mut predicates = Vec::with_capacity(2 * order.len());
        for &i in &order {
            let c = &constraints[i];
            let jacobian: Vec<Expr> = (0..dim).map(|j| differentiate(&c.output, Symbol::State(j))).collect();
            let rate = |b: &Option<Expr>| b.as_ref().map(|b| differentiate(b, Symbol::Time));
            for side in [Side::Lower, Side::Upper] {
                let Some(bound) = c.bound(side) else { continue };
                let value = match side {
                    Side::Lower => Expr::Binary(
                        expr::BinaryOp::Sub,
                        Box::new(c.output.clone()),
                        Box::new(bound.clone()),
                    ),
                    Side::Upper => Expr::Binary(
                        expr::BinaryOp::Sub,
                        Box::new(bound.clone()),
                        Box::new(c.output.clone()),
                    ),
                };
                let gradient: Vec<Expr> = (0..dim).map(|j| differentiate(&value, Symbol::State(j))).collect();
                predicates.push(Predicate {
                    hessian: hessian_of(&gradient, dim),
                    time_derivative: differentiate(&value, Symbol::Time),
                    gradient,
                    value,
                    source: i,
                    side,
                });
            }
            compiled.push(CompiledConstraint {
                kind: c.kind,
                source: i,
                output: c.output.clone(),
                hessian: hessian_of(&jacobian, dim),
                jacobian,
                lower_rate: rate(&c.lower),
                upper_rate: rate(&c.upper),
                lower: c.lower.clone(),
                upper: c.upper.clone(),
                certificate: certs[i],
            });
        }
        let count = |k| constraints.iter().filter(|c| c.kind == k).count();
        let counts = Counts {
            m: constraints.len(),
            p: count(ConstraintKind::Funnel),
            q: count(ConstraintKind::LowerBounded),
        };
        debug_assert_eq!(predicates.len(), counts.predicates());
        Ok(PredicateSet {
            dim,
            predicates,
            constraints: compiled,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    /// Constraints in predicate order.
    pub fn constraints(&self) -> &[CompiledConstraint] {
        &self.constraints
    }

    /// Predicate values at `(t, x)`; all positive iff every constraint holds.
    pub fn psi_values(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.len()];
        self.psi_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn psi_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(x.len(), self.dim);
        let env = Env::new(t, x);
        for (slot, p) in out.iter_mut().zip(&self.predicates) {
            *slot = p.value.eval(&env)?;
        }
        Ok(())
    }
}
