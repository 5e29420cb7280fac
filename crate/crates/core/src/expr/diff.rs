//! Symbolic differentiation with constant folding and identity elimination.

use super::{BinaryOp, Expr, Symbol, UnaryOp};

/// Exact derivative of `e` with respect to `var`. Operands copied into the
/// result are simplified first.
pub fn differentiate(e: &Expr, var: Symbol) -> Expr {
    derivative(&simplify(e), var)
}

fn derivative(e: &Expr, var: Symbol) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(s) => Expr::Const(if *s == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = derivative(a, var);
            if da.as_const() == Some(0.0) {
                return Expr::Const(0.0);
            }
            let a = a.as_ref().clone();
            let outer = match op {
                UnaryOp::Neg => return neg(da),
                UnaryOp::Sin => unary(UnaryOp::Cos, a),
                UnaryOp::Cos => neg(unary(UnaryOp::Sin, a)),
                UnaryOp::Exp => unary(UnaryOp::Exp, a),
                UnaryOp::Ln => return div(da, a),
                UnaryOp::Sqrt => return div(da, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a))),
                UnaryOp::Tanh => sub(Expr::Const(1.0), pow(unary(UnaryOp::Tanh, a), 2)),
            };
            mul(outer, da)
        }
        Expr::Binary(op, a, b) => {
            let da = derivative(a, var);
            let db = derivative(b, var);
            let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b), mul(a, db)),
                BinaryOp::Div => {
                    let numerator = sub(mul(da, b.clone()), mul(a, db));
                    div(numerator, pow(b, 2))
                }
            }
        }
        Expr::Pow(a, k) => {
            if *k == 0 {
                return Expr::Const(0.0);
            }
            if let Expr::Pow(..) = a.as_ref() {
                let collapsed = pow(a.as_ref().clone(), *k);
                if collapsed != *e {
                    return derivative(&collapsed, var);
                }
            }
            let da = derivative(a, var);
            mul(mul(Expr::Const(*k as f64), pow(a.as_ref().clone(), k - 1)), da)
        }
    }
}

/// Rebuilds `e` bottom-up through the folding constructors. Folds that
/// would produce a non-finite constant are left unevaluated.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => unary(*op, simplify(a)),
        Expr::Binary(op, a, b) => {
            let (a, b) = (simplify(a), simplify(b));
            match op {
                BinaryOp::Add => add(a, b),
                BinaryOp::Sub => sub(a, b),
                BinaryOp::Mul => mul(a, b),
                BinaryOp::Div => div(a, b),
            }
        }
        Expr::Pow(a, k) => pow(simplify(a), *k),
    }
}

pub(crate) fn unary(op: UnaryOp, a: Expr) -> Expr {
    match (op, &a) {
        (UnaryOp::Neg, _) => neg(a),
        (_, Expr::Const(c)) => {
            let v = match op {
                UnaryOp::Sin => c.sin(),
                UnaryOp::Cos => c.cos(),
                UnaryOp::Exp => c.exp(),
                UnaryOp::Tanh => c.tanh(),
                UnaryOp::Ln if *c > 0.0 => c.ln(),
                UnaryOp::Sqrt if *c >= 0.0 => c.sqrt(),
                // keep domain errors visible at evaluation time
                _ => return Expr::Unary(op, Box::new(a)),
            };
            if !v.is_finite() {
                return Expr::Unary(op, Box::new(a));
            }
            Expr::Const(v)
        }
        _ => Expr::Unary(op, Box::new(a)),
    }
}

pub(crate) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        Expr::Binary(BinaryOp::Mul, l, r) if l.is_const() => mul(Expr::Const(-l.as_const().unwrap_or(1.0)), *r),
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if (x + y).is_finite() => Expr::Const(x + y),
        (Some(0.0), None) => b,
        (None, Some(0.0)) => a,
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if (x - y).is_finite() => Expr::Const(x - y),
        (Some(0.0), None) => neg(b),
        (None, Some(0.0)) => a,
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if (x * y).is_finite() => Expr::Const(x * y),
        (Some(_), Some(_)) => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(1.0), None) => b,
        (None, Some(1.0)) => a,
        (Some(-1.0), None) => neg(b),
        (None, Some(-1.0)) => neg(a),
        // constants gather on the left
        (None, Some(_)) => mul(b, a),
        (Some(x), None) => match b {
            Expr::Binary(BinaryOp::Mul, inner_l, inner_r)
                if inner_l.as_const().is_some_and(|y| (x * y).is_finite()) =>
            {
                let y = inner_l.as_const().unwrap_or(1.0);
                mul(Expr::Const(x * y), *inner_r)
            }
            Expr::Unary(UnaryOp::Neg, inner) => mul(Expr::Const(-x), *inner),
            b => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
        },
        (None, None) => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if (x / y).is_finite() => Expr::Const(x / y),
        (Some(0.0), None) => Expr::Const(0.0),
        (None, Some(1.0)) => a,
        _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

pub(crate) fn pow(a: Expr, k: u32) -> Expr {
    match (a, k) {
        (_, 0) => Expr::Const(1.0),
        (a, 1) => a,
        (Expr::Const(c), k) if super::powi(c, k).is_finite() => Expr::Const(super::powi(c, k)),
        (Expr::Pow(inner, j), k) => match j.checked_mul(k) {
            Some(jk) => pow(*inner, jk),
            None => Expr::Pow(Box::new(Expr::Pow(inner, j)), k),
        },
        (a, k) => Expr::Pow(Box::new(a), k),
    }
}
