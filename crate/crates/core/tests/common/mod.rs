#![allow(dead_code)]

use alphafunnel::expr::{BinaryOp, Expr, Symbol, UnaryOp};
use rand::Rng;

/// Random expression over `x1..x{dim}` and `t` with depth at most `depth`.
/// Constants are non-negative so printing never needs a signed literal.
pub fn random_expr<R: Rng>(rng: &mut R, dim: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..3) {
            0 => Expr::Const((rng.random_range(0.0..3.0f64) * 100.0).round() / 100.0),
            1 => Expr::Var(Symbol::Time),
            _ => Expr::Var(Symbol::State(rng.random_range(0..dim))),
        };
    }
    let sub = |rng: &mut R| Box::new(random_expr(rng, dim, depth - 1));
    match rng.random_range(0..12) {
        0 => Expr::Unary(UnaryOp::Neg, sub(rng)),
        1 => Expr::Unary(UnaryOp::Sin, sub(rng)),
        2 => Expr::Unary(UnaryOp::Cos, sub(rng)),
        3 => Expr::Unary(UnaryOp::Exp, sub(rng)),
        4 => Expr::Unary(UnaryOp::Ln, sub(rng)),
        5 => Expr::Unary(UnaryOp::Sqrt, sub(rng)),
        6 => Expr::Unary(UnaryOp::Tanh, sub(rng)),
        7 => Expr::Binary(BinaryOp::Add, sub(rng), sub(rng)),
        8 => Expr::Binary(BinaryOp::Sub, sub(rng), sub(rng)),
        9 => Expr::Binary(BinaryOp::Mul, sub(rng), sub(rng)),
        10 => Expr::Binary(BinaryOp::Div, sub(rng), sub(rng)),
        _ => Expr::Pow(sub(rng), rng.random_range(0..4)),
    }
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(f64) -> Option<f64>, x: f64, h: f64) -> Option<f64> {
    Some((f(x + h)? - f(x - h)?) / (2.0 * h))
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

use std::path::{Path, PathBuf};
use std::sync::Arc;

use alphafunnel::alpha::SmoothMetric;
use alphafunnel::cli::scenario::Scenario;
use alphafunnel::constraints::{ConstraintKind, Horizon, OutputConstraint, PredicateSet};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn shipped(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// `(kind, h, lower, upper)` rows compiled over a 20 s horizon.
pub fn metric_from(rows: &[(ConstraintKind, &str, Option<&str>, Option<&str>)], dim: usize, nu: f64) -> SmoothMetric {
    let cs: Vec<OutputConstraint> = rows
        .iter()
        .map(|(k, h, lo, hi)| OutputConstraint::parse(*k, h, *lo, *hi, dim).unwrap())
        .collect();
    let set = PredicateSet::compile(&cs, dim, &Horizon::new(20.0)).unwrap();
    SmoothMetric::new(Arc::new(set), nu).unwrap()
}

/// The three coupled time-varying constraints of the shipped reference case.
pub const COUPLED: [(ConstraintKind, &str, Option<&str>, Option<&str>); 3] = [
    (ConstraintKind::Funnel, "x1", Some("-2 + 2.5*sin(0.3*t)"), Some("3*sin(0.3*t)")),
    (ConstraintKind::LowerBounded, "x2 - x1", Some("-cos(0.3*t)"), None),
    (ConstraintKind::UpperBounded, "0.3*x1^2 + x2", None, Some("3.5 - cos(0.3*t)")),
];
