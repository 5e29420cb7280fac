mod common;

use alphafunnel::expr::{differentiate, parse, simplify, Env, Expr, Scope, Symbol};
use common::{central_difference, random_expr, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 3;

fn eval_at(e: &Expr, t: f64, x: &[f64]) -> Option<f64> {
    e.eval(&Env::new(t, x)).ok().filter(|v| v.is_finite())
}

/// Evaluates `e` along one coordinate, everything else held at (t, x).
fn along(e: &Expr, var: Symbol, t: f64, x: &[f64], s: f64) -> Option<f64> {
    match var {
        Symbol::Time => eval_at(e, s, x),
        Symbol::State(j) => {
            let mut y = x.to_vec();
            y[j] = s;
            eval_at(e, t, &y)
        }
    }
}

/// A point is usable when the function is finite and well conditioned
/// nearby: two coarser difference quotients agree, so the step-1e-6
/// central difference is itself trustworthy.
fn well_conditioned(e: &Expr, var: Symbol, t: f64, x: &[f64], s: f64) -> bool {
    let f = |v: f64| along(e, var, t, x, v).filter(|y| y.abs() < 1e4);
    let (Some(a), Some(b)) = (central_difference(f, s, 1e-3), central_difference(f, s, 1e-4)) else {
        return false;
    };
    (a - b).abs() <= 1e-6 * a.abs().max(1.0) && f(s + 1e-6).is_some() && f(s - 1e-6).is_some()
}

#[test]
fn derivative_matches_central_differences_on_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    let mut trees = 0;
    while trees < 1000 {
        let e = random_expr(&mut rng, DIM, 6);
        trees += 1;
        let var = if rng.random_bool(0.25) {
            Symbol::Time
        } else {
            Symbol::State(rng.random_range(0..DIM))
        };
        let de = differentiate(&e, var);
        let t = rng.random_range(-3.0..3.0);
        let x: Vec<f64> = (0..DIM).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = match var {
            Symbol::Time => t,
            Symbol::State(j) => x[j],
        };
        if !well_conditioned(&e, var, t, &x, s) {
            continue;
        }
        let fd = central_difference(|v| along(&e, var, t, &x, v), s, 1e-6).unwrap();
        let Some(exact) = eval_at(&de, t, &x) else {
            panic!("derivative of {e} is not finite at t={t}, x={x:?}");
        };
        assert!(
            rel_err(exact, fd) < 1e-5,
            "d/d{var} of {e} = {de}: exact {exact}, fd {fd}"
        );
        checked += 1;
    }
    // most random trees are well-behaved at a random point
    assert!(checked > 500, "only {checked} of {trees} trees were checkable");
}

#[test]
fn derivative_matches_fd_on_corpus() {
    let corpus = [
        "0.3*x1^2 + x2",
        "x2 - x1",
        "-x1^2*x2 - x1^3 - exp(-x1^2-x2^2)",
        "0.1*x2^2 + x1^2 + sin(x1*x2)",
        "sqrt(x1^2 + x2^2 + x3^2 + 1)",
        "tanh(x1) / (1 + x2^2)",
        "ln(1 + exp(x3 - x1))",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for text in corpus {
        let e = parse(text, Scope::state(DIM)).unwrap();
        for j in 0..DIM {
            let de = differentiate(&e, Symbol::State(j));
            for _ in 0..100 {
                let x: Vec<f64> = (0..DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
                let fd = central_difference(|v| along(&e, Symbol::State(j), 0.0, &x, v), x[j], 1e-6).unwrap();
                let exact = eval_at(&de, 0.0, &x).unwrap();
                assert!(rel_err(exact, fd) < 1e-6, "{text} d/dx{}: {exact} vs {fd}", j + 1);
            }
        }
    }
}

#[test]
fn corpus_round_trips_through_printer() {
    let corpus = [
        "x1",
        "0.3*x1^2 + x2",
        "1.5*sin(2*t+pi/3)+3*cos(3*t+3*pi/7)",
        "0.5*sin(3*t)*exp(cos(2*t+pi/3)+1)",
        "-x1^2*x2 - x1^3 - exp(-x1^2-x2^2)",
        "x2^2 + 1",
        "3.5 - cos(0.3*t)",
        "-2 + 2.5*sin(0.3*t)",
        "x1 - (x2 - t)",
        "x1/(x2/t)",
        "--x1",
        "1e-12*x1 + 6.02e23",
    ];
    let scope = Scope::new(2);
    for text in corpus {
        let once = parse(text, scope).unwrap();
        let twice = parse(&once.to_string(), scope).unwrap();
        assert_eq!(once, twice, "{text} printed as {once}");
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    any::<u64>().prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_expr(&mut rng, DIM, 6)
    })
}

proptest! {
    #[test]
    fn printed_trees_reparse_identically(e in arb_expr()) {
        let printed = e.to_string();
        let back = parse(&printed, Scope::new(DIM)).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn differentiation_is_linear(a in arb_expr(), b in arb_expr(), j in 0..DIM) {
        let var = Symbol::State(j);
        let sum = Expr::Binary(alphafunnel::expr::BinaryOp::Add, Box::new(a.clone()), Box::new(b.clone()));
        let lhs = simplify(&differentiate(&sum, var));
        let rhs = simplify(&Expr::Binary(
            alphafunnel::expr::BinaryOp::Add,
            Box::new(differentiate(&a, var)),
            Box::new(differentiate(&b, var)),
        ));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn derivative_printing_round_trips_in_value(e in arb_expr(), j in 0..DIM) {
        // simplified derivatives may contain signed literals; the reparsed
        // tree can differ structurally but never in value
        let de = differentiate(&e, Symbol::State(j));
        let back = parse(&de.to_string(), Scope::new(DIM)).unwrap();
        let x = [0.3, -0.7, 1.1];
        let env = Env::new(0.4, &x);
        match (de.eval(&env), back.eval(&env)) {
            (Ok(u), Ok(v)) if u.is_finite() => prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0)),
            _ => {}
        }
    }
}
