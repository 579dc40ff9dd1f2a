//! Reverse-mode gradients of expression trees against finite differences.

use flowscore::grad::{evaluate, value_and_gradient, Expr, ParameterStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_IN: usize = 4;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn one_plus_square(e: Expr) -> Expr {
    Expr::Add(b(Expr::scalar(1.0)), b(Expr::Square(b(e))))
}

/// Random scalar expression with exactly `budget` nodes or close to it.
/// Log and Div only see arguments bounded away from zero and Exp only sees
/// bounded arguments, so every tree is finite everywhere.
fn random_expr(rng: &mut ChaCha8Rng, budget: usize) -> Expr {
    if budget <= 1 {
        return match rng.random_range(0..3) {
            0 => Expr::input(rng.random_range(0..N_IN)),
            1 => Expr::param(rng.random_range(0..3)),
            _ => Expr::scalar(rng.random_range(-2.0..2.0)),
        };
    }
    if budget >= 8 && rng.random_bool(0.1) {
        // affine map of all inputs, then dotted with itself
        let a = Expr::AffineApply { x: b(Expr::inputs(0, N_IN)), weight: 3, bias: 3 + 2 * N_IN, rows: 2, cols: N_IN };
        let rest = random_expr(rng, budget - 8);
        let d = Expr::Dot(b(a.clone()), b(Expr::Tanh(b(a))));
        return Expr::Mul(b(d), b(Expr::Tanh(b(rest))));
    }
    let op = if budget < 3 { rng.random_range(4..9) } else { rng.random_range(0..9) };
    match op {
        0..=3 => {
            let left = rng.random_range(1..budget - 1);
            let (x, y) = (random_expr(rng, left), random_expr(rng, budget - 1 - left));
            match op {
                0 => Expr::Add(b(x), b(y)),
                1 => Expr::Sub(b(x), b(y)),
                2 => Expr::Mul(b(x), b(y)),
                _ => Expr::Div(b(x), b(one_plus_square(y))),
            }
        }
        4 => Expr::Neg(b(random_expr(rng, budget - 1))),
        5 => Expr::Exp(b(Expr::Tanh(b(random_expr(rng, budget.saturating_sub(2).max(1)))))),
        6 => Expr::Log(b(one_plus_square(random_expr(rng, budget.saturating_sub(3).max(1))))),
        7 => Expr::Tanh(b(random_expr(rng, budget - 1))),
        _ => Expr::Square(b(Expr::Tanh(b(random_expr(rng, budget.saturating_sub(2).max(1)))))),
    }
}

fn store(rng: &mut ChaCha8Rng) -> ParameterStore {
    let mut p = ParameterStore::new();
    let v: Vec<f64> = (0..3 + 2 * N_IN + 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.allocate("theta", &v);
    p
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-6)
}

/// Fourth-order central difference of `f` at `x` along coordinate `i`.
fn stencil(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-3;
    let at = |k: f64| {
        let mut y = x.to_vec();
        y[i] += k * h;
        f(&y)
    };
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
}

fn fd_inputs(e: &Expr, x: &[f64], p: &ParameterStore) -> Vec<f64> {
    (0..x.len()).map(|i| stencil(|y| evaluate(e, y, p).unwrap(), x, i)).collect()
}

fn fd_params(e: &Expr, x: &[f64], p: &ParameterStore) -> Vec<f64> {
    let base = p.values().to_vec();
    let at = |v: &[f64]| {
        let mut q = p.clone();
        q.set_values(v).unwrap();
        evaluate(e, x, &q).unwrap()
    };
    (0..base.len()).map(|i| stencil(at, &base, i)).collect()
}

#[test]
fn random_fifty_node_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut graphs = 0;
    while graphs < 10 {
        let e = random_expr(&mut rng, 50);
        if !(45..=60).contains(&e.size()) {
            continue;
        }
        graphs += 1;
        let p = store(&mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..N_IN).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, gx, gp) = value_and_gradient(&e, &x, &p).unwrap();
            let ex = rel_err(&gx, &fd_inputs(&e, &x, &p));
            let ep = rel_err(&gp, &fd_params(&e, &x, &p));
            assert!(ex <= 1e-6 && ep <= 1e-6, "input err {ex}, param err {ep}");
        }
    }
}

#[test]
fn each_primitive_matches_finite_differences() {
    let x0 = || b(Expr::input(0));
    let x1 = || b(Expr::input(1));
    let ops: Vec<(&str, Expr)> = vec![
        ("add", Expr::Add(x0(), x1())),
        ("sub", Expr::Sub(x0(), x1())),
        ("mul", Expr::Mul(x0(), x1())),
        ("div", Expr::Div(x0(), b(one_plus_square(Expr::input(1))))),
        ("neg", Expr::Neg(x0())),
        ("exp", Expr::Exp(x0())),
        ("log", Expr::Log(b(one_plus_square(Expr::input(0))))),
        ("tanh", Expr::Tanh(x0())),
        ("square", Expr::Square(x0())),
        ("sum", Expr::Sum(b(Expr::Square(b(Expr::inputs(0, 2)))))),
        ("dot", Expr::Dot(b(Expr::inputs(0, 2)), b(Expr::Tanh(b(Expr::inputs(0, 2)))))),
        (
            "affine",
            Expr::Sum(b(Expr::Tanh(b(Expr::AffineApply { x: b(Expr::inputs(0, 2)), weight: 0, bias: 4, rows: 2, cols: 2 })))),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = ParameterStore::new();
    p.allocate("w", &[0.3, -0.7, 1.1, 0.4, 0.05, -0.2]);
    for (name, e) in &ops {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, gx, gp) = value_and_gradient(e, &x, &p).unwrap();
            let ex = rel_err(&gx, &fd_inputs(e, &x, &p));
            assert!(ex <= 1e-6, "{name}: input rel err {ex} at {x:?}");
            if *name == "affine" {
                let ep = rel_err(&gp, &fd_params(e, &x, &p));
                assert!(ep <= 1e-6, "{name}: param rel err {ep}");
            }
        }
    }
}

proptest! {
    #[test]
    fn gradient_is_linear_in_the_expression(
        a in -3.0f64..3.0, c in -3.0f64..3.0, x in -1.5f64..1.5, y in -1.5f64..1.5
    ) {
        let f = Expr::Mul(b(Expr::Tanh(b(Expr::input(0)))), b(Expr::input(1)));
        let g = Expr::Exp(b(Expr::Sub(b(Expr::input(0)), b(Expr::Square(b(Expr::input(1)))))));
        let comb = Expr::Add(
            b(Expr::Mul(b(Expr::scalar(a)), b(f.clone()))),
            b(Expr::Mul(b(Expr::scalar(c)), b(g.clone()))),
        );
        let p = ParameterStore::new();
        let pt = [x, y];
        let (_, gf, _) = value_and_gradient(&f, &pt, &p).unwrap();
        let (_, gg, _) = value_and_gradient(&g, &pt, &p).unwrap();
        let (_, gc, _) = value_and_gradient(&comb, &pt, &p).unwrap();
        for i in 0..2 {
            prop_assert!((gc[i] - (a * gf[i] + c * gg[i])).abs() <= 1e-12 * (1.0 + gc[i].abs()));
        }
    }
}
