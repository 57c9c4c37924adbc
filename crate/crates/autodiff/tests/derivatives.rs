use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xwan_autodiff::{
    forward_tangent_then_backward, grad_check, gradient, Differentiable, Dual, Scalar, Tape, Var,
};

/// tanh by Lambert's continued fraction, no libm involved.
fn tanh_cf(x: f64) -> f64 {
    let x2 = x * x;
    let mut acc = 0.0;
    for k in (1..40).rev() {
        acc = x2 / ((2 * k + 1) as f64 + acc);
    }
    x / (1.0 + acc)
}

struct Square;
impl Differentiable for Square {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        x[0] * x[0]
    }
}

struct Sin;
impl Differentiable for Sin {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        x[0].sin()
    }
}

/// f(w, x) = w · tanh(x)
struct ScaledTanh;
impl Differentiable for ScaledTanh {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        x[0] * x[1].tanh()
    }
}

/// f(w, x) = w · x²
struct WeightedSquare;
impl Differentiable for WeightedSquare {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        x[0] * x[1] * x[1]
    }
}

/// f(w, x) = x
struct Identity;
impl Differentiable for Identity {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        x[1]
    }
}

/// f(w, x) = sin(w·x)
struct SinProduct;
impl Differentiable for SinProduct {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        (x[0] * x[1]).sin()
    }
}

/// Two-layer tanh network 2 → 4 → 1 with its 17 parameters followed by the
/// 2 inputs and one output scale: 20 leaves in total.
struct TinyNet;
impl Differentiable for TinyNet {
    fn eval<S: Scalar>(&self, p: &[S]) -> S {
        let (w1, rest) = p.split_at(8);
        let (b1, rest) = rest.split_at(4);
        let (w2, rest) = rest.split_at(4);
        let (b2, rest) = rest.split_at(1);
        let (input, scale) = rest.split_at(2);
        let mut out = b2[0];
        for j in 0..4 {
            let h = (w1[2 * j] * input[0] + w1[2 * j + 1] * input[1] + b1[j]).tanh();
            out += w2[j] * h;
        }
        out * scale[0]
    }
}

#[test]
fn backward_examples() {
    let (_, g) = gradient(&Square, &[3.0]).unwrap();
    assert_eq!(g[0], 6.0);
    let (_, g) = gradient(&Sin, &[0.0]).unwrap();
    assert_eq!(g[0], 1.0);
    let (_, g) = gradient(&ScaledTanh, &[2.0, 1.0]).unwrap();
    let oracle = tanh_cf(1.0);
    assert!((oracle - 0.7615941559557649).abs() < 1e-15);
    assert!((g[0] - oracle).abs() < 1e-15);
}

#[test]
fn forward_over_reverse_examples() {
    // ∂/∂w [∂(w x²)/∂x] = 2x
    let g = forward_tangent_then_backward(&WeightedSquare, &[2.0, 3.0], 1, &[0]).unwrap();
    assert_eq!(g[0], 6.0);
    let g = forward_tangent_then_backward(&Identity, &[0.4, 1.7], 1, &[0]).unwrap();
    assert_eq!(g[0], 0.0);
    // ∂/∂w [w cos(wx)] at (1, 0) = cos 0 − w x sin(wx) = 1
    let g = forward_tangent_then_backward(&SinProduct, &[1.0, 0.0], 1, &[0]).unwrap();
    assert!((g[0] - 1.0).abs() < 1e-15);
}

#[test]
fn tiny_tanh_net_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let p: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(p.len(), 20);
        assert!(grad_check(&TinyNet, &p, 1e-5).unwrap() < 1e-6);
    }
}

#[test]
fn reverse_sweep_is_bit_deterministic() {
    let p: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let (_, a) = gradient(&TinyNet, &p).unwrap();
    let (_, b) = gradient(&TinyNet, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn recorded_tangent_mode_matches_reverse_adjoints() {
    let p: Vec<f64> = (0..20).map(|i| (i as f64 * 0.61).cos()).collect();
    let (_, grad) = gradient(&TinyNet, &p).unwrap();
    for dir in 0..p.len() {
        let tape = Tape::with_tangents();
        let xs: Vec<Var> = p
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let id = tape.leaf_with_tangent(v, if i == dir { 1.0 } else { 0.0 });
                Var::from_node(&tape, id).unwrap()
            })
            .collect();
        let y = TinyNet.eval(&xs);
        let t = tape.tangent(y.id().unwrap()).unwrap();
        assert!((t - grad[dir]).abs() <= 1e-10 * grad[dir].abs().max(1e-4), "dir {dir}");
    }
}

#[test]
fn dual_tangent_matches_reverse_adjoint() {
    let p: Vec<f64> = (0..20).map(|i| 0.1 * i as f64 - 0.9).collect();
    let (_, grad) = gradient(&TinyNet, &p).unwrap();
    for dir in 0..p.len() {
        let xs: Vec<Dual<f64>> = p
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == dir { Dual::variable(v) } else { Dual::lift(v) })
            .collect();
        let y = TinyNet.eval(&xs);
        let rel = (y.t - grad[dir]).abs() / grad[dir].abs().max(1e-12);
        assert!(rel < 1e-10 || (y.t - grad[dir]).abs() < 1e-15, "dir {dir}: {} vs {}", y.t, grad[dir]);
    }
}

/// Random expression over the smooth primitives.
#[derive(Clone, Debug)]
struct Expr {
    ops: Vec<(u8, usize, usize)>,
    n_inputs: usize,
}

impl Differentiable for Expr {
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut vals: Vec<S> = x.to_vec();
        for &(op, a, b) in &self.ops {
            let a = vals[a % vals.len()];
            let b = vals[b % vals.len()];
            let v = match op % 8 {
                0 => a + b,
                1 => a - b,
                2 => a * b,
                3 => a / (b * b + 1.0),
                4 => a.tanh(),
                5 => a.sin() * 0.5,
                6 => (a * 0.3).exp(),
                _ => (a * a + 1.0).ln(),
            };
            vals.push(v);
        }
        *vals.last().unwrap()
    }
}

fn expr_strategy() -> impl Strategy<Value = (Expr, Vec<f64>)> {
    (1usize..5).prop_flat_map(|n| {
        (
            prop::collection::vec((any::<u8>(), any::<usize>(), any::<usize>()), 1..40),
            prop::collection::vec(-1.5f64..1.5, n),
        )
            .prop_map(move |(ops, x)| (Expr { ops, n_inputs: n }, x))
    })
}

proptest! {
    #[test]
    fn smooth_expressions_pass_grad_check((e, x) in expr_strategy()) {
        prop_assume!(e.n_inputs == x.len());
        let y = e.eval(&x);
        prop_assume!(y.is_finite() && y.abs() < 1e6);
        prop_assert!(grad_check(&e, &x, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn backward_is_linear((e, x) in expr_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        struct Combo<'a> { e: &'a Expr, a: f64, b: f64 }
        impl Differentiable for Combo<'_> {
            fn eval<S: Scalar>(&self, x: &[S]) -> S {
                self.e.eval(x) * self.a + x[0].sin() * self.b
            }
        }
        let (_, g) = gradient(&e, &x).unwrap();
        let (_, gs) = gradient(&Sin, &x[..1]).unwrap();
        let (_, gc) = gradient(&Combo { e: &e, a, b }, &x).unwrap();
        for i in 0..x.len() {
            let expect = a * g[i] + if i == 0 { b * gs[0] } else { 0.0 };
            prop_assert!((gc[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn tangent_agrees_with_reverse((e, x) in expr_strategy()) {
        let (_, g) = gradient(&e, &x).unwrap();
        for dir in 0..x.len() {
            let xs: Vec<Dual<f64>> = x.iter().enumerate()
                .map(|(i, &v)| if i == dir { Dual::variable(v) } else { Dual::lift(v) })
                .collect();
            let t = e.eval(&xs).t;
            prop_assert!((t - g[dir]).abs() <= 1e-10 * g[dir].abs().max(1.0));
        }
    }
}
