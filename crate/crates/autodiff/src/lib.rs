//! Scalar tape-based reverse-mode automatic differentiation.
//!
//! Networks and PDE terms are written once against [`Scalar`] and evaluated
//! as plain `f64`, as tape-recorded [`Var`]s, or as [`Dual`] tangents over
//! either. Recording a `Dual<Var>` places the tangent arithmetic on the tape,
//! which is how parameter gradients of input derivatives (forward-over-reverse)
//! are obtained.

mod dual;
mod scalar;
mod tape;

pub use dual::Dual;
pub use scalar::{Scalar, Var};
pub use tape::{AdNode, Adjoints, NodeId, Op, Tape};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AdError {
    #[error("{op:?} outside its domain at node {node} (input {input})")]
    Domain { op: Op, node: u32, input: f64 },
    #[error("node {id} out of range for tape of length {len}")]
    Index { id: u32, len: usize },
    #[error("{op:?} cannot be recorded with {got} operands")]
    Arity { op: Op, got: usize },
    #[error("tangent mode is not active")]
    TangentInactive,
    #[error("tangent direction {direction} out of range for {dim} inputs")]
    Direction { direction: usize, dim: usize },
}

/// A computation that can be evaluated at any scalar type.
pub trait Differentiable {
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Value and reverse-mode gradient of `f` at `point`.
pub fn gradient<F: Differentiable>(f: &F, point: &[f64]) -> Result<(f64, Vec<f64>), AdError> {
    let tape = Tape::with_capacity(256);
    let xs: Vec<Var> = point.iter().map(|&p| Var::leaf(&tape, p)).collect();
    let y = f.eval(&xs);
    let grad = match y.id() {
        Some(id) => {
            let adj = tape.backward(id)?;
            xs.iter().map(|x| adj.wrt(x.id().unwrap())).collect()
        }
        None => {
            tape.check()?;
            vec![0.0; point.len()]
        }
    };
    Ok((y.value(), grad))
}

/// Gradient with respect to `leaf_set` of the directional derivative of `f`
/// along input coordinate `direction`.
///
/// The tangent is seeded with 1 on `direction` and 0 elsewhere and is itself
/// recorded, so the reverse sweep runs through the tangent arithmetic.
pub fn forward_tangent_then_backward<F: Differentiable>(
    f: &F,
    point: &[f64],
    direction: usize,
    leaf_set: &[usize],
) -> Result<Vec<f64>, AdError> {
    if direction >= point.len() {
        return Err(AdError::Direction {
            direction,
            dim: point.len(),
        });
    }
    let tape = Tape::with_capacity(512);
    let xs: Vec<Dual<Var>> = point
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let v = Var::leaf(&tape, p);
            if i == direction {
                Dual::variable(v)
            } else {
                Dual::lift(v)
            }
        })
        .collect();
    let y = f.eval(&xs);
    let Some(out) = y.t.id() else {
        tape.check()?;
        return Ok(vec![0.0; leaf_set.len()]);
    };
    let adj = tape.backward(out)?;
    leaf_set
        .iter()
        .map(|&i| {
            xs.get(i)
                .map(|x| adj.wrt(x.v.id().unwrap()))
                .ok_or(AdError::Direction {
                    direction: i,
                    dim: point.len(),
                })
        })
        .collect()
}

/// Largest `|ad − fd| / max(1, |ad|)` over coordinates, with central
/// differences of the given step as reference.
pub fn grad_check<F: Differentiable>(f: &F, point: &[f64], step: f64) -> Result<f64, AdError> {
    let (_, ad) = gradient(f, point)?;
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let up = f.eval(&x);
        x[i] = point[i] - step;
        let down = f.eval(&x);
        x[i] = point[i];
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((ad[i] - fd).abs() / ad[i].abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Cube;
    impl Differentiable for Cube {
        fn eval<S: Scalar>(&self, x: &[S]) -> S {
            x[0] * x[0] * x[0]
        }
    }

    struct Constant;
    impl Differentiable for Constant {
        fn eval<S: Scalar>(&self, _x: &[S]) -> S {
            S::constant(4.0)
        }
    }

    #[test]
    fn grad_check_cube() {
        assert!(grad_check(&Cube, &[2.0], 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn grad_check_constant_is_exact() {
        assert_eq!(grad_check(&Constant, &[0.3, 1.2], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn direction_out_of_range() {
        assert!(matches!(
            forward_tangent_then_backward(&Cube, &[1.0], 3, &[0]),
            Err(AdError::Direction { .. })
        ));
    }
}
