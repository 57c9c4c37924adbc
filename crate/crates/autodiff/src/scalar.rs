use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::tape::{binary_rule, unary_rule, NodeId, Op, Tape, NONE};
use crate::AdError;

/// Numeric type that network and PDE code is written against.
///
/// Implemented by `f64` (plain evaluation), [`Var`] (recorded on a tape) and
/// [`crate::Dual`] (forward tangent over any other scalar).
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    /// Value that carries no derivative information.
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Map `self` through an external function whose value and first
    /// derivative at `self.value()` are supplied.
    fn apply(self, value: f64, derivative: f64) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// `bias + Σ w_i x_i`, accumulated left to right.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        let mut acc = bias;
        for (&w, &x) in weights.iter().zip(inputs) {
            acc += w * x;
        }
        acc
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn apply(self, value: f64, _derivative: f64) -> Self {
        value
    }
}

/// Tape-tracked scalar. Values created by [`Scalar::constant`] are untracked
/// and fold away: operations between untracked values record nothing.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    id: u32,
    value: f64,
}

impl Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.id == NONE {
            write!(f, "Const({})", self.value)
        } else {
            write!(f, "Var#{}({})", self.id, self.value)
        }
    }
}

impl<'t> Var<'t> {
    pub fn leaf(tape: &'t Tape, value: f64) -> Self {
        let id = tape.leaf(value);
        Self {
            tape: Some(tape),
            id: id.0,
            value,
        }
    }

    /// Wrap an existing node.
    pub fn from_node(tape: &'t Tape, id: NodeId) -> Result<Self, AdError> {
        let value = tape.value(id)?;
        Ok(Self {
            tape: Some(tape),
            id: id.0,
            value,
        })
    }

    pub fn id(&self) -> Option<NodeId> {
        (self.id != NONE).then_some(NodeId(self.id))
    }

    pub fn is_tracked(&self) -> bool {
        self.id != NONE
    }

    fn constant_of(value: f64) -> Self {
        Self {
            tape: None,
            id: NONE,
            value,
        }
    }

    fn unary(self, op: Op) -> Self {
        let Some(tape) = self.tape.filter(|_| self.id != NONE) else {
            return match unary_rule(op, self.value, NONE) {
                Ok((v, _)) => Self::constant_of(v),
                Err(_) => Self::constant_of(f64::NAN),
            };
        };
        match unary_rule(op, self.value, tape.next_id()) {
            Ok((v, d)) => self.push1(tape, op, v, d),
            Err(e) => {
                tape.flag(e);
                self.push1(tape, op, f64::NAN, f64::NAN)
            }
        }
    }

    fn push1(self, tape: &'t Tape, op: Op, value: f64, d: f64) -> Self {
        let id = tape.push(op, [self.id, NONE], [d, 0.0], value);
        Self {
            tape: Some(tape),
            id: id.0,
            value,
        }
    }

    fn binary(self, rhs: Self, op: Op) -> Self {
        let (value, partials) = match binary_rule(op, self.value, rhs.value, NONE) {
            Ok(r) => r,
            Err(e) => {
                if let Some(tape) = self.tape.or(rhs.tape) {
                    if self.is_tracked() || rhs.is_tracked() {
                        let node = tape.next_id();
                        if let AdError::Domain { op, input, .. } = e {
                            tape.flag(AdError::Domain { op, node, input });
                        }
                    }
                }
                (f64::NAN, [f64::NAN; 2])
            }
        };
        match (self.is_tracked(), rhs.is_tracked()) {
            (false, false) => Self::constant_of(value),
            (true, false) => {
                let tape = self.tape.unwrap();
                let id = tape.push(op, [self.id, NONE], [partials[0], 0.0], value);
                Self {
                    tape: Some(tape),
                    id: id.0,
                    value,
                }
            }
            (false, true) => {
                let tape = rhs.tape.unwrap();
                let id = tape.push(op, [rhs.id, NONE], [partials[1], 0.0], value);
                Self {
                    tape: Some(tape),
                    id: id.0,
                    value,
                }
            }
            (true, true) => {
                let tape = self.tape.unwrap();
                let id = tape.push(op, [self.id, rhs.id], partials, value);
                Self {
                    tape: Some(tape),
                    id: id.0,
                    value,
                }
            }
        }
    }

    fn is_const(&self, v: f64) -> bool {
        self.id == NONE && self.value == v
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        if self.is_const(0.0) {
            return rhs;
        }
        if rhs.is_const(0.0) {
            return self;
        }
        self.binary(rhs, Op::Add)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        if rhs.is_const(0.0) {
            return self;
        }
        self.binary(rhs, Op::Sub)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.is_const(0.0) || rhs.is_const(0.0) {
            return Self::constant_of(0.0);
        }
        if self.is_const(1.0) {
            return rhs;
        }
        if rhs.is_const(1.0) {
            return self;
        }
        self.binary(rhs, Op::Mul)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        if rhs.is_const(1.0) {
            return self;
        }
        self.binary(rhs, Op::Div)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg)
    }
}

impl AddAssign for Var<'_> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self + Self::constant_of(rhs)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self - Self::constant_of(rhs)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self * Self::constant_of(rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self / Self::constant_of(rhs)
    }
}

impl Scalar for Var<'_> {
    fn constant(v: f64) -> Self {
        Self::constant_of(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    fn ln(self) -> Self {
        self.unary(Op::Log)
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }
    fn relu(self) -> Self {
        self.unary(Op::Relu)
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    fn powi(self, n: i32) -> Self {
        if n == 1 {
            return self;
        }
        self.unary(Op::PowI(n))
    }
    fn apply(self, value: f64, derivative: f64) -> Self {
        match self.tape.filter(|_| self.is_tracked()) {
            Some(tape) => self.push1(tape, Op::Apply, value, derivative),
            None => Self::constant_of(value),
        }
    }

    /// One [`Op::Linear`] node instead of a multiply and an add per term.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        let mut value = bias.value;
        for (w, x) in weights.iter().zip(inputs) {
            value += w.value * x.value;
        }
        let tape = std::iter::once(&bias)
            .chain(weights)
            .chain(inputs)
            .find(|v| v.is_tracked())
            .and_then(|v| v.tape);
        let Some(tape) = tape else {
            return Self::constant_of(value);
        };
        let node = tape.linear(value, |terms| {
            if bias.is_tracked() {
                terms.push((bias.id, 1.0));
            }
            for (w, x) in weights.iter().zip(inputs) {
                if w.is_tracked() && x.value != 0.0 {
                    terms.push((w.id, x.value));
                }
                if x.is_tracked() && w.value != 0.0 {
                    terms.push((x.id, w.value));
                }
            }
        });
        match node {
            Some(id) => Self {
                tape: Some(tape),
                id: id.0,
                value,
            },
            None => Self::constant_of(value),
        }
    }
}
