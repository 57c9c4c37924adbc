use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::Scalar;

/// Forward-mode tangent over an arbitrary scalar.
///
/// `Dual<Var>` records the tangent arithmetic on the tape, so a reverse sweep
/// from `t` differentiates a directional derivative with respect to the
/// leaves. `Dual<Dual<f64>>` gives exact second derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub v: S,
    pub t: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(v: S, t: S) -> Self {
        Self { v, t }
    }

    /// Independent variable seeded with unit tangent.
    pub fn variable(v: S) -> Self {
        Self {
            v,
            t: S::constant(1.0),
        }
    }

    /// Value with zero tangent.
    pub fn lift(v: S) -> Self {
        Self { v, t: S::zero() }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.v + rhs.v, self.t + rhs.t)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.v - rhs.v, self.t - rhs.t)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.v * rhs.v, self.t * rhs.v + self.v * rhs.t)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let v = self.v / rhs.v;
        Self::new(v, (self.t - v * rhs.t) / rhs.v)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, -self.t)
    }
}

impl<S: Scalar> AddAssign for Dual<S> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Scalar> Add<f64> for Dual<S> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.v + rhs, self.t)
    }
}

impl<S: Scalar> Sub<f64> for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        Self::new(self.v - rhs, self.t)
    }
}

impl<S: Scalar> Mul<f64> for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.v * rhs, self.t * rhs)
    }
}

impl<S: Scalar> Div<f64> for Dual<S> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Self::new(self.v / rhs, self.t / rhs)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn constant(v: f64) -> Self {
        Self::lift(S::constant(v))
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Self::new(e, self.t * e)
    }
    fn ln(self) -> Self {
        Self::new(self.v.ln(), self.t / self.v)
    }
    fn sin(self) -> Self {
        Self::new(self.v.sin(), self.t * self.v.cos())
    }
    fn cos(self) -> Self {
        Self::new(self.v.cos(), -(self.t * self.v.sin()))
    }
    fn tanh(self) -> Self {
        let y = self.v.tanh();
        let slope = -(y * y) + 1.0;
        Self::new(y, self.t * slope)
    }
    fn relu(self) -> Self {
        if self.v.value() > 0.0 {
            Self::new(self.v.relu(), self.t)
        } else {
            Self::new(self.v.relu(), S::zero())
        }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self::new(s, self.t / (s * 2.0))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::constant(1.0),
            1 => self,
            _ => Self::new(self.v.powi(n), self.t * self.v.powi(n - 1) * f64::from(n)),
        }
    }
    /// First-order only: the supplied derivative is a constant of the
    /// outer computation.
    fn apply(self, value: f64, derivative: f64) -> Self {
        Self::new(self.v.apply(value, derivative), self.t * derivative)
    }
}
