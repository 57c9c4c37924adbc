//! Value with a small set of forward tangents carried together.
//!
//! Input derivatives of the networks (one direction per spatial coordinate,
//! plus time for the DNN primal) are propagated in a single pass. Tangent
//! slots at or beyond `n` are always the zero constant.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use xwan_autodiff::Scalar;

/// Largest number of simultaneous tangent directions.
pub const MAX_TANGENTS: usize = 9;

#[derive(Clone, Copy, Debug)]
pub struct Jet<S> {
    pub v: S,
    pub n: usize,
    pub t: [S; MAX_TANGENTS],
}

impl<S: Scalar> Jet<S> {
    /// Constant with `n` zero tangents.
    pub fn lift(v: S, n: usize) -> Self {
        debug_assert!(n <= MAX_TANGENTS);
        Self {
            v,
            n,
            t: [S::zero(); MAX_TANGENTS],
        }
    }

    /// Coordinate `k` of `n` independent directions.
    pub fn seed(v: S, n: usize, k: usize) -> Self {
        let mut j = Self::lift(v, n);
        j.t[k] = S::constant(1.0);
        j
    }

    pub fn from_parts(v: S, tangents: &[S]) -> Self {
        let mut j = Self::lift(v, tangents.len());
        j.t[..tangents.len()].copy_from_slice(tangents);
        j
    }

    pub fn tangents(&self) -> &[S] {
        &self.t[..self.n]
    }

    /// Multiply by a scalar that carries no tangent.
    pub fn scale(self, s: S) -> Self {
        let mut out = Self::lift(self.v * s, self.n);
        for k in 0..self.n {
            out.t[k] = self.t[k] * s;
        }
        out
    }

    /// Chain rule through a map with value `y` and slope `dy` at `self.v`.
    pub fn chain(self, y: S, dy: S) -> Self {
        let mut out = Self::lift(y, self.n);
        for k in 0..self.n {
            out.t[k] = self.t[k] * dy;
        }
        out
    }
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let n = self.n.max(rhs.n);
        let mut out = Self::lift(self.v + rhs.v, n);
        for k in 0..n {
            out.t[k] = self.t[k] + rhs.t[k];
        }
        out
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let n = self.n.max(rhs.n);
        let mut out = Self::lift(self.v - rhs.v, n);
        for k in 0..n {
            out.t[k] = self.t[k] - rhs.t[k];
        }
        out
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let n = self.n.max(rhs.n);
        let mut out = Self::lift(self.v * rhs.v, n);
        for k in 0..n {
            out.t[k] = self.t[k] * rhs.v + self.v * rhs.t[k];
        }
        out
    }
}

impl<S: Scalar> Div for Jet<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let n = self.n.max(rhs.n);
        let q = self.v / rhs.v;
        let mut out = Self::lift(q, n);
        for k in 0..n {
            out.t[k] = (self.t[k] - q * rhs.t[k]) / rhs.v;
        }
        out
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut out = Self::lift(-self.v, self.n);
        for k in 0..self.n {
            out.t[k] = -self.t[k];
        }
        out
    }
}

impl<S: Scalar> AddAssign for Jet<S> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<S: Scalar> Add<f64> for Jet<S> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.v = self.v + rhs;
        self
    }
}

impl<S: Scalar> Sub<f64> for Jet<S> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.v = self.v - rhs;
        self
    }
}

impl<S: Scalar> Mul<f64> for Jet<S> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        let mut out = Self::lift(self.v * rhs, self.n);
        for k in 0..self.n {
            out.t[k] = self.t[k] * rhs;
        }
        out
    }
}

impl<S: Scalar> Div<f64> for Jet<S> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn constant(v: f64) -> Self {
        Self::lift(S::constant(v), 0)
    }
    fn value(&self) -> f64 {
        self.v.value()
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        let inv = S::constant(1.0) / self.v;
        self.chain(self.v.ln(), inv)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn tanh(self) -> Self {
        let y = self.v.tanh();
        self.chain(y, -(y * y) + 1.0)
    }
    fn relu(self) -> Self {
        if self.v.value() > 0.0 {
            self
        } else {
            Self::lift(self.v.relu(), self.n)
        }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, S::constant(0.5) / s)
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::lift(S::constant(1.0), self.n),
            1 => self,
            _ => self.chain(self.v.powi(n), self.v.powi(n - 1) * f64::from(n)),
        }
    }
    fn apply(self, value: f64, derivative: f64) -> Self {
        self.chain(self.v.apply(value, derivative), S::constant(derivative))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xwan_autodiff::Dual;

    fn f<S: Scalar>(x: S, y: S) -> S {
        (x * y).sin() + (x / (y * y + 1.0)).exp() - x.tanh() * y.sqrt()
    }

    #[test]
    fn jet_matches_duals_per_direction() {
        let (x0, y0) = (0.4, 1.3);
        let x = Jet::seed(x0, 2, 0);
        let y = Jet::seed(y0, 2, 1);
        let j = f(x, y);
        let dx = f(Dual::variable(x0), Dual::lift(y0)).t;
        let dy = f(Dual::lift(x0), Dual::variable(y0)).t;
        assert!((j.v - f(x0, y0)).abs() < 1e-15);
        assert!((j.t[0] - dx).abs() < 1e-14);
        assert!((j.t[1] - dy).abs() < 1e-14);
    }

    #[test]
    fn mixed_tangent_counts_treat_missing_as_zero() {
        let a = Jet::seed(2.0, 3, 2);
        let b = Jet::<f64>::constant(5.0);
        let c = a * b + b;
        assert_eq!(c.n, 3);
        assert_eq!(c.tangents(), &[0.0, 0.0, 5.0]);
        assert_eq!(c.v, 15.0);
    }
}
