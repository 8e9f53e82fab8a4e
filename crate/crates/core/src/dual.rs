//! Forward-mode automatic differentiation.
//!
//! The simulator is written once against the [`Scalar`] trait and evaluated
//! either with plain `f64` (evaluation and finite differences) or with
//! [`Dual`] numbers carrying one partial derivative per parameter handle.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type the simulator is generic over.
pub trait Scalar:
    Clone
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
    + Sum
{
    fn constant(value: f64) -> Self;

    /// Independent variable number `index` out of `count`.
    fn variable(value: f64, index: usize, count: usize) -> Self;

    fn value(&self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn variable(value: f64, _index: usize, _count: usize) -> Self {
        value
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
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// A value together with its partial derivatives with respect to every
/// parameter handle of the current evaluation.
///
/// Constants keep an empty partials vector, so mixing constants and
/// variables costs nothing until a variable is involved.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub partials: Vec<f64>,
}

impl Dual {
    pub fn new(value: f64, partials: Vec<f64>) -> Self {
        Self { value, partials }
    }

    /// Partial with respect to handle `i` (zero when never touched).
    pub fn partial(&self, i: usize) -> f64 {
        self.partials.get(i).copied().unwrap_or(0.0)
    }

    /// Apply the chain rule for a unary function with derivative `df`.
    fn chain(self, value: f64, df: f64) -> Self {
        let mut partials = self.partials;
        for p in &mut partials {
            *p *= df;
        }
        Dual { value, partials }
    }
}

/// `a * x + b * y` over partial vectors of possibly different length.
fn combine(x: Vec<f64>, a: f64, y: &[f64], b: f64) -> Vec<f64> {
    let mut out = x;
    if out.len() < y.len() {
        out.resize(y.len(), 0.0);
    }
    for p in out.iter_mut() {
        *p *= a;
    }
    for (o, q) in out.iter_mut().zip(y) {
        *o += b * q;
    }
    out
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value + rhs.value,
            partials: combine(self.partials, 1.0, &rhs.partials, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value - rhs.value,
            partials: combine(self.partials, 1.0, &rhs.partials, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let value = self.value * rhs.value;
        Dual {
            value,
            partials: combine(self.partials, rhs.value, &rhs.partials, self.value),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let value = self.value / rhs.value;
        let inv = 1.0 / rhs.value;
        // d(u/v) = du/v - u dv / v^2
        Dual {
            value,
            partials: combine(self.partials, inv, &rhs.partials, -value * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let v = -self.value;
        self.chain(v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, rhs: f64) -> Dual {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: f64) -> Dual {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        let v = self.value * rhs;
        self.chain(v, rhs)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, rhs: f64) -> Dual {
        let v = self.value / rhs;
        self.chain(v, 1.0 / rhs)
    }
}

impl Sum for Dual {
    fn sum<I: Iterator<Item = Dual>>(iter: I) -> Dual {
        iter.fold(Dual::constant(0.0), |acc, x| acc + x)
    }
}

impl Scalar for Dual {
    fn constant(value: f64) -> Self {
        Dual {
            value,
            partials: Vec::new(),
        }
    }

    fn variable(value: f64, index: usize, count: usize) -> Self {
        let mut partials = vec![0.0; count.max(index + 1)];
        partials[index] = 1.0;
        Dual { value, partials }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn exp(self) -> Self {
        let v = self.value.exp();
        self.chain(v, v)
    }

    fn ln(self) -> Self {
        let x = self.value;
        self.chain(x.ln(), 1.0 / x)
    }

    fn powi(self, n: i32) -> Self {
        let x = self.value;
        let df = f64::from(n) * x.powi(n - 1);
        self.chain(x.powi(n), df)
    }

    fn sqrt(self) -> Self {
        let v = self.value.sqrt();
        self.chain(v, 0.5 / v)
    }
}

/// Hard minimum; the derivative follows the selected branch.
pub fn hard_min<S: Scalar>(a: S, b: S) -> S {
    if a.value() <= b.value() {
        a
    } else {
        b
    }
}

/// Smooth minimum (negative log-sum-exp) with a scale-relative sharpness.
///
/// The sharpness is `beta / s` with `s = (a + b) / 2`, so the transition
/// band is a fixed fraction of the magnitude of the operands and the result
/// stays differentiable in every operand. Falls back to [`hard_min`] when the
/// operands are not both positive on average.
pub fn soft_min<S: Scalar>(a: S, b: S, beta: f64) -> S {
    let scale = (a.clone() + b.clone()) * 0.5;
    if scale.value() <= 0.0 || !scale.value().is_finite() {
        return hard_min(a, b);
    }
    let k = S::constant(beta) / scale;
    let (lo, hi) = if a.value() <= b.value() { (a, b) } else { (b, a) };
    let gap = hi - lo.clone();
    let tail = ((-(k.clone() * gap)).exp() + 1.0).ln();
    lo - tail / k
}

/// `max(0, x)^2`, continuously differentiable.
pub fn positive_part_squared<S: Scalar>(x: S) -> S {
    if x.value() > 0.0 {
        x.clone() * x
    } else {
        S::constant(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::variable(3.0, 0, 2);
        let y = Dual::variable(2.0, 1, 2);
        let p = x.clone() * y.clone();
        assert_eq!(p.value, 6.0);
        assert_eq!(p.partials, vec![2.0, 3.0]);
        let q = x / y;
        assert!(close(q.value, 1.5, 1e-15));
        assert!(close(q.partial(0), 0.5, 1e-15));
        assert!(close(q.partial(1), -0.75, 1e-15));
    }

    #[test]
    fn chain_rule_matches_finite_difference() {
        let f = |x: f64| ((x * x + 1.0).ln() * x).exp() / (x + 2.0).sqrt();
        let fd = |x: f64| {
            let d = Dual::variable(x, 0, 1);
            let inner = (d.clone() * d.clone() + 1.0).ln() * d.clone();
            inner.exp() / (d + 2.0).sqrt()
        };
        for &x in &[0.3, 1.1, 2.5] {
            let h = 1e-6;
            let num = (f(x + h) - f(x - h)) / (2.0 * h);
            let ad = fd(x);
            assert!(close(ad.value, f(x), 1e-14));
            assert!(close(ad.partial(0), num, 1e-7), "{} vs {}", ad.partial(0), num);
        }
    }

    #[test]
    fn powi_and_constants() {
        let x = Dual::variable(0.5, 0, 1);
        let c = x.clone().powi(3) * 2.0 + Dual::constant(4.0);
        assert!(close(c.value, 4.25, 1e-15));
        assert!(close(c.partial(0), 1.5, 1e-15));
        let k = Dual::constant(7.0) * Dual::constant(3.0);
        assert!(k.partials.is_empty());
        assert_eq!(k.partial(5), 0.0);
    }

    #[test]
    fn soft_min_approaches_hard_min_far_from_kink() {
        let a = 10.0_f64;
        let b = 30.0_f64;
        let s = soft_min(a, b, 50.0);
        assert!((s - 10.0).abs() < 1e-10);
        let at_kink = soft_min(20.0_f64, 20.0, 50.0);
        assert!(at_kink < 20.0);
        assert!((20.0 - at_kink - 2f64.ln() * 20.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn soft_min_gradient_matches_finite_difference() {
        let g = |a: f64, b: f64| soft_min(a, b, 50.0);
        let (a0, b0) = (18.0, 20.0);
        let da = Dual::variable(a0, 0, 2);
        let db = Dual::variable(b0, 1, 2);
        let s = soft_min(da, db, 50.0);
        let h = 1e-5;
        let ga = (g(a0 + h, b0) - g(a0 - h, b0)) / (2.0 * h);
        let gb = (g(a0, b0 + h) - g(a0, b0 - h)) / (2.0 * h);
        assert!(close(s.partial(0), ga, 1e-7));
        assert!(close(s.partial(1), gb, 1e-7));
    }

    #[test]
    fn positive_part_squared_is_zero_when_satisfied() {
        assert_eq!(positive_part_squared(-2.0_f64), 0.0);
        let x = Dual::variable(3.0, 0, 1);
        let p = positive_part_squared(x);
        assert_eq!(p.value, 9.0);
        assert_eq!(p.partial(0), 6.0);
    }
}
