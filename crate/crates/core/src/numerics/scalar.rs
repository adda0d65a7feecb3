use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain `f64` evaluation and tape-recorded [`Var`](super::Var)s.
///
/// Every loss in the crate is written once against this trait: evaluated on
/// `f64` it is a fast numeric path, evaluated on `Var` it records a graph that
/// [`Tape::gradient`](super::Tape::gradient) differentiates.
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
{
    /// Current numeric value.
    fn value(&self) -> f64;

    /// An untracked constant in the same evaluation context as `self`.
    fn lift(&self, c: f64) -> Self;

    /// True when the value is a constant exactly equal to zero; used to skip
    /// structurally zero terms.
    fn is_zero_const(&self) -> bool;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;

    fn sigmoid(self) -> Self {
        let one = self.lift(1.0);
        one / ((-self).exp() + 1.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// `Σ coefs[i]·xs[i]`. Panics on empty input.
    fn lincomb(coefs: &[f64], xs: &[Self]) -> Self {
        assert!(!xs.is_empty() && coefs.len() == xs.len());
        let mut acc = xs[0] * coefs[0];
        for (x, &c) in xs.iter().zip(coefs).skip(1) {
            acc = acc + *x * c;
        }
        acc
    }

    /// `Σ a[i]·b[i]`. Panics on empty input.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert!(!a.is_empty() && a.len() == b.len());
        let mut acc = a[0] * b[0];
        for (x, y) in a.iter().zip(b).skip(1) {
            acc = acc + *x * *y;
        }
        acc
    }

    /// `Σ xs[i]²`. Panics on empty input.
    fn sum_squares(xs: &[Self]) -> Self {
        Self::dot(xs, xs)
    }

    /// `Σ xs[i]`. Panics on empty input.
    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty());
        let mut acc = xs[0];
        for x in &xs[1..] {
            acc = acc + *x;
        }
        acc
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn lift(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn is_zero_const(&self) -> bool {
        *self == 0.0
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
    fn lincomb(coefs: &[f64], xs: &[Self]) -> Self {
        assert_eq!(coefs.len(), xs.len());
        coefs.iter().zip(xs).map(|(c, x)| c * x).sum()
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
}
