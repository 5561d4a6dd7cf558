//! Forward-mode dual numbers, nestable to any depth.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar field the expression evaluator is generic over.
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    /// The innermost real part.
    fn re(&self) -> f64;
    /// True when every component is finite.
    fn is_finite(&self) -> bool;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, k: u32) -> Self;
    fn scale(&self, c: f64) -> Self;
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn re(&self) -> f64 {
        *self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powi(&self, k: u32) -> Self {
        // repeated multiplication keeps integer powers exact for small k
        let mut acc = 1.0;
        for _ in 0..k {
            acc *= *self;
        }
        acc
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// Chain rule helper: `f(re)` with derivative `df(re)`.
    fn chain(&self, value: T, deriv: T) -> Self {
        Dual {
            re: value,
            eps: deriv * self.eps.clone(),
        }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let eps = self.re.clone() * o.eps + self.eps * o.re.clone();
        Dual::new(self.re * o.re, eps)
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re.clone();
        let eps = (self.eps - q.clone() * o.eps) / o.re;
        Dual::new(q, eps)
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Real> Real for Dual<T> {
    fn constant(c: f64) -> Self {
        Dual::new(T::constant(c), T::constant(0.0))
    }
    fn re(&self) -> f64 {
        self.re.re()
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.chain(e.clone(), e)
    }
    fn ln(&self) -> Self {
        self.chain(self.re.ln(), T::constant(1.0) / self.re.clone())
    }
    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        self.chain(s.clone(), T::constant(0.5) / s)
    }
    fn powi(&self, k: u32) -> Self {
        match k {
            0 => Self::constant(1.0),
            _ => {
                let d = self.re.powi(k - 1).scale(k as f64);
                self.chain(self.re.powi(k), d)
            }
        }
    }
    fn scale(&self, c: f64) -> Self {
        Dual::new(self.re.scale(c), self.eps.scale(c))
    }
}
