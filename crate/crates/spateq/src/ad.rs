//! Forward-mode dual numbers.
//!
//! `Dual<S>` carries one tangent direction. Nesting `Dual<Dual<f64>>` gives
//! second partials, which the bifurcation module uses for Taylor systems.

use num_complex::Complex64;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Arithmetic needed by residual functions that are differentiated automatically.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Underlying numeric field (f64 or Complex64).
    type Base: Copy;

    fn from_f64(v: f64) -> Self;
    fn from_base(v: Self::Base) -> Self;
    /// Primal value with all tangent parts dropped.
    fn value(self) -> Self::Base;
    fn powi(self, n: i32) -> Self;
    fn powf(self, e: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }
}

impl Scalar for f64 {
    type Base = f64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_base(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

impl Scalar for Complex64 {
    type Base = Complex64;
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn from_base(v: Complex64) -> Self {
        v
    }
    fn value(self) -> Complex64 {
        self
    }
    fn powi(self, n: i32) -> Self {
        Complex64::powi(&self, n)
    }
    fn powf(self, e: f64) -> Self {
        Complex64::powf(self, e)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn ln(self) -> Self {
        Complex64::ln(self)
    }
}

/// Value plus one directional derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub v: S,
    pub d: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(v: S, d: S) -> Self {
        Dual { v, d }
    }
    pub fn constant(v: S) -> Self {
        Dual { v, d: S::zero() }
    }
    pub fn variable(v: S) -> Self {
        Dual { v, d: S::one() }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}
impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}
impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}
impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual::new(q, (self.d - q * o.d) / o.v)
    }
}
impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.v, -self.d)
    }
}
impl<S: Scalar> AddAssign for Dual<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<S: Scalar> SubAssign for Dual<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<S: Scalar> MulAssign for Dual<S> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    type Base = S::Base;
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }
    fn from_base(v: S::Base) -> Self {
        Dual::constant(S::from_base(v))
    }
    fn value(self) -> S::Base {
        self.v.value()
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let p = self.v.powi(n - 1);
        Dual::new(p * self.v, p.scale(n as f64) * self.d)
    }
    fn powf(self, e: f64) -> Self {
        let p = self.v.powf(e - 1.0);
        Dual::new(p * self.v, p.scale(e) * self.d)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual::new(e, e * self.d)
    }
    fn ln(self) -> Self {
        Dual::new(self.v.ln(), self.d / self.v)
    }
}

/// Jacobian of `f: R^n -> R^m` at `x` by n forward passes, row-major `m × n`.
pub fn jacobian<S, F>(f: F, x: &[S]) -> Vec<Vec<S>>
where
    S: Scalar,
    F: Fn(&[Dual<S>]) -> Vec<Dual<S>>,
{
    let n = x.len();
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut xd: Vec<Dual<S>> = x.iter().map(|&v| Dual::constant(v)).collect();
    for k in 0..n {
        xd[k].d = S::one();
        let out = f(&xd);
        if rows.is_empty() {
            rows = vec![vec![S::zero(); n]; out.len()];
        }
        for (i, o) in out.iter().enumerate() {
            rows[i][k] = o.d;
        }
        xd[k].d = S::zero();
    }
    rows
}
