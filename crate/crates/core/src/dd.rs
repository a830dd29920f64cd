//! Double-double arithmetic: an unevaluated sum `hi + lo` of two f64 values
//! with `|lo| <= ulp(hi)/2`, giving about 32 significant decimal digits.
//!
//! The algorithms are the classic error-free transformations (two-sum,
//! fma-based two-product) with the accurate ("IEEE") variants of addition
//! and division.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{FromPrimitive, Num, One, ToPrimitive, Zero};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: 6.931_471_805_599_452_862e-1,
    lo: 2.319_046_813_846_299_558e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Multiplies by 2^k without intermediate overflow for |k| <= 2046.
fn ldexp(x: f64, k: i32) -> f64 {
    let h = k / 2;
    x * 2f64.powi(h) * 2f64.powi(k - h)
}

impl DoubleDouble {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    pub fn from_sum(a: f64, b: f64) -> Self {
        let (hi, lo) = two_sum(a, b);
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, mut e) = two_prod(self.hi, b);
        e += self.lo * b;
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }

    fn square_f64(a: f64) -> Self {
        let (hi, lo) = two_prod(a, a);
        Self { hi, lo }
    }

    fn scale2(self, k: i32) -> Self {
        Self {
            hi: ldexp(self.hi, k),
            lo: ldexp(self.lo, k),
        }
    }

    pub fn floor(self) -> Self {
        let fh = self.hi.floor();
        if fh == self.hi {
            let (hi, lo) = quick_two_sum(fh, self.lo.floor());
            Self { hi, lo }
        } else {
            Self { hi: fh, lo: 0.0 }
        }
    }

    pub fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            -(-self).floor()
        }
    }

    fn dd_sqrt(self) -> Self {
        if self.hi == 0.0 {
            return Self::zero();
        }
        if self.hi < 0.0 {
            return Self::new(f64::NAN, f64::NAN);
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let diff = self - Self::square_f64(ax);
        Self::from_sum(ax, diff.hi * x * 0.5)
    }

    fn dd_exp(self) -> Self {
        if self.hi > 709.78 {
            return Self::new(f64::INFINITY, 0.0);
        }
        if self.hi < -745.2 {
            return Self::zero();
        }
        if self.hi == 0.0 {
            return Self::one();
        }
        let k = (self.hi / LN2.hi).round();
        // |r| <= ln2/2, scaled down by 2^10 before the Taylor series.
        let r = (self - LN2.mul_f64(k)).scale2(-10);
        let mut term = r;
        let mut s = r;
        for i in 2..=12 {
            term = term * r / Self::from(i as f64);
            s += term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // expm1(2x) = 2 expm1(x) + expm1(x)^2
        for _ in 0..10 {
            s = s.scale2(1) + s * s;
        }
        (s + Self::one()).scale2(k as i32)
    }

    fn dd_ln(self) -> Self {
        if self.hi <= 0.0 {
            return Self::new(f64::NAN, f64::NAN);
        }
        let x = Self::from(self.hi.ln());
        // One Newton step on exp(x) = a doubles the f64 digits.
        x + self * (-x).dd_exp() - Self::one()
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == 0.0 {
            write!(f, "{:e}", self.hi)
        } else {
            write!(f, "{:e}{:+e}", self.hi, self.lo)
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let (p, mut e) = two_prod(self.hi, b.hi);
        e += self.hi * b.lo + self.lo * b.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    #[inline]
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let mut r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        r -= b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::from(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, b: Self) -> Self {
        self - (self / b).trunc() * b
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for DoubleDouble {
            #[inline]
            fn $m(&mut self, b: Self) {
                *self = *self $op b;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self { hi: 0.0, lo: 0.0 }
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0 && self.lo == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self { hi: 1.0, lo: 0.0 }
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = std::num::ParseFloatError;

    /// Parses through f64; the low word is lost.
    fn from_str_radix(s: &str, _radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        s.parse::<f64>().map(Self::from)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n - hi as i64) as f64;
        Some(Self::from_sum(hi, lo))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n as i128 - hi as i128) as f64;
        Some(Self::from_sum(hi, lo))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(Self::from(x))
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        let t = self.trunc();
        Some(t.hi as i64 + t.lo as i64)
    }
    fn to_u64(&self) -> Option<u64> {
        if self.hi < 0.0 {
            return None;
        }
        let t = self.trunc();
        Some((t.hi as i128 + t.lo as i128) as u64)
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl Real for DoubleDouble {
    const DIGITS: u32 = 32;

    fn epsilon() -> Self {
        Self::from(4.930_380_657_631_324e-32)
    }
    fn of(x: f64) -> Self {
        Self::from(x)
    }
    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn sqrt(self) -> Self {
        self.dd_sqrt()
    }
    fn exp(self) -> Self {
        self.dd_exp()
    }
    fn ln(self) -> Self {
        self.dd_ln()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Dd = DoubleDouble;

    fn rel(a: Dd, b: Dd) -> f64 {
        ((a - b) / b).as_f64().abs()
    }

    #[test]
    fn division_is_double_double_accurate() {
        let third = Dd::one() / Dd::from(3.0);
        assert!((third * Dd::from(3.0) - Dd::one()).as_f64().abs() < 1e-31);
        assert!(third.lo().abs() > 1e-18);
    }

    #[test]
    fn sqrt_two_squared() {
        let s = Dd::from(2.0).sqrt();
        assert!(rel(s * s, Dd::from(2.0)) < 1e-31);
        // sqrt(2) = 1.41421356237309504880168872420969807857
        assert_eq!(s.hi(), 1.414_213_562_373_095_1);
        assert!((s.lo() - (-9.667_293_313_452_913e-17)).abs() < 1e-31);
    }

    #[test]
    fn exp_matches_reference_values() {
        // exp(f64(-0.3)) split into hi/lo from a 50-digit reference
        let e = Dd::from(-0.3).exp();
        let reference = Dd::new(0.740_818_220_681_717_9, -1.805_530_505_953e-18);
        assert!(rel(e, reference) < 1e-30, "{e}");
        // exp(x) exp(-x) = 1
        for &x in &[-300.5, -12.25, 0.7, 5.0, 40.0] {
            let p = Dd::from(x).exp() * Dd::from(-x).exp();
            assert!((p - Dd::one()).as_f64().abs() < 1e-30, "x={x}");
        }
        assert_eq!(Dd::from(-800.0).exp(), Dd::zero());
    }

    #[test]
    fn ln_inverts_exp() {
        for &x in &[-20.0, -0.3, 0.7, 3.5, 100.0] {
            let y = Dd::from(x).exp().ln();
            assert!(
                (y - Dd::from(x)).as_f64().abs() < 1e-30 * x.abs().max(1.0),
                "x={x}"
            );
        }
    }

    #[test]
    fn integer_conversions_and_rem() {
        assert_eq!(Dd::from_i64(-7).unwrap().to_i64(), Some(-7));
        let r = Dd::from(7.5) % Dd::from(2.0);
        assert_eq!(r.as_f64(), 1.5);
        assert_eq!(Dd::from(-2.5).trunc().as_f64(), -2.0);
    }

    #[test]
    fn ordering_uses_low_word() {
        let a = Dd::new(1.0, 1e-20);
        let b = Dd::new(1.0, -1e-20);
        assert!(a > b);
    }
}
