//! Scalar abstraction shared by the numerical kernels.
//!
//! Everything that has to run in extended precision (quadrature rules, the
//! Stieltjes procedure, basis evaluation, the epsilon transform and the skew
//! inversion) is written against [`Real`]. `f32`, `f64` and
//! [`DoubleDouble`](crate::dd::DoubleDouble) implement it.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::Neg;

use num_traits::{FromPrimitive, Num, NumAssignOps, ToPrimitive};

/// Real scalar used by the generic numerical code.
pub trait Real:
    Copy
    + Debug
    + Display
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Num
    + NumAssignOps
    + Neg<Output = Self>
    + FromPrimitive
    + ToPrimitive
    + Sum
{
    /// Decimal digits carried by the type.
    const DIGITS: u32;

    /// Unit roundoff.
    fn epsilon() -> Self;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;

    fn is_finite(self) -> bool;

    fn of_usize(k: usize) -> Self {
        Self::of(k as f64)
    }

    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    fn half() -> Self {
        Self::of(0.5)
    }
}

macro_rules! impl_real_float {
    ($t:ty, $digits:expr) => {
        impl Real for $t {
            const DIGITS: u32 = $digits;

            #[inline]
            fn epsilon() -> Self {
                <$t>::EPSILON
            }
            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real_float!(f32, 7);
impl_real_float!(f64, 16);

/// Neumaier-compensated running sum in any [`Real`].
#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<T: Real> {
    sum: T,
    comp: T,
}

impl<T: Real> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Real> CompensatedSum<T> {
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator in fixed order.
pub fn compensated_sum<T: Real, I: IntoIterator<Item = T>>(it: I) -> T {
    let mut acc = CompensatedSum::default();
    for x in it {
        acc.add(x);
    }
    acc.value()
}
