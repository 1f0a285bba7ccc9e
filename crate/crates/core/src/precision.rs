//! Arithmetic shared by the `f64` and double-double evaluations of the
//! stationarity recursion.

use std::ops::{Add, Mul, Sub};

use twofloat::TwoFloat;

pub(crate) trait Real:
    Copy + From<f64> + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self>
{
    fn sqrt(self) -> Self;
    /// `self / rhs`. The division operator of `TwoFloat` 0.8 only reaches
    /// `f64` accuracy, so quotients go through this instead.
    fn over(self, rhs: Self) -> Self;
    fn to_f64(self) -> f64;
    /// Leading component; carries the sign and any overflow.
    fn lead(self) -> f64;

    fn zero() -> Self {
        Self::from(0.0)
    }

    /// Positive and finite. `TwoFloat` orders every non-finite value above
    /// all finite ones, so comparisons go through the leading component.
    fn is_positive_finite(self) -> bool {
        let x = self.lead();
        x > 0.0 && x.is_finite()
    }

    fn max_zero(self) -> Self {
        if self.lead() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

impl Real for f64 {
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn over(self, rhs: Self) -> Self {
        self / rhs
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn lead(self) -> f64 {
        self
    }
}

impl Real for TwoFloat {
    fn sqrt(self) -> Self {
        if self.hi() > 0.0 {
            TwoFloat::sqrt(self)
        } else {
            TwoFloat::from(0.0)
        }
    }

    fn over(self, rhs: Self) -> Self {
        // One correction step on the f64 quotient; products and sums of
        // `TwoFloat` are accurate.
        let inverse = 1.0 / rhs.hi();
        let q = self * inverse;
        q + (self - rhs * q) * inverse
    }

    fn to_f64(self) -> f64 {
        self.hi() + self.lo()
    }

    fn lead(self) -> f64 {
        self.hi()
    }
}
