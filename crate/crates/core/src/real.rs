//! Scalar abstraction so the exact operators can run in f64 or double-double.

use std::ops::{Add, Mul, Sub};

use twofloat::TwoFloat;

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    /// |self| rounded to f64.
    fn abs_f64(self) -> f64 {
        self.to_f64().abs()
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Real for TwoFloat {
    #[inline]
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }

    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    fn powi(self, n: i32) -> Self {
        // TwoFloat::powi misbehaves at zero; exponents here are small and non-negative.
        debug_assert!(n >= 0);
        (0..n).fold(TwoFloat::from(1.0), |acc, _| acc * self)
    }
}

/// max_i |a_i - b_i| rounded to f64, or `None` if any difference is not finite.
pub fn max_abs_diff<R: Real>(a: &[R], b: &[R]) -> Option<f64> {
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y).abs_f64();
        if !d.is_finite() {
            return None;
        }
        m = m.max(d);
    }
    Some(m)
}
