//! Generic scalar abstraction for the numerical core.
//!
//! Everything downstream (measures, flows, distances, control fields) is
//! written against [`Real`] so the same code runs at `f32` or `f64`.
//! Concrete aliases for the common `f64` instantiation live at the crate
//! root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Shorthand conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert into scalar type")
    }

    /// Lossy view as `f64`, for formatting and I/O.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Coordinates of a point in dimension 1 or 2.
///
/// The crate supports `d <= 2`; for 1-D data the second component is kept
/// at zero. Using a fixed-size array keeps the per-particle integration
/// loops allocation-free.
pub type Coords<F> = [F; 2];

/// Zero point.
pub fn origin<F: Real>() -> Coords<F> {
    [F::zero(), F::zero()]
}

/// Euclidean distance restricted to the first `dim` coordinates.
pub fn dist<F: Real>(a: Coords<F>, b: Coords<F>, dim: usize) -> F {
    let mut s = F::zero();
    for k in 0..dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Quintic smoothstep: 0 for `s <= 0`, 1 for `s >= 1`, C^2 in between.
pub fn smoothstep5<F: Real>(s: F) -> F {
    if s <= F::zero() {
        F::zero()
    } else if s >= F::one() {
        F::one()
    } else {
        let s3 = s * s * s;
        let six = F::of(6.0);
        let fifteen = F::of(15.0);
        let ten = F::of(10.0);
        s3 * (six * s * s - fifteen * s + ten)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep5(0.0f64), 0.0);
        assert_eq!(smoothstep5(1.0f64), 1.0);
        assert_eq!(smoothstep5(-3.0f64), 0.0);
        assert_eq!(smoothstep5(7.0f64), 1.0);
        assert!((smoothstep5(0.5f64) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn smoothstep_monotone() {
        let mut prev = 0.0f64;
        for i in 0..=100 {
            let v = smoothstep5(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn dist_respects_dim() {
        let a = [0.0f64, 3.0];
        let b = [4.0f64, 7.0];
        assert_eq!(dist(a, b, 1), 4.0);
        assert!((dist(a, b, 2) - 32.0f64.sqrt()).abs() < 1e-12);
    }
}
