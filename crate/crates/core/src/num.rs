//! Scalar abstraction for the numeric parts of the crate.
//!
//! Statistics, decay curves and the link model are written against [`Real`]
//! so they work for `f32` and `f64` alike. Interval statistics additionally
//! have an exact path over integer milliseconds using rationals.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`; constants in this crate are all representable.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Exact rational used for interval statistics over integer milliseconds.
pub type Exact = num_rational::Ratio<i128>;

pub(crate) fn exact_to_f64(r: &Exact) -> f64 {
    // Both operands are reduced, so equal rationals convert identically.
    *r.numer() as f64 / *r.denom() as f64
}
