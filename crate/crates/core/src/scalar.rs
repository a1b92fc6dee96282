//! Scalar abstraction shared by the numeric kernels.
//!
//! Pipeline data is stored in `f32`; the kernels (flow solver, alignment,
//! heatmaps) are generic so tests and evaluation can run them in `f64`.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumCast + Default + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the implementing types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
