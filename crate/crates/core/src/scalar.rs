//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used for deltas, directions and scores: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen a stored activation into this scalar.
    fn from_activation(x: f32) -> Self;

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn from_activation(x: f32) -> Self {
                x as $t
            }

            #[inline]
            fn from_f64_lossy(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Flip `v` so its first component with magnitude above `eps` is positive.
pub(crate) fn canonical_sign<S: Scalar>(v: &mut [S], eps: S) {
    if let Some(&first) = v.iter().find(|x| x.abs() > eps) {
        if first < S::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Format with 9 significant digits in scientific notation.
pub(crate) fn fmt_sig9<S: Scalar>(x: S) -> String {
    format!("{:.8e}", x.to_f64_lossy())
}
