//! Scalar abstraction: every numeric kernel in this crate is generic over a
//! floating-point type so the same code runs in f32 or f64. Heavy math
//! (warping, attention, gradient checks) is expected to run in f64; 16-bit
//! conversion happens only at the wire boundary.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: f32 or f64.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Constant constructor from f64.
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("constant must be representable")
    }

    /// Widening conversion used at serialization and reporting boundaries.
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar must convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic sigmoid, strictly inside (0, 1) for inputs of moderate magnitude.
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// GELU with the tanh approximation (used by the reconstruction network and
/// the fusion feed-forward block; the gradient below matches it exactly).
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    let c = T::c(0.7978845608028654); // sqrt(2/pi)
    let a = T::c(0.044715);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_prime<T: Real>(x: T) -> T {
    let half = T::c(0.5);
    let c = T::c(0.7978845608028654);
    let a = T::c(0.044715);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::c(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_center_and_symmetry() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let x = 1.7f64;
        let s = sigmoid(x) + sigmoid(-x);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_saturates() {
        assert!(sigmoid(100.0f64) >= 1.0 - 1e-9);
        assert!(sigmoid(-100.0f64) <= 1e-9);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let h = 1e-6f64;
        for &x in &[-2.3, -0.7, 0.0, 0.4, 1.9] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_prime(x)).abs() < 1e-8, "x={x}");
        }
    }
}
