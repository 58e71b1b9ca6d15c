//! Numerically safe activations.

use crate::scalar::Scalar;

/// Logistic sigmoid, branching on sign to avoid overflow in `exp`.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Sigmoid derivative expressed from the output: `y·(1−y)`.
#[inline]
pub fn sigmoid_derivative_from_output<T: Scalar>(y: T) -> T {
    y * (T::one() - y)
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Subgradient convention: 0 at the kink.
#[inline]
pub fn relu_derivative<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}
