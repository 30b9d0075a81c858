//! Scalar abstraction shared by the numeric modules.
//!
//! Classifier weights, feature values, ROC coordinates and similarity scores
//! are generic over [`Scalar`], which is implemented for `f32` and `f64`.
//! Experiments run in `f64`; see the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and hyperparameters.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `ln(sum(exp(xs)))`.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let s: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Softmax with max-subtraction, written into `out`.
pub fn softmax_into<F: Scalar>(scores: &[F], out: &mut [F]) {
    debug_assert_eq!(scores.len(), out.len());
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_handles_large_scores() {
        let mut out = [0.0f64; 3];
        softmax_into(&[1000.0, 1000.0, 1000.0], &mut out);
        for p in out {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut out32 = [0.0f32; 2];
        softmax_into(&[-500.0f32, 500.0], &mut out32);
        assert_eq!(out32[1], 1.0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.3f64, -1.2, 2.5];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-30.0f64, -1.0, 0.0, 0.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
