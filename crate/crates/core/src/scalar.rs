//! Scalar abstraction so the numerical core works over `f32` or `f64`.

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftNum;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable everywhere in the crate: real field for the
/// linear algebra, `Float` for `num_complex` helpers, `FftNum` for the FFTs,
/// plus sampling and serde support.
///
/// Method-name collisions between `Float` and `ComplexField` are resolved by
/// qualified calls (`Float::sqrt(x)` etc.) in generic code.
pub trait Scalar:
    RealField + Float + FftNum + SampleUniform + Serialize + DeserializeOwned + Default
{
    /// Lossy conversion from `f64`, for numeric literals in generic code.
    fn cast(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 literal")
    }

    /// Lossy widening to `f64`, for reporting and formatting.
    fn as_f64(self) -> f64;

    /// One standard-normal draw.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

/// Pairwise (tree) summation. Deterministic for a given slice order and more
/// accurate than a running sum on long accumulations; used wherever per-bin
/// terms are reduced so results do not depend on the worker count.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    if values.len() <= 8 {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-10);
    }

    #[test]
    fn cast_round_trips() {
        assert_eq!(f64::cast(1.5), 1.5);
        assert_eq!(f32::cast(0.25), 0.25f32);
        assert_eq!(0.25f32.as_f64(), 0.25);
    }
}
