//! Distance-dependent signal attenuation.
//!
//! The fitted model is a normalized series of negative powers,
//! `α(ρ) = ρ⁻¹ + Σ_{ℓ=1..L} β_ℓ ρ^{-ℓ-1}`, with the leading coefficient
//! pinned to 1. The cost function is invariant to a joint scaling of the
//! attenuation and multipath coefficients, so the unnormalized form would be
//! unidentifiable; only the normalized representation is exposed.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Normalized attenuation series; `coeffs` holds β₁..β_L (L may be 0, which
/// leaves a pure ρ⁻¹ law).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationModel<T: Scalar> {
    coeffs: Vec<T>,
}

impl<T: Scalar> AttenuationModel<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// `α(ρ) = ρ⁻¹ + Σ β_ℓ ρ^{-ℓ-1}` for ρ > 0.
    pub fn evaluate(&self, rho: T) -> Result<T> {
        check_range(rho)?;
        let inv = T::one() / rho;
        // Horner over inverse powers: ρ⁻¹(1 + ρ⁻¹(β₁ + ρ⁻¹(β₂ + …)))
        let mut acc = T::zero();
        for &beta in self.coeffs.iter().rev() {
            acc = (acc + beta) * inv;
        }
        Ok((T::one() + acc) * inv)
    }

    /// Sensitivity to β_ℓ (1-indexed): `ρ^{-ℓ-1}`.
    pub fn d_beta(&self, rho: T, ell: usize) -> Result<T> {
        check_range(rho)?;
        if ell == 0 || ell > self.coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "coefficient index {} out of range 1..={}",
                ell,
                self.coeffs.len()
            )));
        }
        Ok(Float::powi(rho, -(ell as i32 + 1)))
    }
}

/// Ground-truth attenuation used by the simulator: `ρ^{-1.25}`.
pub fn true_model_eval<T: Scalar>(rho: T) -> Result<T> {
    check_range(rho)?;
    Ok(Float::powf(rho, T::cast(-1.25)))
}

fn check_range<T: Scalar>(rho: T) -> Result<()> {
    if rho <= T::zero() {
        return Err(Error::Domain(format!(
            "attenuation undefined for range {}",
            rho.as_f64()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pure_inverse_law() {
        let model = AttenuationModel::<f64>::new(vec![]);
        assert!((model.evaluate(2.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_coeffs_at_unit_distance() {
        let model = AttenuationModel::<f64>::new(vec![0.0, 0.0]);
        assert!((model.evaluate(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_coefficients_at_ten_meters() {
        // Direct evaluation of the normalized series with β = (4.19, 1.79).
        let model = AttenuationModel::new(vec![4.19, 1.79]);
        let expected = 0.1 + 4.19e-2 + 1.79e-3;
        assert!((model.evaluate(10.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn true_model_values() {
        assert!((true_model_eval(1.0f64).unwrap() - 1.0).abs() < 1e-15);
        assert!((true_model_eval(16.0f64).unwrap() - 0.03125).abs() < 1e-15);
        // Frozen from an independent oracle: exp(-1.25 * ln 5).
        assert!((true_model_eval(5.0f64).unwrap() - 0.1337480609952844).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let model = AttenuationModel::<f64>::new(vec![1.0]);
        assert!(model.evaluate(0.0).is_err());
        assert!(model.evaluate(-1.0).is_err());
        assert!(true_model_eval(-2.0f64).is_err());
        assert!(model.d_beta(0.0, 1).is_err());
    }

    #[test]
    fn d_beta_values_and_index_range() {
        let model = AttenuationModel::<f64>::new(vec![3.0, -2.0]);
        assert!((model.d_beta(2.0, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!((model.d_beta(1.0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((model.d_beta(1.0, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(model.d_beta(2.0, 0).is_err());
        assert!(model.d_beta(2.0, 3).is_err());
    }

    #[test]
    fn d_beta_matches_central_difference() {
        let coeffs = vec![4.19, 1.79, -0.3];
        for ell in 1..=3usize {
            for &rho in &[0.7, 2.0, 9.5] {
                let h = 1e-5;
                let mut plus = coeffs.clone();
                plus[ell - 1] += h;
                let mut minus = coeffs.clone();
                minus[ell - 1] -= h;
                let fd = (AttenuationModel::new(plus).evaluate(rho).unwrap()
                    - AttenuationModel::new(minus).evaluate(rho).unwrap())
                    / (2.0 * h);
                let analytic = AttenuationModel::new(coeffs.clone()).d_beta(rho, ell).unwrap();
                assert!(
                    ((fd - analytic) / analytic).abs() < 1e-9,
                    "ell={ell} rho={rho}: fd={fd} analytic={analytic}"
                );
            }
        }
    }

    #[test]
    fn vanishes_at_infinity() {
        let model = AttenuationModel::new(vec![50.0, 80.0]);
        assert!(model.evaluate(1e6f64).unwrap() < 1e-5);
    }

    proptest! {
        #[test]
        fn monotone_decreasing_for_nonnegative_coeffs(
            b1 in 0.0f64..10.0, b2 in 0.0f64..10.0,
            rho in 0.1f64..100.0, step in 0.01f64..10.0,
        ) {
            let model = AttenuationModel::new(vec![b1, b2]);
            prop_assert!(model.evaluate(rho).unwrap() > model.evaluate(rho + step).unwrap());
        }

        #[test]
        fn coefficient_part_is_linear(
            b1 in -5.0f64..5.0, b2 in -5.0f64..5.0, rho in 0.5f64..50.0,
        ) {
            let single = AttenuationModel::new(vec![b1, b2]);
            let double = AttenuationModel::new(vec![2.0 * b1, 2.0 * b2]);
            let base = 1.0 / rho;
            let d1 = single.evaluate(rho).unwrap() - base;
            let d2 = double.evaluate(rho).unwrap() - base;
            // tolerance relative to the evaluation scale, not the difference
            prop_assert!((d2 - 2.0 * d1).abs() < 1e-12 * (base + d1.abs() + d2.abs()));
        }
    }
}
