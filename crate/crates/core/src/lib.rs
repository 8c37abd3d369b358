//! Wideband multi-source localization from multi-sensor spectra.
//!
//! The crate simulates sensor measurements for configurable scenes
//! ([`synth`]), evaluates a concentrated maximum-likelihood cost over source
//! positions, attenuation coefficients, and multipath parameters ([`cost`]),
//! provides the closed-form Jacobian of the projection residual
//! ([`sensitivity`]), minimizes the cost with a differential-evolution →
//! Levenberg-Marquardt hybrid ([`optimize`]), and computes Cramér-Rao lower
//! bounds for the position estimates ([`crlb`]).
//!
//! All numerics are generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the aliases below pin the common concrete choices.

pub mod attenuation;
pub mod cost;
pub mod crlb;
pub mod error;
pub mod optimize;
pub mod scalar;
pub mod scene;
pub mod sensitivity;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Scenario64 = scene::Scenario<f64>;
pub type Scenario32 = scene::Scenario<f32>;
pub type SpectrumData64 = synth::SpectrumData<f64>;
pub type SpectrumData32 = synth::SpectrumData<f32>;
pub type ParamVector64 = cost::ParamVector<f64>;
pub type AttenuationModel64 = attenuation::AttenuationModel<f64>;
pub type FisherMatrix64 = crlb::FisherMatrix<f64>;
