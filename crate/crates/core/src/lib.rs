//! Equalized-odds learning with fair dummy attributes.
//!
//! A fair dummy `Ã` is a copy of the sensitive attribute resampled from the
//! estimated conditional law `P(A | Y)`. Because it is drawn without looking
//! at the prediction, `(Ŷ, Ã, Y)` satisfies `Ŷ ⫫ Ã | Y` by construction, and
//! the crate uses that synthetic triple three ways:
//!
//! - [`fairtrain`] regularizes a predictor so that `(Ŷ, A, Y)` becomes hard to
//!   tell apart from `(Ŷ, Ã, Y)` (adversarial discriminator plus a
//!   second-moment penalty).
//! - [`fairtest`] runs a holdout randomization test of `Ŷ ⫫ A | Y` for any
//!   fixed prediction rule.
//! - [`conformal`] builds split-conformal label sets with coverage holding
//!   separately within each group.
//!
//! Everything that draws random numbers takes an explicit generator; see
//! [`rng::stream_rng`] for how per-purpose streams are derived from one seed.

pub mod checkpoint;
pub mod conformal;
pub mod data;
pub mod dummies;
pub mod error;
pub mod fairtest;
pub mod fairtrain;
pub mod nn;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
