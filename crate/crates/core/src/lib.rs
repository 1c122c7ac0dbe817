//! Link-level Monte Carlo simulator for wideband mmWave MIMO-OFDM with a
//! two-stage digital combining receiver.
//!
//! The crate is organised bottom-up: [`numerics`] provides the complex matrix
//! kernels, [`channel`] generates the geometric cluster channel, [`estimation`]
//! holds the pilot-based estimators, [`beamforming`] builds precoders and
//! combiners, [`spectral_efficiency`] evaluates rates, and [`harness`] runs
//! whole experiments.

// `!(x > 0.0)` is used on purpose so NaN fails the same checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod numerics;
pub mod spectral_efficiency;

pub use error::{Error, Result};
