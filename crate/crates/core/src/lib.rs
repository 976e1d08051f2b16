//! Rank-1 subspace channel estimation for massive-MIMO uplink.
//!
//! The crate is `no_std` (with `alloc`) so the estimators can run on targets
//! without an operating system. Enable either the default `std` feature or the
//! `libm` feature for floating-point transcendental functions.
//!
//! Pipeline, per user:
//!
//! 1. [`model::despread`] the received block with that user's pilot column.
//! 2. Embed the despread vector in a Hankel matrix ([`rank1::build_hankel`]).
//! 3. Extract the signal subspace, either exactly ([`rank1::signal_subspace`])
//!    or with a Nyström sketch ([`fastpath::approx_subspace`]).
//! 4. Scan the pseudo-spectrum for the strongest peaks ([`rank1::detect_peaks`]).
//! 5. Read the path gains out by beamforming and rebuild the channel.
//!
//! [`baselines`] carries the linear reference estimators (LS, genie-aided
//! MMSE, FFT-angular) and the closed-form bounds they are compared against.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("rankone-core needs either the `std` or the `libm` feature");

extern crate alloc;

pub mod baselines;
mod error;
pub mod estimator;
pub mod fastpath;
pub mod linalg;
pub(crate) mod math;
pub mod model;
pub mod rank1;
pub mod rng;

pub use error::{Error, Result};
pub use estimator::{
    ChannelEstimate, EstimatorOptions, EstimatorTag, GainMode, NystromCore, NystromWeight,
    PathEstimate, Refinement,
};
pub use linalg::{CMatrix, CVector, C64};
pub use model::{
    ChannelRealization, CorrelationMode, PilotKind, PilotMatrix, ReceivedSignal, SystemConfig,
};
