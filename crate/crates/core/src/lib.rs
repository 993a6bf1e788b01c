//! Cancellation-carrier spectrum shaping for non-contiguous OFDM.
//!
//! The design path builds sampled subcarrier spectra ([`spectral`]), solves
//! for the cancellation map `W` under a mean power budget ([`solver`]) and
//! places cancellation carriers greedily ([`occs`]). [`simlab`] verifies the
//! design on synthesized waveforms and [`oracle`] holds brute-force references.

pub mod error;
pub mod export;
pub mod spectral;
pub mod occs;
pub mod oracle;
pub mod simlab;
pub mod solver;

pub use error::{Error, Result};
