//! Simulation toolkit for an optically fed, electronically steered mm-wave
//! metasurface transmitter.
//!
//! The pipeline follows the physical signal path:
//!
//! * [`optics`]: laser, Mach-Zehnder intensity modulation, free-space coupling
//!   into the grating couplers and photodetection.
//! * [`noise`]: photocurrent noise variances and the per-element / array SNR.
//! * [`calibration`]: vector-modulator phase shifter model and its look-up
//!   table calibration.
//! * [`beam`]: array geometry, steering and far-field patterns, EIRP.
//! * [`modem`]: QAM/RRC waveform generation, AWGN, demodulation and EVM.
//! * [`link`]: scenario configuration, link distance and the end-to-end runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beam;
pub mod bessel;
pub mod calibration;
pub mod constants;
pub mod link;
pub mod modem;
pub mod noise;
pub mod optics;
pub mod units;

mod error;
mod seed;

pub use error::Error;
pub use seed::derive_seed;

pub type Result<T, E = Error> = std::result::Result<T, E>;
