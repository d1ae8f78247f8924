//! Simulation and calibration of time-interleaved ADCs.
//!
//! The crate models an M-channel TIADC with per-channel offset, gain and
//! sample-time mismatch, estimates those mismatches from a captured sine
//! wave, and removes the resulting image spurs with a bank of first-order
//! FIR correction filters (a gain term plus a scaled discrete
//! differentiator).
//!
//! Module map:
//!
//! * [`model`]: tone synthesis, mismatch model, quantizer, interleaving.
//! * [`estimator`]: four-parameter sine fitting and mismatch extraction.
//! * [`calib`]: correction filter design, fixed-point taps, calibration.
//! * [`polyphase`]: L-way polyphase convolution, bit-exact with serial.
//! * [`metrics`]: spectra, SINAD/ENOB, mismatch spur tables.
//! * [`experiments`]: scenarios, sweeps, capture files, config files.

pub mod calib;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod polyphase;

pub use error::{Error, Result};
