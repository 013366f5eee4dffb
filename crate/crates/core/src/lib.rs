//! Simulation and receiver library for passive bistatic OFDM sensing with
//! joint communication.
//!
//! The chain is: bits and QAM framing ([`waveform`]), a multipath MIMO
//! channel ([`channel`]), range/velocity estimation ([`sensing`]), symbol
//! detection ([`detection`]), channel rebuild from estimates
//! ([`reconstruction`]), and the unfolded joint receiver ([`unfolded`]) that
//! iterates the three. [`harness`] runs trials and sweeps.

pub mod channel;
pub mod config;
pub mod detection;
pub mod error;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod reconstruction;
pub mod report;
pub mod rng;
pub mod sensing;
pub mod unfolded;
pub mod waveform;

pub use config::{Scene, SystemConfig};
pub use error::{Error, Result};
pub use grid::{FrameLayout, ResourceGrid};
pub use num_complex::Complex64;
