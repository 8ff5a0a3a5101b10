//! Synthetic mixed-signal leakage laboratory.
//!
//! Models a victim chip whose digital activity (AES-128 encryptions) couples
//! into its on-die radio and reappears as amplitude structure around the
//! carrier's clock harmonics, then provides the full attack pipeline against
//! the synthetic captures: trace segmentation, leakage localization across a
//! frequency sweep (Welch t-test and pattern detection), profiled correlation
//! attacks, and key-rank estimation.

pub mod attack;
pub mod collect;
pub mod dsp;
pub mod error;
pub mod keyrank;
pub mod locate;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod segment;
pub mod sim;
pub mod store;

pub use error::{Error, Result};
