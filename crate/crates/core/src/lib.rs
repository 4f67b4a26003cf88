//! Frequency-domain simulation and inference for measurement-based feedback
//! cooling of an optomechanical resonator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod feedback;
pub mod inference;
pub mod io;
pub mod params;
pub mod response;
pub mod sideband;
pub mod spectra;
pub mod units;

pub use error::{Error, Result};
