//! Physical constants and boundary unit conversions.
//!
//! Internally every frequency and rate is angular (rad/s). Configuration files
//! and CSV outputs use ordinary frequency in Hz; conversion happens only at
//! those boundaries.

use std::f64::consts::PI;

/// Reduced Planck constant, J·s (2019 SI exact).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (2019 SI exact).
pub const K_B: f64 = 1.380_649e-23;
/// Speed of light, m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

pub const TAU: f64 = 2.0 * PI;

#[inline]
pub fn hz_to_rad(f_hz: f64) -> f64 {
    TAU * f_hz
}

#[inline]
pub fn rad_to_hz(omega: f64) -> f64 {
    omega / TAU
}

/// Laser angular frequency from vacuum wavelength.
pub fn wavelength_to_omega(lambda_m: f64) -> f64 {
    TAU * C_LIGHT / lambda_m
}

/// Convert a power ratio to decibels.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}
