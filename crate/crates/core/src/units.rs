//! Unit conversions.
//!
//! Internally every rate is an angular frequency in rad/µs and every
//! duration is in µs. Configuration files quote frequencies as value/2π in
//! MHz, which is what [`mhz`] converts from.

use std::f64::consts::TAU;

/// value/2π in MHz -> angular frequency in rad/µs.
pub fn mhz(value: f64) -> f64 {
    value * TAU
}

/// Angular frequency in rad/µs -> value/2π in MHz.
pub fn to_mhz(omega: f64) -> f64 {
    omega / TAU
}

/// value/2π in kHz -> rad/µs.
pub fn khz(value: f64) -> f64 {
    value * TAU * 1e-3
}
