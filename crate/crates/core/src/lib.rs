//! Simulator for a single three-level atom coupled to a cavity mode and
//! driven around a closed four-wave-mixing cycle.
//!
//! Rates are angular frequencies in rad/µs and durations are in µs; see
//! [`units`]. The atom-cavity subsystem order is fixed to (atom, cavity).
//! Detunings follow Δ = ω_laser − ω_atom.

pub mod error;
pub mod fit;
pub mod hilbert;
pub mod ladder;
pub mod liouvillian;
pub mod model;
pub mod montecarlo;
pub mod observables;
pub mod scan;
pub mod units;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
