use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index {index} out of range 1..={n_levels}")]
    IndexOutOfRange { index: usize, n_levels: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("steady state is not unique: null space has dimension {0}")]
    DegenerateNullSpace(usize),
    #[error("linear solve did not converge: {0}")]
    NonConvergence(String),
    #[error("integrator step size underflow at t = {t} (h = {h})")]
    StiffnessFailure { t: f64, h: f64 },
    #[error("mean photon number {0:e} is too small to normalize a correlation")]
    ZeroPhoton(f64),
    #[error("excited-state population {0:e} is too small for the figure of merit")]
    DivideByZero(f64),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),
    #[error("rung {n} exceeds Fock cutoff {cutoff}")]
    RungExceedsCutoff { n: usize, cutoff: usize },
    #[error("trajectory step-size failure at t = {t}: state norm underflow")]
    StepSizeFailure { t: f64 },
    #[error("invalid scan: {0}")]
    InvalidScan(String),
}

pub type Result<T> = std::result::Result<T, Error>;
