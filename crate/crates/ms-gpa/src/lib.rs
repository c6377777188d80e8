//! Simulator and analysis toolkit for the Mølmer–Sørensen (MS) two-qubit
//! entangling gate coupled to a single motional mode.
//!
//! The crate covers the full workflow from Hamiltonian construction to
//! figure-ready CSV traces:
//!
//! * [`ops`]: dense complex linear algebra. Kronecker products, truncated
//!   boson operators, matrix exponential, partial trace/transpose, Hermitian
//!   eigensolve, state and Hilbert-space bookkeeping.
//! * [`model`]: MS gate parameters, interaction-picture Hamiltonian, the
//!   exact closed-form propagator, and weak-field analytic states.
//! * [`dynamics`]: fixed-step RK4 propagation of the Schrödinger and
//!   Lindblad equations with built-in conservation diagnostics.
//! * [`gp`]: geometric phases for pure states (Pancharatnam), mixed states
//!   (interferometric, via eigenvector branches), and subsystems.
//! * [`analysis`]: entanglement negativity, X-state checks, noise-induced
//!   GP deviations, and decoherence-rate calibration.
//! * [`cli`]: scenario configs, named presets, and deterministic CSV output
//!   backing the `ms-gpa` command-line tool.
//!
//! Units: ħ = 1, angular frequencies in rad/s, times in seconds.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod gp;
pub mod model;
pub mod ops;

#[cfg(test)]
pub(crate) mod testutil;

pub use num_complex::Complex64;

/// Crate-wide error type. Variants are grouped by failure class so the CLI
/// can map them onto exit codes (config errors vs numerical failures).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad dimensions, mismatched Hilbert spaces, or invalid operator shape.
    #[error("shape error: {0}")]
    Shape(String),
    /// Physically invalid or out-of-range parameters.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A numerical routine failed to meet its accuracy contract.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A propagated state violated a conservation law beyond tolerance.
    #[error("state integrity: {0}")]
    StateIntegrity(String),
    /// The sampling grid is too coarse to resolve the requested quantity.
    #[error("resolution error: {0}")]
    Resolution(String),
    /// Root finding / calibration failed to bracket or converge.
    #[error("calibration error: {0}")]
    Calibration(String),
    /// Scenario configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    /// File I/O while reading configs or writing results.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input (config/parameters) rather than
    /// by the numerics. The CLI exits 2 for these and 3 for the rest.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_) | Error::Shape(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
