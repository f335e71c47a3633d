//! Simulation of a continuous, polarization-based non-demolition measurement
//! of the Cs clock-transition pseudo-spin.
//!
//! The crate is organized bottom-up:
//!
//! * [`angular_momentum`]: exact 3j/6j symbols and D1 dipole elements,
//! * [`atom_model`]: Cs constants, ground-state registry, Zeeman Hamiltonian,
//! * [`lightshift`]: probe light-shift operator, differential clock shift,
//!   magic detunings, two-color balancing,
//! * [`birefringence`]: per-state phases, Stokes-vector polarimetry, shot noise
//!   and signal-to-noise figures,
//! * [`dynamics`]: Lindblad master equation for microwave Rabi oscillations under
//!   probe-induced optical pumping,
//! * [`ensemble`]: inhomogeneity averaging, decay-time and measurement-strength sweeps,
//! * [`fit`]: decaying-sinusoid least squares used to read records.

pub mod angular_momentum;
pub mod atom_model;
pub mod birefringence;
pub mod dynamics;
pub mod ensemble;
pub mod fit;
pub mod lightshift;

pub use angular_momentum::{dipole_element, wigner3j, wigner6j, DipoleElement, HalfInt};
pub use atom_model::{state_registry, zeeman_hamiltonian, CloudConfig, CsD1Constants, GroundState, Operator};
pub use birefringence::{PhaseSpectrum, PseudoSpin, StokesVector};
pub use dynamics::{DensityMatrix, MicrowaveConfig, Scenario, SimRecord, TimeGrid};
pub use ensemble::{InhomogeneityConfig, MeasurementFigure};
pub use fit::FitError;
pub use lightshift::{LightShiftOperator, MagicPoint, Polarization, ProbeConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("angular momentum: {0}")]
    AngularMomentum(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "probe detuning {detuning_mhz} MHz is within {limit_mhz} MHz of the F={ground_f} -> F'={excited_f} resonance"
    )]
    NearResonance {
        ground_f: i32,
        excited_f: i32,
        detuning_mhz: f64,
        limit_mhz: f64,
    },

    #[error("integration step {step_s:e} s exceeds the stability limit {limit_s:e} s")]
    StepSize { step_s: f64, limit_s: f64 },

    #[error("state invariant violated at t = {time_s:e} s: {detail}")]
    InvariantViolation { time_s: f64, detail: String },

    #[error("no two-color operating point: {0}")]
    NoTwoColorSolution(String),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("record format: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
