//! Simulation of qubit-cavity quantum teleportation under continuous
//! homodyne monitoring of the shared cavity field.
//!
//! The crate builds the joint qubit-qubit-cavity state, applies ideal
//! entangling gates, unravels the cavity decay with a diffusive stochastic
//! master equation, and infers the effective Bell measurement outcome from
//! the homodyne record in two ways: direct integrated-signal thresholding
//! and past-quantum-state retrodiction with a backward effect-matrix pass.

pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod pqs;
pub mod sme;
pub mod teleport;
pub mod transmon;

pub use error::{Error, Result};
pub use hilbert::{
    coherent_state, fidelity, haar_random_qubit, partial_trace, DensityOperator,
    HilbertSpaceLayout, Ket, Layout, OperatorMatrix,
};
pub use pqs::{BellPovm, EffectMatrix, RetrodictionResult};
pub use sme::{HomodyneRecord, PhaseSpec, SmeParams};
pub use teleport::{
    run_ensemble, run_trajectory, BellOutcome, EnsembleStats, ProtocolConfig, RunResult,
    Strategy, SweepPoint,
};
pub use transmon::{CalibrationReport, FluxPulse, TransmonParams};
