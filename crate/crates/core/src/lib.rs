//! Lagrangian finite-difference solver and verification diagnostics for the
//! viscous liquid-gas two-phase model expanding into vacuum.

pub mod model;
pub mod solver;
mod tridiag;

pub use model::{
    m_of_q, make_initial_data, pressure, q_of_m, visc_coeff, Assumption, InitialData, ModelError,
    ModelParams, Profile, ProfileSpec, VacuumRegime,
};
pub use solver::{run, run_observed, step, Grid, LagrangianState, SolverError, StepControl};
pub mod diagnostics;

pub use diagnostics::{
    fit_decay, reconstruct_eulerian, theoretical_rate, DecayFit, DecayTarget, DiagnosticsError,
    DiagnosticsRecord, Endpoint, EulerianSample, RatePrediction, Recorder, ThetaCase,
};
