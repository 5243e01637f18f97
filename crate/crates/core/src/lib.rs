//! Coordinated frequency control of asynchronous AC areas coupled through
//! a multi-terminal HVDC grid: models, stability certificates, equilibria
//! and time-domain simulation.
//!
//! The crate is organized around the pipeline a study walks through:
//!
//! * [`graph`] — topologies, weighted Laplacians and the orthonormal
//!   complement of the all-ones direction;
//! * [`model`] — per-node physics, the distributed controller laws and the
//!   assembled closed-loop linear system;
//! * [`analysis`] — assumption checks, the Lyapunov / Schur-complement
//!   certificate, the direct Hurwitz test, equilibria and the KKT-based
//!   optimality gaps;
//! * [`sim`] — exact linear propagation, the stiff nonlinear integrators,
//!   scenario handling and trajectory diagnostics;
//! * [`synth`] — the six-terminal benchmark grid and randomized system
//!   families for property sweeps.
//!
//! All quantities are per-unit; states are deviations from the nominal
//! operating point.

pub mod analysis;
pub mod graph;
pub mod model;
pub mod sdirk;
pub mod sim;
pub mod synth;

pub use analysis::{
    certify, check_assumptions, complex_eigenvalues, equilibrium, generation_cost_weights,
    generation_optimum, hurwitz_check, lyapunov_certificate, objective_gap, voltage_optimum,
    AnalysisError, AssumptionOne, AssumptionTwo, CertificateReport, CertificationMethod,
    EquilibriumReport, HurwitzResult, ObjectiveGap,
};
pub use graph::{
    orthonormal_complement, proportionality_factor, Edge, GraphError, LaplacianMatrix, Topology,
};
pub use model::{
    assemble_full, assemble_reduced, controller_outputs, converter_control, generation_control,
    injected_current, AcArea, ClosedLoopSystem, CurrentMode, DcTerminal, GainSet, ModelError,
    PiLineParams, StateLayout, SystemDescription, V_MIN,
};
pub use sim::{
    lyapunov_along, simulate, simulate_linear, simulate_with_tolerances, steady_state_metrics,
    LyapunovTrace, Scenario, ScenarioEvent, SettlingTime, SimError, SimModel, SteadyStateMetrics,
    SystemForm, Trajectory,
};
