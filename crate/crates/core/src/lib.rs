//! Gaussian-state simulation and metrology for cascaded multi-phase
//! interferometric sensors.

pub mod evolution;
pub mod experiment;
pub mod gaussian;
pub mod lattice;
pub mod metrology;
pub mod parallel;

pub use evolution::{
    de_minimize, optimize_sensor, DeConfig, FreeParameterSpec, OptimizationResult,
};
pub use gaussian::{GaussianError, GaussianState, ModeLabel, Port, Side, Site, SymplecticMatrix};
pub use lattice::{
    run_sensor, AuxiliaryInput, ConfigError, PulseSpec, SensorConfig, SensorOutput, SidePolicy,
};
pub use metrology::{
    crb, fisher_information, fisher_matrix, quantum_advantage, FisherResult, MetrologyError,
};
pub use parallel::Execution;
