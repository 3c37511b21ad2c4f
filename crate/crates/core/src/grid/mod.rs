//! Network model, the AC power flow standing in for the physical feeder, and
//! the model-based sensitivity oracle.

mod model;
mod powerflow;
mod sensitivity;

pub use model::{BranchSpec, BusKind, BusSpec, ModelError, NetworkModel, NETWORK_SCHEMA_VERSION};
pub use powerflow::{solve_power_flow, GridState, Injections, PowerFlow, PowerFlowError, PowerFlowOptions};
pub use sensitivity::{
    injections_of, linearized_voltage, oracle_columns, oracle_sensitivities, OracleOptions, Sensitivities,
    SensitivityMatrix,
};
