//! Quantum circuit description and tensor-ring simulation.

pub mod circuit;
pub mod gate;
pub mod ring;

pub use circuit::{BitString, CircuitProgram, GateOp, QuanTrCircuit, RotationAxis};
pub use gate::GateMatrix;
pub use ring::{run_circuit, MeasurementResult, TrState};
