//! Throughput-optimal transmission scheduling for RF energy-harvesting
//! devices whose harvest depends on the energy already stored.
//!
//! * [`charge_model`]: the RC charging law and its inverse.
//! * [`offline_scheduler`]: the KKT-recursion solver for known arrivals.
//! * [`strategies`]: max-harvest, classic tight-string and online policies.
//! * [`simulator`]: feedback replay, scenario generation, Monte Carlo sweeps.
//! * [`oracle`]: brute-force grid optimizer for validating the solver.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charge_model;
pub mod error;
pub mod offline_scheduler;
pub mod oracle;
mod precision;
pub mod simulator;
mod simultaneous;
pub mod strategies;

pub use charge_model::ChargeCircuit;
pub use error::{Error, Result};
pub use offline_scheduler::{EnergyPacket, EnergyScenario, SolveReport, TransmissionSchedule};
