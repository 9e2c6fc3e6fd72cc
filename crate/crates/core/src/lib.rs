//! Simulation of a one-way-encoded, device-checked QKD protocol on a discrete
//! grid of measurement angles, against an eavesdropper who supplies the
//! entangled pairs from a hidden-variable ensemble.

pub mod adversary;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod quantum;
pub mod rng;
pub mod security;

pub use error::{AdversaryError, HarnessError, ProtocolError, QuantumError};
