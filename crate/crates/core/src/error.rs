use std::path::PathBuf;

use thiserror::Error;

use crate::quantum::Angle;

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error("angle {0} rad is not a multiple of π/8 in [0, π]")]
    OffGrid(f64),
    #[error("φ grid index {0} is outside 0..=4")]
    InvalidPhi(u8),
    #[error("c grid index {0} must be 0 or 4")]
    InvalidOffset(u8),
    #[error("sign value {0} must be +1 or -1")]
    InvalidSign(i8),
    #[error("invalid joint distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("local-side sign function has {0} entries, expected 9")]
    SignFunctionNotTotal(usize),
    #[error("local-side sign function differs at {0} and {0}+π/2; the non-local side would not flip with the hidden offset")]
    SignFunctionNotPeriodic(Angle),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("weight {0} of member {1} is negative or not finite")]
    InvalidWeight(f64, u32),
    #[error("ensemble weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("lambda id {0} appears more than once")]
    DuplicateLambda(u32),
    #[error("member {id} violates {count} consistency identities, first: {first}")]
    ConstraintViolation { id: u32, count: usize, first: String },
    #[error("member {0} does not fit its slot in the critical ensemble: {1}")]
    CriticalPart(u32, String),
    #[error("CHSH target {0} is outside [2, 4]")]
    TargetOutOfRange(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("test cell (a={a}, b={b}) has {count} samples, at least {required} required")]
    InsufficientData { a: Angle, b: Angle, count: usize, required: usize },
    #[error("basis angles {0} and {1} are neither equal nor π/2 apart")]
    UndecodableBases(Angle, Angle),
    #[error("only {available} decoded bits, a key block needs {required}")]
    InsufficientBits { available: usize, required: usize },
    #[error("{party} received {event} while in state {state}")]
    OutOfOrder { party: &'static str, event: &'static str, state: &'static str },
    #[error("transcript is missing {0} for round {1}")]
    MissingMessage(&'static str, u32),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run specification: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}
