//! Experiment harness for the entropy-dynamics laboratory: config
//! ingestion, seeded training loops, sweeps, trace emission and the
//! self-contained verification suite behind the `endyn` binary.

pub mod config;
pub mod emit;
pub mod runner;
pub mod verify;
