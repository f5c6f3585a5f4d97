//! Deterministic simulator for switching-gradient federated optimization
//! with constraints, error-feedback compression and partial participation.

pub mod analysis;
pub mod cli;
pub mod compression;
pub mod config;
pub mod engine;
pub mod error;
pub mod numerics;
pub mod problems;
pub mod streams;
pub mod switching;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{Domain, ModelVector};
