//! Simulation of multi-stage adversarial machine-learning attacks against the
//! priority classifier that a 5G base station runs for vehicle-to-microgrid
//! (V2M) energy requests.
//!
//! The crate is organised along the attack pipeline:
//!
//! - [`dataset`]: microgrid observations, CSV ingestion, a synthetic scenario
//!   generator, standardization and K-means priority labelling.
//! - [`models`]: six from-scratch classifiers behind one fit/predict surface.
//! - [`cgan`]: a label-conditioned GAN for tabular features.
//! - [`adversary`]: data collection, CGAN augmentation, surrogate selection
//!   and evasion crafting.
//! - [`evaluation`]: ADR/EIR scoring and the case A–E experiment grid.
//! - [`commands`]: the config-driven entry points used by the `v2m-aml` binary.

pub mod adversary;
pub mod cgan;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod models;
pub mod seed;

mod error;

pub use error::{Error, Result};
