//! Config-driven orchestration of the guided summarization pipeline.

pub mod config;
pub mod stages;

pub use config::{Profile, RunConfig, SEED_ENV};
pub use stages::{ModelKind, Stage};
