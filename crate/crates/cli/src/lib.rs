//! Command-line companion to `brcgan-core`: TOML experiment configs, the
//! multi-seed training harness with deterministic CSV artifacts, checkpoint
//! scoring, and the per-step cost benchmark.

pub mod bench;
pub mod config;
pub mod harness;
