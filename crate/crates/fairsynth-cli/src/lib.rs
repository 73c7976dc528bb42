//! Experiment harness: dataset ingestion, configuration, the synthesize →
//! transform → train → measure pipeline, and CSV result emission.
//!
//! The binary (`fairsynth`) wraps these into the `ingest`, `run`,
//! `sensitivity`, `timing`, and `report` subcommands.

pub mod config;
pub mod ingest;
pub mod pipeline;
pub mod report;
