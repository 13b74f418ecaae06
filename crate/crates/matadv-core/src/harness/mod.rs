//! Experiment plumbing: synthetic data, run configuration, the staged
//! pipeline, and report files.

pub mod config;
pub mod report;
pub mod runner;
pub mod synth;

pub use config::ExperimentConfig;
pub use runner::run_experiment;
pub use synth::{synth_dataset, Dataset, DatasetSpec, ShapeClass, ShapeSpec};
