//! Experiment runner for hyperspectral drawing-layer separation: wires the
//! core pipeline stages into the reference feature variants, evaluates them
//! under the repeated sampling protocol and writes reports, label maps and
//! summary tables.

pub mod config;
pub mod pipeline;
pub mod render;

pub use config::{ExperimentConfig, Palette, Variant};
pub use pipeline::{
    prepare, run_experiment, run_experiment_with, run_focus_ablation, ExperimentOutcome,
    PreparedInputs,
};
