//! Experiment orchestration for Choquet-regularized exploratory
//! mean-variance control: grid configs, runners and CSV output.

pub mod config;
pub mod experiments;
pub mod output;
