//! Experiment driver for label confusion training.

pub mod commands;
pub mod config;
