//! Command-line front end and end-to-end pipeline for the mammography
//! robot simulator.

pub mod commands;
pub mod pipeline;
pub mod report;
