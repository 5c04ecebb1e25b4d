//! Command-line front end and live service for the sonoswarm simulator.

pub mod commands;
pub mod llm;
pub mod service;
