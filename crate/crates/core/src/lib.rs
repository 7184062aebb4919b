//! Compile street-level panoramas and an OpenStreetMap road extract into a
//! spatiotemporal observation/state/action token dataset, and replay it as a
//! navigable environment.

pub mod geo;
pub mod roadnet;
pub mod panograph;
pub mod seqgen;
pub mod tokenize;
pub mod project;
pub mod env;
pub mod eval;
pub mod synth;
pub mod cli;
