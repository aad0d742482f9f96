pub mod model;
pub mod radial_solver;
pub mod policy;
pub mod simulator;
pub mod diagnostics;
pub mod config;
pub mod svg;
pub mod commands;
