pub mod cli;
pub mod config;
pub mod controller;
pub mod geometry;
pub mod invariants;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod orchestrator;
pub mod qp;
