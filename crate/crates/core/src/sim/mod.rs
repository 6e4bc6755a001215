pub mod actions;
pub mod engine;
pub mod geometry;
pub mod grid;
pub mod integrator;
pub mod metrics;
pub mod observation;
pub mod plant;
pub mod reward;
pub mod safety;
pub mod scenario;
pub mod tracker;
