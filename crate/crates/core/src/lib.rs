//! Empirical routing-game analysis of commuter trips.
//!
//! The pipeline clusters comparable trips (same neighborhood, departure
//! window, school and mode class), measures how far each trip is from the
//! fastest comparable one (imitation regret), checks whether commuters keep
//! their mode and route across days, and compares recorded durations with
//! free-flow lower bounds (stress of catastrophe). A nonatomic
//! congestion-game simulator with known equilibria produces ground-truth
//! datasets for every estimator.

pub mod clustering;
pub mod geometry;
pub mod model;
pub mod stats;
pub mod simulator;
pub mod equilibration;
pub mod regret;
pub mod freeflow;
pub mod soc;
pub mod pipeline;
