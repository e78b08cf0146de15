//! Simulation designs with closed-form oracles and the Monte Carlo
//! drivers built on them.

pub mod dgp;
pub mod experiments;
