//! Cut times of transient Markov chains: exact birth-death computations,
//! Monte Carlo cut-time detection, multiscale decompositions of the hitting
//! process, and heat-kernel checks for walks with killing.

pub mod chains;
pub mod greens;
pub mod rng;
pub mod construct;
pub mod simulate;
pub mod stats;
pub mod scales;
pub mod killing;
pub mod cli;
