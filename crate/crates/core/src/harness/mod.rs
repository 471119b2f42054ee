//! Experiment support: synthetic data, descriptors, file formats, gradient
//! audits and timing.

pub mod audit;
pub mod bench;
pub mod descriptor;
pub mod fd;
pub mod io;
pub mod synth;
