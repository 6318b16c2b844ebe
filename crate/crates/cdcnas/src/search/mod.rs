//! Differentiable search spaces and genotype machinery.

pub mod cell;
pub mod genotype;
pub mod lateral;
pub mod net;
pub mod registry;
