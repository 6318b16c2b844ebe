//! Search, training and evaluation machinery.

pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod loader;
pub mod metrics;
pub mod optim;
pub mod search;
pub mod train;
