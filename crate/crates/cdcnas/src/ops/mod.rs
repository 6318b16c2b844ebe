//! Primitive tensor operations: forward math and analytic gradients.

pub mod conv3d;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
