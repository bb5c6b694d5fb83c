//! Dense tensors, deterministic randomness and finite-difference checks.

pub mod gemm;
mod gradcheck;
mod real;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use real::Real;
pub use rng::Rng;
pub use tensor::{matmul, Tensor};
