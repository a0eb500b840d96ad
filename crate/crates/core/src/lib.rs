//! Simulator for layer-partitioned transformer inference across cooperating
//! servers, with low-rank weight transfer, verifier trust scoring, a memory
//! access cost model and table-based softmax verification.

pub mod costmodel;
pub mod exec;
pub mod federation;
pub mod softmax_verify;
pub mod svdkit;
pub mod tensor;
pub mod transformer;
pub mod trust;

pub use exec::Exec;
pub use tensor::Matrix;
