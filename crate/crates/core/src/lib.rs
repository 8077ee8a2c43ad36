//! Hybrid tensor-network / tensor-ring quantum classifier.
//!
//! The pipeline is: MPO-factorized dense layers ([`mpo`]) feed a fixed bridge
//! matrix, whose outputs are angle-encoded into a tensor-ring simulated
//! variational circuit ([`quantum`]). Class probabilities come from Pauli-Z
//! basis readouts passed through a softmax ([`training`]). An exact
//! statevector simulator ([`oracle`]) backs the approximate engine in tests.

pub mod data;
pub mod error;
pub mod linalg;
pub mod mpo;
pub mod oracle;
pub mod quantum;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, DenseTensor, Scalar};
