//! Dense linear algebra and statistics kernel.

pub mod rng;
pub mod stats;
pub mod svd;
pub mod tensor;

pub use rng::{Rng, SeedStream};
pub use stats::{kl_divergence, kurtosis, kurtosis_checked, softmax, Kurtosis};
pub use svd::{svd, SvdResult};
pub use tensor::{dot, matmul, matmul_nt, matmul_tn, Tensor2D};
