//! Linear-algebra building blocks: dense blocked Cholesky, sparse storage
//! with conjugate gradients, envelope Cholesky, and Lanczos extremes.

pub mod dense;
pub mod envelope;
pub mod lanczos;
pub mod sparse;
pub mod sum;

pub use dense::Cholesky;
pub use sparse::Csr;
