//! Small self-contained dense linear algebra used by the analysis modules.

mod eigen;
mod expm;
mod jacobi;
mod lu;
mod matrix;

use thiserror::Error;

pub use eigen::eigenvalues;
pub use expm::expm;
pub use jacobi::{symmetric_eigen, symmetric_max_eigenvalue, SymmetricEigen};
pub use lu::{solve, Lu};
pub use matrix::{norm2, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("result overflowed the floating-point range")]
    Overflow,
}
