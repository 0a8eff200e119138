//! Positive-unlabeled (PU) matrix completion.
//!
//! Recovers a real-valued or binary matrix when only a subsample of its
//! one-entries is revealed. Two estimators are provided: the shifted
//! (unbiased-loss) estimator for the setting where entries of the underlying
//! matrix are Bernoulli probabilities, and the biased (α-weighted) estimator
//! for the setting where the binary matrix is a thresholding of the
//! underlying one. Both come with inductive (feature-based) variants,
//! scalable solvers, synthetic data generation, evaluation metrics and an
//! experiment harness.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod sampling;
pub mod solvers;
pub mod spectral;

pub use error::{PumcError, Result};
pub use linalg::DenseMatrix;
pub use model::{
    InductiveModel, LowRankFactors, MatrixModel, ObservedOnes, PuHyperParams, SolverReport,
    DEFAULT_MATERIALIZATION_CAP,
};
