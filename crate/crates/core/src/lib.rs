//! Cross-domain rating prediction by codebook transfer.
//!
//! A dense source rating matrix is co-clustered with a masked nonnegative
//! tri-factorization; block averages over the resulting hard clusters form a
//! codebook of cluster-level ratings. The codebook is then held fixed while
//! user factors, item factors and per-user ordinal thresholds are learned on a
//! sparse target matrix under a smoothed hinge loss. Predictions are integer
//! ratings decoded from the thresholds.

pub mod cocluster;
pub mod codebook;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod matrix;
pub mod optim;
pub mod ratings;
pub mod transfer;

pub use cocluster::{
    binarize, factorize, onmtf_objective, CoClusterConfig, MembershipMatrix, TriFactorization,
};
pub use codebook::{build_codebook, codebook_reconstruction, AveragingMode, Codebook};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use eval::{
    cluster_sweep, learn_codebook, mae, rmse, run_methods, run_protocol, split, EvalReport, Method,
    Predictor, ProtocolConfig, SplitSpec,
};
pub use ingest::{load, stats, DatasetSpec, Format};
pub use matrix::DenseMatrix;
pub use ratings::{RatingTriple, SparseRatingMatrix};
pub use transfer::{
    decode, fit, fit_baseline_mmmf, gradients, objective, smoothed_hinge, smoothed_hinge_grad,
    PredictionMatrix, TransferConfig, TransferModel,
};
