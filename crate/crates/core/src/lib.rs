//! Alpha-beta log-det divergences on SPD matrices and joint learning of
//! divergences with dictionaries, classifiers and clusterings.

pub mod clustering;
pub mod dataset;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod iddl;
pub mod kmeans;
pub mod linalg;
pub mod manifold;

pub use dataset::{LabeledSpdDataset, SpdDataset};
pub use divergence::{abld, AbldParams, Orthant, SpecialKind};
pub use error::{Error, Result};
pub use linalg::{SpdMatrix, SymMatrix};
