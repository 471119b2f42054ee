//! Region covariance descriptors and dataset-level normalization.

use nalgebra::DMatrix;

use crate::dataset::SpdDataset;
use crate::error::{Error, Result};
use crate::linalg::{sym, SpdMatrix};

/// Sample covariance of the rows of an `m × f` feature matrix plus `jitter·I`.
pub fn cov_descriptor(features: &DMatrix<f64>, jitter: f64) -> Result<SpdMatrix> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::InvalidParams(
            "need at least two feature rows".into(),
        ));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParams("jitter must be non-negative".into()));
    }
    let mean = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let f = features.ncols();
    let cov = centered.transpose() * &centered / (m - 1) as f64 + DMatrix::identity(f, f) * jitter;
    SpdMatrix::new(sym(&cov))
}

/// Scales every matrix by one constant so the largest spectral norm equals
/// `target`. All αβ-log-det divergences are unchanged by a common scale.
pub fn normalize_dataset(data: &SpdDataset, target: f64) -> Result<(SpdDataset, f64)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParams(
            "target spectral norm must be positive".into(),
        ));
    }
    let max = data
        .samples()
        .iter()
        .map(|s| s.spectral_norm())
        .fold(0.0f64, f64::max);
    let c = target / max;
    if c == 1.0 {
        return Ok((data.clone(), 1.0));
    }
    let scaled = data
        .samples()
        .iter()
        .map(|s| s.scale(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((SpdDataset::new(scaled)?, c))
}
