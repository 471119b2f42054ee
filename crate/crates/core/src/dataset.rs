//! Collections of SPD samples with cached per-sample whiteners.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, Whitener};

/// Unlabeled SPD samples of a common dimension. Each sample carries the
/// inverse of its Cholesky factor, reused by every gradient that whitens by it.
#[derive(Clone, Debug)]
pub struct SpdDataset {
    samples: Vec<SpdMatrix>,
    whiteners: Vec<Whitener>,
}

impl SpdDataset {
    pub fn new(samples: Vec<SpdMatrix>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Format("dataset is empty".into()));
        };
        let d = first.dim();
        if let Some(i) = samples.iter().position(|s| s.dim() != d) {
            return Err(Error::Format(format!(
                "sample {i} has dimension {} but sample 0 has {d}",
                samples[i].dim()
            )));
        }
        let whiteners = samples
            .iter()
            .map(Whitener::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(SpdDataset { samples, whiteners })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[SpdMatrix] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &SpdMatrix {
        &self.samples[i]
    }

    pub(crate) fn whitener(&self, i: usize) -> &Whitener {
        &self.whiteners[i]
    }

    pub fn subset(&self, indices: &[usize]) -> SpdDataset {
        SpdDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            whiteners: indices.iter().map(|&i| self.whiteners[i].clone()).collect(),
        }
    }

    pub fn into_samples(self) -> Vec<SpdMatrix> {
        self.samples
    }
}

/// SPD samples with class labels `0..num_classes`.
#[derive(Clone, Debug)]
pub struct LabeledSpdDataset {
    data: SpdDataset,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledSpdDataset {
    /// Labels must cover `0..L` without gaps.
    pub fn new(samples: Vec<SpdMatrix>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Format(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "labels are not contiguous: class {missing} has no samples"
            )));
        }
        Ok(LabeledSpdDataset {
            data: SpdDataset::new(samples)?,
            labels,
            num_classes,
        })
    }

    pub fn data(&self) -> &SpdDataset {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Keeps the parent's class count even if some class is absent from the subset.
    pub fn subset(&self, indices: &[usize]) -> LabeledSpdDataset {
        LabeledSpdDataset {
            data: self.data.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// One-hot targets, `L × N`.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.num_classes, self.len());
        for (i, &l) in self.labels.iter().enumerate() {
            h[(l, i)] = 1.0;
        }
        h
    }
}
