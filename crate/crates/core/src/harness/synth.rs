//! Synthetic SPD data: Wishart clusters and random test matrices.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSpdDataset;
use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SymMatrix};

/// Parameters of a mixture of Wishart clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WishartSpec {
    pub k: usize,
    pub d: usize,
    pub n_per: usize,
    /// Degrees of freedom, at least `d`; `None` means `2d`.
    pub dof: Option<usize>,
    pub seed: u64,
}

impl WishartSpec {
    pub fn new(k: usize, d: usize, n_per: usize, seed: u64) -> Self {
        WishartSpec {
            k,
            d,
            n_per,
            dof: None,
            seed,
        }
    }

    pub fn dof(&self) -> usize {
        self.dof.unwrap_or(2 * self.d)
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q diag(e^{uᵢ}) Qᵀ` with `uᵢ` uniform in `[ln lo, ln hi]`.
pub fn random_spd_in<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> SpdMatrix {
    let q = random_orthogonal(rng, d);
    let (a, b) = (lo.ln(), hi.ln());
    let eig: Vec<f64> = (0..d).map(|_| rng.gen_range(a..=b).exp()).collect();
    let mut qd = q.clone();
    for (j, mut col) in qd.column_iter_mut().enumerate() {
        col *= eig[j];
    }
    SpdMatrix::from_trusted(qd * q.transpose())
}

/// Random SPD matrix with eigenvalues log-uniform in `[e⁻¹, e]`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize) -> SpdMatrix {
    random_spd_in(rng, d, (-1.0f64).exp(), 1.0f64.exp())
}

/// Random symmetric matrix with standard-normal upper triangle.
pub fn random_sym<R: Rng>(rng: &mut R, d: usize) -> SymMatrix {
    SymMatrix::from_sym(gaussian_matrix(rng, d, d))
}

/// Draws `k` random scale matrices (random orthogonal basis, eigenvalues
/// log-uniform in `[0.5, 2]`) and `n_per` samples `S = Σ^{1/2} GᵀG Σ^{1/2} / dof`
/// from each, `G` a `dof × d` standard normal matrix. Labels are cluster indices.
pub fn wishart_synth(spec: &WishartSpec) -> Result<LabeledSpdDataset> {
    let (scales, data) = wishart_synth_with_scales(spec)?;
    drop(scales);
    Ok(data)
}

/// Like [`wishart_synth`] but also returns the cluster scale matrices.
pub fn wishart_synth_with_scales(
    spec: &WishartSpec,
) -> Result<(Vec<SpdMatrix>, LabeledSpdDataset)> {
    let dof = spec.dof();
    if spec.k == 0 || spec.d == 0 || spec.n_per == 0 {
        return Err(Error::InvalidParams(
            "k, d and n_per must be positive".into(),
        ));
    }
    if dof < spec.d {
        return Err(Error::InvalidParams(format!(
            "degrees of freedom {dof} must be at least d = {}",
            spec.d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scales = Vec::with_capacity(spec.k);
    let mut samples = Vec::with_capacity(spec.k * spec.n_per);
    let mut labels = Vec::with_capacity(spec.k * spec.n_per);
    for z in 0..spec.k {
        let sigma = random_spd_in(&mut rng, spec.d, 0.5, 2.0);
        let root = sigma.sqrt()?.into_inner();
        for _ in 0..spec.n_per {
            let g = gaussian_matrix(&mut rng, dof, spec.d) * &root;
            let s = g.transpose() * g / dof as f64;
            samples.push(SpdMatrix::new(crate::linalg::sym(&s))?);
            labels.push(z);
        }
        scales.push(sigma);
    }
    Ok((scales, LabeledSpdDataset::new(samples, labels)?))
}

/// Splits each class in order: the first `n_train` samples of every class go
/// to the first set, the remainder to the second.
pub fn split_per_class(
    data: &LabeledSpdDataset,
    n_train: usize,
) -> (LabeledSpdDataset, LabeledSpdDataset) {
    let mut seen = vec![0usize; data.num_classes()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &l) in data.labels().iter().enumerate() {
        if seen[l] < n_train {
            train.push(i);
        } else {
            test.push(i);
        }
        seen[l] += 1;
    }
    (data.subset(&train), data.subset(&test))
}
