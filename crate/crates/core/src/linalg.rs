//! Dense symmetric linear algebra on small SPD matrices.
//!
//! Every matrix function goes through a symmetric eigendecomposition
//! `A = Q diag(λ) Qᵀ` and every routine that returns a nominally symmetric
//! matrix re-symmetrizes it with `sym(M) = ½(M + Mᵀ)` before handing it out,
//! which keeps long alternating optimizations from drifting off the manifold.
//!
//! Generalized eigenvalues of a pair `(X, Y)` are computed by whitening with
//! the Cholesky factor of `Y` (`L⁻¹ X L⁻ᵀ`), a congruence of
//! `Y^{-1/2} X Y^{-1/2}` with the same spectrum.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue an [`SpdMatrix`] may have.
pub const DEFAULT_PD_FLOOR: f64 = 1e-10;

/// Relative tolerance on `max |A_ij − A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

const EIG_EPS: f64 = f64::EPSILON;
const EIG_MAX_SWEEPS: usize = 10_000;

/// `½(M + Mᵀ)`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize_in_place(&mut out);
    out
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::domain(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let tol = SYMMETRY_TOL * m.norm().max(1.0);
    let asym = max_asymmetry(m);
    if asym > tol {
        return Err(Error::domain(format!(
            "matrix is not symmetric (max asymmetry {asym:e} > {tol:e})"
        )));
    }
    Ok(())
}

pub(crate) fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::domain(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// A real symmetric matrix; tangent vectors and Euclidean gradients live here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to [`SYMMETRY_TOL`] and symmetrizes exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(&m)?;
        Ok(Self::from_sym(m))
    }

    /// Applies `sym(·)` without checking how far from symmetric `m` was.
    pub fn from_sym(mut m: DMatrix<f64>) -> Self {
        symmetrize_in_place(&mut m);
        SymMatrix(m)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `trace(AᵀB)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }
}

/// A symmetric positive definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and that the smallest eigenvalue exceeds [`DEFAULT_PD_FLOOR`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_floor(m, DEFAULT_PD_FLOOR)
    }

    pub fn with_floor(m: DMatrix<f64>, pd_floor: f64) -> Result<Self> {
        check_square_symmetric(&m)?;
        let m = sym(&m);
        let min = min_eigenvalue(&m)?;
        if !(min > pd_floor) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(SpdMatrix(m))
    }

    /// Wraps a matrix known to be SPD by construction (only symmetrizes).
    pub(crate) fn from_trusted(mut m: DMatrix<f64>) -> Self {
        symmetrize_in_place(&mut m);
        SpdMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    /// Diagonal matrix; errors if any entry is not above the PD floor.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    /// `c·A` for `c > 0`.
    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::domain(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix(&self.0 * c))
    }

    /// `A X Aᵀ`; errors when `A` is singular enough to break definiteness.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<SpdMatrix> {
        check_same_dim(self.dim(), a.nrows())?;
        SpdMatrix::new(sym(&(a * &self.0 * a.transpose())))
    }

    pub fn eig(&self) -> Result<EigPair> {
        eig_raw(&self.0)
    }

    pub fn func(&self, f: SpdFn) -> Result<SymMatrix> {
        spd_func(self, f)
    }

    pub fn log(&self) -> Result<SymMatrix> {
        spd_func(self, SpdFn::Log)
    }

    pub fn sqrt(&self) -> Result<SpdMatrix> {
        spd_func(self, SpdFn::Sqrt).map(|s| SpdMatrix(s.0))
    }

    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        spd_func(self, SpdFn::InvSqrt).map(|s| SpdMatrix(s.0))
    }

    pub fn powf(&self, t: f64) -> Result<SpdMatrix> {
        spd_func(self, SpdFn::Pow(t)).map(|s| SpdMatrix(s.0))
    }

    pub fn inv(&self) -> Result<SpdMatrix> {
        spd_func(self, SpdFn::Inv).map(|s| SpdMatrix(s.0))
    }

    /// Lower Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        Cholesky::new(self.0.clone())
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: f64::NAN,
            })
    }

    /// `log det A` from the Cholesky factor.
    pub fn log_det(&self) -> Result<f64> {
        let l = self.cholesky()?;
        Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    /// Largest eigenvalue, which is the spectral norm for SPD matrices.
    pub fn spectral_norm(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct EigPair {
    pub values: DVector<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl EigPair {
    /// `Q diag(f(λ)) Qᵀ`, symmetrized.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        self.with_diagonal(&scaled)
    }

    /// `Q diag(w) Qᵀ`, symmetrized.
    pub fn with_diagonal(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut qw = self.vectors.clone();
        for (j, mut col) in qw.column_iter_mut().enumerate() {
            col *= w[j];
        }
        let mut out = qw * self.vectors.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.with_diagonal(&self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }
}

fn eig_raw(m: &DMatrix<f64>) -> Result<EigPair> {
    let d = m.nrows();
    let se = SymmetricEigen::<f64, Dyn>::try_new(m.clone(), EIG_EPS, EIG_MAX_SWEEPS)
        .ok_or(Error::NonConvergence(d))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence(d));
    }
    Ok(EigPair { values, vectors })
}

/// Ascending eigenvalues of a symmetric matrix without eigenvectors.
pub(crate) fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut values = m.clone().symmetric_eigenvalues();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence(m.nrows()));
    }
    values.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    Ok(values)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?[0])
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eig(a: &SymMatrix) -> Result<EigPair> {
    eig_raw(&a.0)
}

/// Scalar functions applied spectrally by [`spd_func`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpdFn {
    Log,
    Exp,
    Sqrt,
    InvSqrt,
    Pow(f64),
    Inv,
}

impl SpdFn {
    fn apply(self, v: f64) -> f64 {
        match self {
            SpdFn::Log => v.ln(),
            SpdFn::Exp => v.exp(),
            SpdFn::Sqrt => v.sqrt(),
            SpdFn::InvSqrt => 1.0 / v.sqrt(),
            SpdFn::Pow(t) => v.powf(t),
            SpdFn::Inv => 1.0 / v,
        }
    }
}

/// `Q f(Λ) Qᵀ`. Every tag except `Exp` needs the spectrum above the PD floor.
pub fn spd_func(a: &SpdMatrix, f: SpdFn) -> Result<SymMatrix> {
    if let SpdFn::Pow(t) = f {
        if !t.is_finite() {
            return Err(Error::domain(format!(
                "matrix power must be finite, got {t}"
            )));
        }
    }
    let eig = a.eig()?;
    if f != SpdFn::Exp && !(eig.min_value() > DEFAULT_PD_FLOOR) {
        return Err(Error::domain(format!(
            "{f:?} needs a positive definite argument (smallest eigenvalue {:e})",
            eig.min_value()
        )));
    }
    Ok(SymMatrix(eig.map(|v| f.apply(v))))
}

/// Matrix exponential of a symmetric matrix, which is always SPD.
pub fn sym_exp(a: &SymMatrix) -> Result<SpdMatrix> {
    let eig = sym_eig(a)?;
    Ok(SpdMatrix(eig.map(f64::exp)))
}

/// Eigenvalues of `X Y⁻¹`, ascending.
pub fn gen_eigvals(x: &SpdMatrix, y: &SpdMatrix) -> Result<DVector<f64>> {
    check_same_dim(x.dim(), y.dim())?;
    Whitener::new(y)?.gen_eigvals(x)
}

/// Caches `L⁻¹` for `Y = L Lᵀ` so many pairs `(·, Y)` can be whitened cheaply.
#[derive(Clone, Debug)]
pub struct Whitener {
    l_inv: DMatrix<f64>,
}

impl Whitener {
    pub fn new(y: &SpdMatrix) -> Result<Self> {
        let l = y.cholesky()?;
        let d = l.nrows();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::SingularSystem("Cholesky factor".into()))?;
        Ok(Whitener { l_inv })
    }

    pub fn dim(&self) -> usize {
        self.l_inv.nrows()
    }

    /// `L⁻¹ M L⁻ᵀ`, symmetrized.
    pub fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.l_inv * m * self.l_inv.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    /// `L⁻ᵀ G L⁻¹`: maps a gradient taken w.r.t. the whitened matrix back.
    pub fn pull_back(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.l_inv.transpose() * g * &self.l_inv;
        symmetrize_in_place(&mut out);
        out
    }

    /// Eigenvalues of `X Y⁻¹` where `Y` is the whitened reference.
    pub fn gen_eigvals(&self, x: &SpdMatrix) -> Result<DVector<f64>> {
        check_same_dim(x.dim(), self.dim())?;
        sym_eigenvalues(&self.whiten(&x.0))
    }

    /// Full eigendecomposition of `L⁻¹ X L⁻ᵀ`.
    pub fn whitened_eig(&self, x: &SpdMatrix) -> Result<EigPair> {
        check_same_dim(x.dim(), self.dim())?;
        eig_raw(&self.whiten(&x.0))
    }

    /// `Y⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut out = self.l_inv.transpose() * &self.l_inv;
        symmetrize_in_place(&mut out);
        out
    }
}

/// Symmetrizes a raw matrix and, if it is not safely positive definite,
/// adds `jitter·I` (default `1e-8·trace(A)/d`).
pub fn validate_or_jitter(a: &DMatrix<f64>, jitter: Option<f64>) -> Result<SpdMatrix> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::domain("expected a non-empty square matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let s = sym(a);
    let min = min_eigenvalue(&s)?;
    if min > DEFAULT_PD_FLOOR {
        return Ok(SpdMatrix(s));
    }
    let d = s.nrows();
    let amount = match jitter {
        Some(j) if j < 0.0 || !j.is_finite() => {
            return Err(Error::domain(format!(
                "jitter must be non-negative, got {j}"
            )))
        }
        Some(j) => j,
        None => 1e-8 * s.trace() / d as f64,
    };
    let jittered = &s + DMatrix::identity(d, d) * amount;
    let min = min_eigenvalue(&jittered)?;
    if min > DEFAULT_PD_FLOOR {
        Ok(SpdMatrix(jittered))
    } else {
        Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        })
    }
}
