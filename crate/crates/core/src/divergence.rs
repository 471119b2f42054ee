//! The αβ-log-det divergence, its closed-form special cases, and its
//! analytic gradients.
//!
//! For `X, Y` SPD with generalized eigenvalues `λᵢ` of `X Y⁻¹`,
//!
//! ```text
//! D(X‖Y) = 1/(αβ) · Σᵢ log( (α λᵢ^β + β λᵢ^{-α}) / (α+β) )
//! ```
//!
//! evaluated per eigenvalue as `log1p((α·expm1(β ln λ) + β·expm1(−α ln λ))/(α+β))`,
//! which stays accurate when `λ ≈ 1` or when `α, β` are small. At the origin
//! `α = β = 0` the divergence is defined as the squared affine-invariant
//! distance `‖Log(X^{-1/2} Y X^{-1/2})‖²_F`. Note that the limit of the
//! general formula along `α = β → 0` is half of that value.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_same_dim, sym, SpdMatrix, SymMatrix, Whitener};

/// Floor on `|α|` and `|β|` inside the open orthants.
pub const DEFAULT_EPS_MIN: f64 = 1e-4;

/// Values in `[NEGATIVE_FLOOR, 0)` are reported as zero; anything lower is an error.
pub const NEGATIVE_FLOOR: f64 = -1e-10;

const LOG_ARG_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orthant {
    Positive,
    Negative,
    Origin,
}

/// Divergence parameters `(α, β)` confined to one sign orthant or the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AbldParams {
    alpha: f64,
    beta: f64,
    orthant: Orthant,
}

impl AbldParams {
    /// Infers the orthant from the signs; `(0, 0)` is the origin.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_eps_min(alpha, beta, DEFAULT_EPS_MIN)
    }

    pub fn with_eps_min(alpha: f64, beta: f64, eps_min: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "non-finite ({alpha}, {beta})"
            )));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Ok(Self::origin());
        }
        let orthant = if alpha >= eps_min && beta >= eps_min {
            Orthant::Positive
        } else if alpha <= -eps_min && beta <= -eps_min {
            Orthant::Negative
        } else {
            return Err(Error::InvalidParams(format!(
                "(α, β) = ({alpha}, {beta}) is not inside a same-sign orthant with |·| ≥ {eps_min}"
            )));
        };
        Ok(AbldParams {
            alpha,
            beta,
            orthant,
        })
    }

    pub fn origin() -> Self {
        AbldParams {
            alpha: 0.0,
            beta: 0.0,
            orthant: Orthant::Origin,
        }
    }

    /// `α = β = 1`.
    pub fn unit() -> Self {
        AbldParams {
            alpha: 1.0,
            beta: 1.0,
            orthant: Orthant::Positive,
        }
    }

    /// `α = β = t`.
    pub fn tied(t: f64) -> Result<Self> {
        Self::new(t, t)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn orthant(&self) -> Orthant {
        self.orthant
    }

    pub fn is_origin(&self) -> bool {
        self.orthant == Orthant::Origin
    }

    /// `(β, α)`.
    pub fn swapped(&self) -> Self {
        AbldParams {
            alpha: self.beta,
            beta: self.alpha,
            orthant: self.orthant,
        }
    }
}

/// `log((α λ^β + β λ^{-α})/(α+β))` given `ln λ`.
fn log_ratio(ln_lambda: f64, alpha: f64, beta: f64, index: usize) -> Result<f64> {
    let (e1, e2) = (beta * ln_lambda, -alpha * ln_lambda);
    let top = e1.max(e2);
    if top > 1.0 {
        // Log-sum-exp form; both weights share the sign of α + β.
        let (a, b) = (alpha.abs(), beta.abs());
        let s = a * (e1 - top).exp() + b * (e2 - top).exp();
        return Ok(top + (s / (a + b)).ln());
    }
    let r = (alpha * e1.exp_m1() + beta * e2.exp_m1()) / (alpha + beta);
    let ratio = 1.0 + r;
    if !(ratio > LOG_ARG_FLOOR) {
        return Err(Error::DegenerateLogArgument {
            index,
            value: ratio,
        });
    }
    Ok(r.ln_1p())
}

fn clamp_divergence(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::domain(format!("divergence evaluated to {v}")));
    }
    if v < NEGATIVE_FLOOR {
        return Err(Error::NegativeDivergence(v));
    }
    Ok(v.max(0.0))
}

pub(crate) fn log_eigs(lambdas: &[f64]) -> Result<Vec<f64>> {
    lambdas
        .iter()
        .map(|&l| {
            if l > 0.0 && l.is_finite() {
                Ok(l.ln())
            } else {
                Err(Error::domain(format!(
                    "generalized eigenvalue {l} is not positive"
                )))
            }
        })
        .collect()
}

/// Divergence from generalized eigenvalues of `X Y⁻¹`.
pub fn abld_from_gen_eigs(lambdas: &[f64], p: &AbldParams) -> Result<f64> {
    let logs = log_eigs(lambdas)?;
    divergence_from_logs(&logs, p)
}

pub(crate) fn divergence_from_logs(logs: &[f64], p: &AbldParams) -> Result<f64> {
    if p.is_origin() {
        return clamp_divergence(logs.iter().map(|l| l * l).sum());
    }
    let mut acc = 0.0;
    for (i, &l) in logs.iter().enumerate() {
        acc += log_ratio(l, p.alpha, p.beta, i)?;
    }
    clamp_divergence(acc / (p.alpha * p.beta))
}

/// `D^{(α,β)}(X‖Y)` through the generalized eigenvalues.
pub fn abld(x: &SpdMatrix, y: &SpdMatrix, p: &AbldParams) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    let lambdas = Whitener::new(y)?.gen_eigvals(x)?;
    abld_from_gen_eigs(lambdas.as_slice(), p)
}

/// Direct matrix evaluation
/// `1/(αβ) · logdet((α (XY⁻¹)^β + β (XY⁻¹)^{-α}) / (α+β))`.
///
/// Powers of the non-symmetric `XY⁻¹` are taken through the similarity
/// `XY⁻¹ = X^{1/2} W X^{-1/2}` with `W = X^{1/2} Y⁻¹ X^{1/2}`, and the
/// determinant comes from an LU factorization of the assembled matrix.
/// Only defined off the origin.
pub fn abld_direct(x: &SpdMatrix, y: &SpdMatrix, p: &AbldParams) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    if p.is_origin() {
        return Err(Error::domain("the matrix form is undefined at α = β = 0"));
    }
    let (alpha, beta) = (p.alpha, p.beta);
    let d = x.dim();
    let xe = x.eig()?;
    let x_half = xe.map(f64::sqrt);
    let x_neg_half = xe.map(|v| 1.0 / v.sqrt());
    let y_inv = y
        .matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("Y is not invertible".into()))?;
    let w = SpdMatrix::new(sym(&(&x_half * y_inv * &x_half)))?;
    let we = w.eig()?;
    let m_beta = &x_half * we.map(|v| v.powf(beta)) * &x_neg_half;
    let m_neg_alpha = &x_half * we.map(|v| v.powf(-alpha)) * &x_neg_half;
    let inner = (m_beta * alpha + m_neg_alpha * beta) / (alpha + beta);
    let lu = inner.lu();
    let u = lu.u();
    let mut logdet = 0.0;
    let mut negative = false;
    for i in 0..d {
        let v = u[(i, i)];
        if v == 0.0 {
            return Err(Error::DegenerateLogArgument {
                index: i,
                value: 0.0,
            });
        }
        negative ^= v < 0.0;
        logdet += v.abs().ln();
    }
    // LU row swaps flip the determinant sign.
    if lu.p().determinant::<f64>() < 0.0 {
        negative = !negative;
    }
    if negative {
        return Err(Error::DegenerateLogArgument {
            index: 0,
            value: -logdet.exp(),
        });
    }
    clamp_divergence(logdet / (alpha * beta))
}

/// Closed-form divergences the αβ family connects to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialKind {
    /// `‖Log(X^{-1/2} Y X^{-1/2})‖²_F`
    AirmSq,
    /// `4(logdet((X+Y)/2) − ½ logdet(XY))`
    Jbld,
    /// `½ tr(XY⁻¹ + YX⁻¹) − d`
    Jeffreys,
    /// `tr(XY⁻¹) − logdet(XY⁻¹) − d`
    Burg,
    /// `‖Log X − Log Y‖²_F`
    LogEuclideanSq,
}

pub fn special_divergence(x: &SpdMatrix, y: &SpdMatrix, kind: SpecialKind) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    let d = x.dim() as f64;
    let v = match kind {
        SpecialKind::AirmSq => {
            let x_neg_half = x.inv_sqrt()?;
            let p = SpdMatrix::new(sym(&(x_neg_half.matrix()
                * y.matrix()
                * x_neg_half.matrix())))?;
            p.log()?.matrix().norm_squared()
        }
        SpecialKind::Jbld => {
            let mid = SpdMatrix::new((x.matrix() + y.matrix()) * 0.5)?;
            4.0 * (mid.log_det()? - 0.5 * (x.log_det()? + y.log_det()?))
        }
        SpecialKind::Jeffreys => {
            let xi = Whitener::new(x)?.inverse();
            let yi = Whitener::new(y)?.inverse();
            0.5 * ((x.matrix() * yi).trace() + (y.matrix() * xi).trace()) - d
        }
        SpecialKind::Burg => {
            let yi = Whitener::new(y)?.inverse();
            (x.matrix() * yi).trace() - (x.log_det()? - y.log_det()?) - d
        }
        SpecialKind::LogEuclideanSq => {
            (x.log()?.into_inner() - y.log()?.into_inner()).norm_squared()
        }
    };
    clamp_divergence(v)
}

/// `∂D/∂α` from logs of the generalized eigenvalues.
pub(crate) fn grad_alpha_from_logs(logs: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    let theta = alpha + beta;
    let nu = alpha * beta;
    let mut acc = 0.0;
    for (i, &l) in logs.iter().enumerate() {
        // (α λ^β − ν λ^{-α} ln λ)/(α λ^β + β λ^{-α}), scaled by whichever power dominates.
        let e = -theta * l;
        let frac = if e <= 0.0 {
            let t = e.exp();
            (alpha - nu * t * l) / (alpha + beta * t)
        } else {
            let t = (-e).exp();
            (alpha * t - nu * l) / (alpha * t + beta)
        };
        acc += frac - alpha / theta - log_ratio(l, alpha, beta, i)?;
    }
    Ok(acc / (alpha * nu))
}

fn require_off_origin(p: &AbldParams) -> Result<()> {
    if p.is_origin() {
        return Err(Error::domain(
            "parameter derivatives do not exist at the origin α = β = 0",
        ));
    }
    Ok(())
}

/// `∂D/∂α` from the generalized eigenvalues of `X Y⁻¹`.
pub fn grad_alpha_from_gen_eigs(lambdas: &[f64], p: &AbldParams) -> Result<f64> {
    require_off_origin(p)?;
    grad_alpha_from_logs(&log_eigs(lambdas)?, p.alpha, p.beta)
}

/// `∂D/∂β`, via dual symmetry: the eigenvalues of `Y X⁻¹` are the reciprocals.
pub fn grad_beta_from_gen_eigs(lambdas: &[f64], p: &AbldParams) -> Result<f64> {
    require_off_origin(p)?;
    let logs: Vec<f64> = log_eigs(lambdas)?.into_iter().map(|l| -l).collect();
    grad_alpha_from_logs(&logs, p.beta, p.alpha)
}

pub fn abld_grad_alpha(x: &SpdMatrix, y: &SpdMatrix, p: &AbldParams) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    require_off_origin(p)?;
    let lambdas = Whitener::new(y)?.gen_eigvals(x)?;
    grad_alpha_from_gen_eigs(lambdas.as_slice(), p)
}

/// `∂D(X‖Y)/∂β = ∂D(Y‖X)/∂α` with the parameters swapped.
pub fn abld_grad_beta(x: &SpdMatrix, y: &SpdMatrix, p: &AbldParams) -> Result<f64> {
    abld_grad_alpha(y, x, &p.swapped())
}

/// `∇_B logdet[p (AB)^q + I]
///   = pq B⁻¹ A^{-1/2} (A^{1/2} B A^{1/2})^q (I + p (A^{1/2} B A^{1/2})^q)⁻¹ A^{1/2}`.
pub fn logdet_term_grad(a: &SpdMatrix, b: &SpdMatrix, p: f64, q: f64) -> Result<SymMatrix> {
    check_same_dim(a.dim(), b.dim())?;
    let d = a.dim();
    if p == 0.0 {
        return Ok(SymMatrix::zeros(d));
    }
    let ae = a.eig()?;
    let s = ae.map(f64::sqrt);
    let s_inv = ae.map(|v| 1.0 / v.sqrt());
    let sbs = SpdMatrix::new(sym(&(&s * b.matrix() * &s)))?;
    let sbs_q = sbs.powf(q)?.into_inner();
    let middle = (DMatrix::identity(d, d) + &sbs_q * p)
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("I + p (SBS)^q".into()))?;
    let b_inv = Whitener::new(b)?.inverse();
    let g = b_inv * s_inv * sbs_q * middle * s * (p * q);
    Ok(SymMatrix::from_sym(g))
}

/// `ψ'(δ)` where `D = Σ ψ(δᵢ)` and `δᵢ` are the eigenvalues of `X⁻¹ Y`.
fn grad_y_weight(delta: f64, p: &AbldParams) -> f64 {
    let l = delta.ln();
    if p.is_origin() {
        return 2.0 * l / delta;
    }
    let (alpha, beta) = (p.alpha, p.beta);
    let e = (alpha + beta) * l;
    // (δ^θ − 1) / (δ (α + β δ^θ)), rescaled by δ^{-θ} when δ^θ is large.
    if e <= 0.0 {
        let t = e.exp();
        e.exp_m1() / (delta * (alpha + beta * t))
    } else {
        let t = (-e).exp();
        -(-e).exp_m1() / (delta * (alpha * t + beta))
    }
}

/// `∇_Y D(X‖Y)` using a whitener of `X`.
///
/// With `X = L Lᵀ` and `L⁻¹ Y L⁻ᵀ = U diag(δ) Uᵀ`, the gradient is
/// `L⁻ᵀ U diag(ψ'(δ)) Uᵀ L⁻¹`, scaled by `weight`.
pub(crate) fn grad_y_whitened(
    wx: &Whitener,
    y: &SpdMatrix,
    p: &AbldParams,
    weight: f64,
) -> Result<DMatrix<f64>> {
    let eig = wx.whitened_eig(y)?;
    if let Some(&bad) = eig.values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!(
            "whitened eigenvalue {bad} is not positive"
        )));
    }
    let w = DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|&v| weight * grad_y_weight(v, p)),
    );
    Ok(wx.pull_back(&eig.with_diagonal(&w)))
}

/// `∇_Y D(X‖Y)`.
///
/// Off the origin this is the spectral form
/// `(θ/α²) Y⁻¹ (Z^{-1/2}U) diag(δ^θ/(1+(β/α)δ^θ)) (Z^{-1/2}U)⁻¹ − (1/α) Y⁻¹`
/// (`Z = X⁻¹`, `δ` the eigenvalues of `Z^{1/2} Y Z^{1/2}`), evaluated via a
/// Cholesky whitening of `X` which has the same eigenvalues. At the origin it
/// is `2 X^{-1/2} Log(P) P⁻¹ X^{-1/2}` with `P = X^{-1/2} Y X^{-1/2}`.
pub fn abld_grad_y(x: &SpdMatrix, y: &SpdMatrix, p: &AbldParams) -> Result<SymMatrix> {
    check_same_dim(x.dim(), y.dim())?;
    let wx = Whitener::new(x)?;
    Ok(SymMatrix::from_sym(grad_y_whitened(&wx, y, p, 1.0)?))
}

/// The same gradient assembled from [`logdet_term_grad`]:
/// `D = (1/αβ)·logdet(I + (β/α)(X⁻¹Y)^{α+β}) − (1/α) logdet Y + const`.
/// At the origin it evaluates `2 X^{-1/2} Log(P) P⁻¹ X^{-1/2}` literally.
pub fn abld_grad_y_via_logdet_term(
    x: &SpdMatrix,
    y: &SpdMatrix,
    p: &AbldParams,
) -> Result<SymMatrix> {
    check_same_dim(x.dim(), y.dim())?;
    let y_inv = Whitener::new(y)?.inverse();
    if p.is_origin() {
        let xe = x.eig()?;
        let x_neg_half = xe.map(|v| 1.0 / v.sqrt());
        let pm = SpdMatrix::new(sym(&(&x_neg_half * y.matrix() * &x_neg_half)))?;
        let log_p = pm.log()?.into_inner();
        let p_inv = pm.inv()?.into_inner();
        let g = &x_neg_half * log_p * p_inv * &x_neg_half * 2.0;
        return Ok(SymMatrix::from_sym(g));
    }
    let (alpha, beta) = (p.alpha, p.beta);
    let z = x.inv()?;
    let term = logdet_term_grad(&z, y, beta / alpha, alpha + beta)?;
    let g = term.into_inner() / (alpha * beta) - y_inv / alpha;
    Ok(SymMatrix::from_sym(g))
}

/// Outcome of checking the mixed-sign degeneracy bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degeneracy {
    Ok,
    /// First generalized eigenvalue (ascending order) that breaks the bound.
    Violated {
        index: usize,
    },
}

/// For opposite-sign `(α, β)`, checks every generalized eigenvalue of `XY⁻¹`
/// against `λ > |α/β|^{1/(α+β)}` (α > 0 > β) or `λ < |β/α|^{1/(α+β)}`
/// (α < 0 < β). Same-sign parameters always pass.
pub fn degeneracy_bound(x: &SpdMatrix, y: &SpdMatrix, alpha: f64, beta: f64) -> Result<Degeneracy> {
    check_same_dim(x.dim(), y.dim())?;
    if alpha * beta >= 0.0 {
        return Ok(Degeneracy::Ok);
    }
    let theta = alpha + beta;
    if theta == 0.0 {
        return Ok(Degeneracy::Violated { index: 0 });
    }
    let lambdas = gen_eigs(x, y)?;
    let bad = if alpha > 0.0 {
        let bound = (alpha / beta).abs().powf(1.0 / theta);
        lambdas.iter().position(|&l| !(l > bound))
    } else {
        let bound = (beta / alpha).abs().powf(1.0 / theta);
        lambdas.iter().position(|&l| !(l < bound))
    };
    Ok(match bad {
        Some(index) => Degeneracy::Violated { index },
        None => Degeneracy::Ok,
    })
}

fn gen_eigs(x: &SpdMatrix, y: &SpdMatrix) -> Result<DVector<f64>> {
    Whitener::new(y)?.gen_eigvals(x)
}
