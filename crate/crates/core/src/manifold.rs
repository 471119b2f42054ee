//! Optimization engines: Riemannian conjugate gradient on the SPD manifold
//! (affine-invariant metric) and spectral projected gradient for the
//! divergence parameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::divergence::{Orthant, DEFAULT_EPS_MIN};
use crate::error::{Error, Result};
use crate::linalg::{check_same_dim, sym, SpdMatrix, SymMatrix, Whitener};

/// `grad L(B) = B sym(∇L) B`.
pub fn riemannian_grad(b: &SpdMatrix, euc_grad: &SymMatrix) -> SymMatrix {
    let g = sym(euc_grad.matrix());
    SymMatrix::from_sym(b.matrix() * g * b.matrix())
}

/// `⟨U, V⟩_B = tr(B⁻¹ U B⁻¹ V)`.
pub fn inner(b: &SpdMatrix, u: &SymMatrix, v: &SymMatrix) -> Result<f64> {
    let w = Whitener::new(b)?;
    Ok(w.whiten(u.matrix()).dot(&w.whiten(v.matrix())))
}

/// `τ_B(ξ) = B^{1/2} Exp(B^{-1/2} ξ B^{-1/2}) B^{1/2}`, computed with the
/// Cholesky factor `B = L Lᵀ` as `L Exp(L⁻¹ ξ L⁻ᵀ) Lᵀ` (the same matrix).
pub fn retract(b: &SpdMatrix, xi: &SymMatrix) -> Result<SpdMatrix> {
    check_same_dim(b.dim(), xi.dim())?;
    let l = b.cholesky()?;
    let w = Whitener::new(b)?;
    let e = SymMatrix::from_sym(w.whiten(xi.matrix()));
    let exp = crate::linalg::sym_exp(&e)?;
    let out = &l * exp.matrix() * l.transpose();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("retraction overflowed"));
    }
    Ok(SpdMatrix::from_trusted(out))
}

/// `π(P, X, Y) = Z P Zᵀ` with `Z = (Y X⁻¹)^{1/2}`, evaluated as
/// `Z = Y^{1/2} (Y^{1/2} X⁻¹ Y^{1/2})^{1/2} Y^{-1/2}`.
pub fn parallel_transport(p: &SymMatrix, x: &SpdMatrix, y: &SpdMatrix) -> Result<SymMatrix> {
    check_same_dim(p.dim(), x.dim())?;
    check_same_dim(x.dim(), y.dim())?;
    let ye = y.eig()?;
    let y_half = ye.map(f64::sqrt);
    let y_neg_half = ye.map(|v| 1.0 / v.sqrt());
    let x_inv = Whitener::new(x)?.inverse();
    let w = SpdMatrix::new(sym(&(&y_half * x_inv * &y_half)))?;
    let z = &y_half * w.sqrt()?.into_inner() * y_neg_half;
    Ok(SymMatrix::from_sym(&z * p.matrix() * z.transpose()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOptions {
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_evals: usize,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        LineSearchOptions {
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_evals: 30,
        }
    }
}

impl LineSearchOptions {
    fn validate(&self) -> Result<()> {
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidParams(format!(
                "backtrack factor must be in (0, 1), got {}",
                self.backtrack
            )));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) || self.max_evals == 0 {
            return Err(Error::InvalidParams("invalid Armijo settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcgOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its previous value.
    pub rel_obj_tol: f64,
    /// Stop once the Riemannian gradient norm falls to this value.
    pub grad_tol: f64,
    pub line_search: LineSearchOptions,
}

impl Default for RcgOptions {
    fn default() -> Self {
        RcgOptions {
            max_iters: 300,
            rel_obj_tol: 1e-6,
            grad_tol: 1e-10,
            line_search: LineSearchOptions::default(),
        }
    }
}

impl RcgOptions {
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_obj_tol > 0.0) {
            return Err(Error::InvalidParams("rel_obj_tol must be positive".into()));
        }
        self.line_search.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RcgStatus {
    ObjectiveConverged,
    GradientVanished,
    MaxIterations,
    /// No decreasing step was found; the best iterate is returned.
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct RcgOutcome {
    pub point: SpdMatrix,
    pub objective: f64,
    /// Objective at the start followed by one entry per accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: RcgStatus,
}

/// Riemannian conjugate gradient with Fletcher–Reeves coefficients and
/// Armijo backtracking along the retraction curve.
///
/// Every accepted step strictly lowers the objective. The coefficient is reset
/// to zero every `d(d+1)/2` iterations, when it is not a finite non-negative
/// number, and whenever the transported direction stops being a descent
/// direction.
pub fn rcg_minimize<F, G>(
    mut obj: F,
    mut euc_grad: G,
    init: SpdMatrix,
    opts: &RcgOptions,
) -> Result<RcgOutcome>
where
    F: FnMut(&SpdMatrix) -> Result<f64>,
    G: FnMut(&SpdMatrix) -> Result<SymMatrix>,
{
    opts.validate()?;
    let d = init.dim();
    let restart_every = (d * (d + 1) / 2).max(1);
    let ls = opts.line_search;

    let mut point = init;
    let mut f = obj(&point)?;
    if !f.is_finite() {
        return Err(Error::domain(
            "objective is not finite at the initial point",
        ));
    }
    let mut trace = vec![f];

    let mut g = sym(euc_grad(&point)?.matrix());
    let mut rg = SymMatrix::from_sym(point.matrix() * &g * point.matrix());
    let mut gnorm2 = g.dot(rg.matrix());
    if gnorm2.sqrt() <= opts.grad_tol {
        return Ok(RcgOutcome {
            point,
            objective: f,
            trace,
            iterations: 0,
            status: RcgStatus::GradientVanished,
        });
    }

    let mut dir = rg.scale(-1.0);
    let mut step = 1.0 / inner(&point, &dir, &dir)?.sqrt().max(1e-300);
    let mut status = RcgStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let mut slope = g.dot(dir.matrix());
        if !(slope < 0.0) {
            dir = rg.scale(-1.0);
            slope = -gnorm2;
        }

        let mut found = armijo_search(&mut obj, &point, &dir, f, slope, step, &ls)?;
        if found.is_none() && slope != -gnorm2 {
            // The conjugate direction failed; retry once along −grad.
            dir = rg.scale(-1.0);
            slope = -gnorm2;
            let restart = 1.0 / inner(&point, &dir, &dir)?.sqrt().max(1e-300);
            found = armijo_search(&mut obj, &point, &dir, f, slope, restart.min(step), &ls)?;
        }
        let Some((next, f_next, s)) = found else {
            status = RcgStatus::LineSearchFailure;
            break;
        };

        iterations += 1;
        let prev = std::mem::replace(&mut point, next);
        let f_prev = f;
        f = f_next;
        trace.push(f);
        if f_prev - f <= opts.rel_obj_tol * f_prev.abs().max(f64::MIN_POSITIVE) {
            status = RcgStatus::ObjectiveConverged;
            break;
        }

        let g_next = sym(euc_grad(&point)?.matrix());
        let rg_next = SymMatrix::from_sym(point.matrix() * &g_next * point.matrix());
        let gnorm2_next = g_next.dot(rg_next.matrix());
        if gnorm2_next.sqrt() <= opts.grad_tol {
            status = RcgStatus::GradientVanished;
            break;
        }

        let mut eta = gnorm2_next / gnorm2;
        if iterations % restart_every == 0 || !eta.is_finite() || eta < 0.0 {
            eta = 0.0;
        }
        let mut next_dir = rg_next.scale(-1.0);
        if eta > 0.0 {
            let moved = parallel_transport(&dir, &prev, &point)?;
            next_dir = SymMatrix::from_sym(next_dir.into_inner() + moved.into_inner() * eta);
        }
        let next_slope = g_next.dot(next_dir.matrix());

        // Initial step for the next search from the last decrease.
        let guess = 2.02 * (f_prev - f) / (-next_slope).max(f64::MIN_POSITIVE);
        let cap = MAX_TRIAL_LENGTH / inner(&point, &next_dir, &next_dir)?.sqrt().max(1e-300);
        step = if guess.is_finite() && guess > 0.0 {
            guess.min(cap)
        } else {
            s.min(cap)
        };

        g = g_next;
        rg = rg_next;
        gnorm2 = gnorm2_next;
        dir = next_dir;
    }

    Ok(RcgOutcome {
        point,
        objective: f,
        trace,
        iterations,
        status,
    })
}

/// Longest Riemannian length `‖s·P‖_B` tried first by the RCG line search.
const MAX_TRIAL_LENGTH: f64 = 2.0;

/// Backtracks from `step` until the Armijo condition holds with a strict
/// decrease. Failed objective evaluations count as rejections.
fn armijo_search<F>(
    obj: &mut F,
    point: &SpdMatrix,
    dir: &SymMatrix,
    f: f64,
    slope: f64,
    step: f64,
    ls: &LineSearchOptions,
) -> Result<Option<(SpdMatrix, f64, f64)>>
where
    F: FnMut(&SpdMatrix) -> Result<f64>,
{
    let mut s = step;
    for _ in 0..ls.max_evals {
        if let Ok(cand) = retract(point, &dir.scale(s)) {
            if let Ok(fc) = obj(&cand) {
                if fc.is_finite() && fc < f && fc <= f + ls.armijo_c1 * s * slope {
                    return Ok(Some((cand, fc, s)));
                }
            }
        }
        s *= ls.backtrack;
    }
    Ok(None)
}

/// Box `[eps_min, max_abs]` (positive orthant) or `[−max_abs, −eps_min]`
/// (negative orthant) applied to every coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthantBox {
    pub orthant: Orthant,
    pub eps_min: f64,
    pub max_abs: f64,
}

impl OrthantBox {
    pub fn new(orthant: Orthant) -> Self {
        OrthantBox {
            orthant,
            eps_min: DEFAULT_EPS_MIN,
            max_abs: f64::INFINITY,
        }
    }

    pub fn project(&self, v: f64) -> f64 {
        match self.orthant {
            Orthant::Positive | Orthant::Origin => v.clamp(self.eps_min, self.max_abs),
            Orthant::Negative => v.clamp(-self.max_abs, -self.eps_min),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.orthant == Orthant::Origin {
            return Err(Error::InvalidParams(
                "the origin is not an optimizable orthant".into(),
            ));
        }
        if !(self.eps_min > 0.0 && self.max_abs > self.eps_min) {
            return Err(Error::InvalidParams("need 0 < eps_min < max_abs".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpgOptions {
    pub max_iters: usize,
    pub step_min: f64,
    pub step_max: f64,
    pub bounds: OrthantBox,
    /// Stop once the projected step `P(x − λg) − x` has max-norm below this.
    pub tol: f64,
    pub line_search: LineSearchOptions,
}

impl Default for SpgOptions {
    fn default() -> Self {
        SpgOptions {
            max_iters: 100,
            step_min: 1e-8,
            step_max: 1e8,
            bounds: OrthantBox::new(Orthant::Positive),
            tol: 1e-10,
            line_search: LineSearchOptions::default(),
        }
    }
}

impl SpgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_min > 0.0 && self.step_max > self.step_min) {
            return Err(Error::InvalidParams(
                "step bounds must be positive and ordered".into(),
            ));
        }
        self.bounds.validate()?;
        self.line_search.validate()
    }
}

#[derive(Clone, Debug)]
pub struct SpgOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spectral projected gradient with Barzilai–Borwein steps `sᵀy / yᵀy` and a
/// monotone Armijo safeguard along the projected direction.
pub fn spg_minimize<F, G>(
    mut obj: F,
    mut grad: G,
    init: &[f64],
    opts: &SpgOptions,
) -> Result<SpgOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    let bounds = opts.bounds;
    let ls = opts.line_search;
    let project = |v: &[f64]| v.iter().map(|&a| bounds.project(a)).collect::<Vec<f64>>();

    let mut x = project(init);
    let mut f = obj(&x)?;
    if !f.is_finite() {
        return Err(Error::domain(
            "objective is not finite at the initial point",
        ));
    }
    let mut g = grad(&x)?;
    let mut trace = vec![f];

    let projected_step = |x: &[f64], g: &[f64], lambda: f64| -> Vec<f64> {
        x.iter()
            .zip(g)
            .map(|(&xi, &gi)| bounds.project(xi - lambda * gi) - xi)
            .collect()
    };
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));

    let first = inf_norm(&projected_step(&x, &g, 1.0));
    let mut lambda = if first > 0.0 { 1.0 / first } else { 1.0 };
    lambda = lambda.clamp(opts.step_min, opts.step_max);

    let mut iterations = 0;
    while iterations < opts.max_iters {
        let d = projected_step(&x, &g, lambda);
        if inf_norm(&d) <= opts.tol {
            break;
        }
        let slope = dot(&g, &d);
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..ls.max_evals {
            let cand: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(a, b)| bounds.project(a + t * b))
                .collect();
            if let Ok(fc) = obj(&cand) {
                if fc.is_finite() && fc <= f + ls.armijo_c1 * t * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= ls.backtrack;
        }
        let Some((x_next, f_next)) = accepted else {
            break;
        };
        let g_next = grad(&x_next)?;
        let s: Vec<f64> = x_next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sty = dot(&s, &y);
        let yty = dot(&y, &y);
        lambda = if sty > 0.0 && yty > 0.0 {
            (sty / yty).clamp(opts.step_min, opts.step_max)
        } else {
            opts.step_max
        };
        x = x_next;
        f = f_next;
        g = g_next;
        trace.push(f);
        iterations += 1;
    }

    Ok(SpgOutcome {
        x,
        objective: f,
        iterations,
        trace,
    })
}

/// Frobenius gradient of the Karcher objective `B ↦ Σ ‖Log(Xᵢ^{-1/2} B Xᵢ^{-1/2})‖²`.
pub fn airm_sum_grad(samples: &[&SpdMatrix], b: &SpdMatrix) -> Result<SymMatrix> {
    let d = b.dim();
    let origin = crate::divergence::AbldParams::origin();
    let mut acc = DMatrix::zeros(d, d);
    for x in samples {
        acc += crate::divergence::abld_grad_y(x, b, &origin)?.into_inner();
    }
    Ok(SymMatrix::from_sym(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{abld_grad_y, special_divergence, SpecialKind};
    use crate::harness::synth::{random_spd, random_sym};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn riemannian_gradient_cases() {
        let mut r = rng(1);
        let g = random_sym(&mut r, 4);
        assert_eq!(riemannian_grad(&SpdMatrix::identity(4), &g), g);
        let b = random_spd(&mut r, 4);
        assert_eq!(riemannian_grad(&b, &SymMatrix::zeros(4)).norm(), 0.0);
        let direct: DMatrix<f64> = b.matrix() * g.matrix() * b.matrix();
        assert!((riemannian_grad(&b, &g).matrix() - &direct).norm() <= 1e-12 * direct.norm());
    }

    #[test]
    fn retraction_cases() {
        let mut r = rng(2);
        let b = random_spd(&mut r, 4);
        let same = retract(&b, &SymMatrix::zeros(4)).unwrap();
        assert!((same.matrix() - b.matrix()).norm() <= 1e-12 * b.matrix().norm());

        let s = [0.3, -1.2, 2.0];
        let e = retract(&SpdMatrix::identity(3), &SymMatrix::from_diagonal(&s)).unwrap();
        for i in 0..3 {
            assert!((e.matrix()[(i, i)] - s[i].exp()).abs() < 1e-12);
        }

        let xi = random_sym(&mut r, 4);
        let h = 1e-6;
        let plus = retract(&b, &xi.scale(h)).unwrap().into_inner();
        let minus = retract(&b, &xi.scale(-h)).unwrap().into_inner();
        let deriv = (plus - minus) / (2.0 * h);
        assert!((deriv - xi.matrix()).norm() <= 1e-6 * xi.norm().max(1.0));
    }

    #[test]
    fn retraction_stays_positive_definite_for_large_steps() {
        let mut r = rng(3);
        for _ in 0..20 {
            let b = random_spd(&mut r, 5);
            let xi = random_sym(&mut r, 5);
            for scale in [0.1, 1.0] {
                let out = retract(&b, &xi.scale(scale)).unwrap();
                assert!(SpdMatrix::new(out.into_inner()).is_ok());
            }
            // Far steps can push eigenvalues below the absolute validation
            // floor; the result must still factor as positive definite.
            for scale in [2.0, 3.0] {
                let out = retract(&b, &xi.scale(scale)).unwrap();
                assert!(out.matrix().clone().cholesky().is_some());
            }
        }
    }

    #[test]
    fn transport_cases() {
        let mut r = rng(4);
        let x = random_spd(&mut r, 4);
        let y = random_spd(&mut r, 4);
        let p = random_sym(&mut r, 4);
        let same = parallel_transport(&p, &x, &x).unwrap();
        assert!((same.matrix() - p.matrix()).norm() <= 1e-12 * p.norm().max(1.0));
        assert_eq!(
            parallel_transport(&SymMatrix::zeros(4), &x, &y)
                .unwrap()
                .norm(),
            0.0
        );
        let moved = parallel_transport(&p, &x, &y).unwrap();
        let before = inner(&x, &p, &p).unwrap();
        let after = inner(&y, &moved, &moved).unwrap();
        assert!((before - after).abs() <= 1e-8 * before);
    }

    fn burg_problem(
        a: SpdMatrix,
    ) -> (
        impl FnMut(&SpdMatrix) -> Result<f64>,
        impl FnMut(&SpdMatrix) -> Result<SymMatrix>,
    ) {
        let a2 = a.clone();
        (
            move |b: &SpdMatrix| special_divergence(b, &a, SpecialKind::Burg),
            move |b: &SpdMatrix| {
                // ∇_B [tr(B A⁻¹) − logdet B] = A⁻¹ − B⁻¹
                let ai = a2.inv()?.into_inner();
                let bi = b.inv()?.into_inner();
                Ok(SymMatrix::from_sym(ai - bi))
            },
        )
    }

    #[test]
    fn rcg_recovers_burg_minimizer() {
        let mut r = rng(5);
        let a = random_spd(&mut r, 4);
        let (f, g) = burg_problem(a.clone());
        let opts = RcgOptions {
            rel_obj_tol: 1e-14,
            ..RcgOptions::default()
        };
        let out = rcg_minimize(f, g, SpdMatrix::identity(4), &opts).unwrap();
        assert!(
            out.objective <= 1e-8,
            "{:?} {} {:?}",
            out.status,
            out.iterations,
            out.trace
        );
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((out.point.matrix() - a.matrix()).norm() <= 1e-3);
    }

    #[test]
    fn rcg_karcher_midpoint_of_commuting_diagonals() {
        let x1 = SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let x2 = SpdMatrix::from_diagonal(&[9.0, 16.0]).unwrap();
        let samples = [&x1, &x2];
        let opts = RcgOptions {
            rel_obj_tol: 1e-15,
            grad_tol: 1e-13,
            ..RcgOptions::default()
        };
        let out = rcg_minimize(
            |b| {
                Ok(special_divergence(&x1, b, SpecialKind::AirmSq)?
                    + special_divergence(&x2, b, SpecialKind::AirmSq)?)
            },
            |b| airm_sum_grad(&samples, b),
            SpdMatrix::identity(2),
            &opts,
        )
        .unwrap();
        let target = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[3.0, 8.0]));
        assert!(
            (out.point.matrix() - target).norm() <= 1e-6,
            "{}",
            out.point.matrix()
        );
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rcg_stops_immediately_at_a_stationary_point() {
        let mut r = rng(6);
        let a = random_spd(&mut r, 3);
        let (f, g) = burg_problem(a.clone());
        let out = rcg_minimize(f, g, a.clone(), &RcgOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.point, a);
        assert_eq!(out.status, RcgStatus::GradientVanished);
    }

    #[test]
    fn rcg_rejects_bad_options() {
        let opts = RcgOptions {
            line_search: LineSearchOptions {
                backtrack: 1.5,
                ..LineSearchOptions::default()
            },
            ..RcgOptions::default()
        };
        let x = SpdMatrix::identity(2);
        let res = rcg_minimize(|_| Ok(0.0), |_| Ok(SymMatrix::zeros(2)), x, &opts);
        assert!(res.is_err());
    }

    #[test]
    fn rcg_flags_line_search_failure() {
        // Gradient claims descent but the objective never decreases.
        let out = rcg_minimize(
            |b| Ok(b.matrix().trace().abs()),
            |_| Ok(SymMatrix::from_sym(-DMatrix::identity(2, 2))),
            SpdMatrix::identity(2),
            &RcgOptions::default(),
        )
        .unwrap();
        assert_eq!(out.status, RcgStatus::LineSearchFailure);
        assert_eq!(out.point, SpdMatrix::identity(2));
    }

    fn quadratic(
        c: Vec<f64>,
    ) -> (
        impl FnMut(&[f64]) -> Result<f64>,
        impl FnMut(&[f64]) -> Result<Vec<f64>>,
    ) {
        let c2 = c.clone();
        (
            move |x: &[f64]| Ok(x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum()),
            move |x: &[f64]| Ok(x.iter().zip(&c2).map(|(a, b)| 2.0 * (a - b)).collect()),
        )
    }

    #[test]
    fn spg_interior_minimizer() {
        let c = vec![0.7, 1.9, 0.2];
        let (f, g) = quadratic(c.clone());
        let out = spg_minimize(f, g, &[1.0, 1.0, 1.0], &SpgOptions::default()).unwrap();
        for (a, b) in out.x.iter().zip(&c) {
            assert!((a - b).abs() <= 1e-8);
        }
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn spg_projects_exterior_minimizer() {
        let c = vec![-0.5, 2.0];
        let (f, g) = quadratic(c);
        let out = spg_minimize(f, g, &[1.0, 1.0], &SpgOptions::default()).unwrap();
        assert!((out.x[0] - DEFAULT_EPS_MIN).abs() <= 1e-12);
        assert!((out.x[1] - 2.0).abs() <= 1e-8);

        let neg = SpgOptions {
            bounds: OrthantBox::new(Orthant::Negative),
            ..SpgOptions::default()
        };
        let (f, g) = quadratic(vec![-0.5, 2.0]);
        let out = spg_minimize(f, g, &[-1.0, -1.0], &neg).unwrap();
        assert!((out.x[0] + 0.5).abs() <= 1e-8);
        assert!((out.x[1] + DEFAULT_EPS_MIN).abs() <= 1e-12);
    }

    #[test]
    fn spg_returns_stationary_init() {
        let (f, g) = quadratic(vec![0.5, 0.5]);
        let out = spg_minimize(f, g, &[0.5, 0.5], &SpgOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.5, 0.5]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn airm_sum_gradient_matches_single_term() {
        let mut r = rng(7);
        let x = random_spd(&mut r, 3);
        let b = random_spd(&mut r, 3);
        let one = airm_sum_grad(&[&x], &b).unwrap();
        let direct = abld_grad_y(&x, &b, &crate::divergence::AbldParams::origin()).unwrap();
        assert!((one.matrix() - direct.matrix()).norm() < 1e-14);
    }
}
