//! αβ-KMeans: joint learning of a partition, SPD centroids and one shared
//! `(α, β)` pair, with log-Euclidean and Karcher k-means baselines.

use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SpdDataset;
use crate::divergence::{
    divergence_from_logs, grad_alpha_from_logs, grad_y_whitened, log_eigs, AbldParams,
};
use crate::error::{Error, Result};
use crate::iddl::le_centroids;
use crate::kmeans::kmeans_pp_seeds;
use crate::linalg::{sym, sym_exp, SpdMatrix, SymMatrix, Whitener};
use crate::manifold::{rcg_minimize, spg_minimize, RcgOptions, SpgOptions};

/// `E` ties `α = β`; `NE` learns them separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    E,
    NE,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E" => Ok(Variant::E),
            "NE" => Ok(Variant::NE),
            _ => Err(Error::InvalidParams(format!("unknown variant '{s}'"))),
        }
    }
}

/// Assignments (`0..k`), centroids and the shared divergence parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub centroids: Vec<SpdMatrix>,
    pub params: AbldParams,
    pub variant: Variant,
    /// Weight of `μ(α² + β²)`.
    pub mu: f64,
}

impl Partition {
    pub fn new(
        assignments: Vec<usize>,
        centroids: Vec<SpdMatrix>,
        params: AbldParams,
        variant: Variant,
        mu: f64,
    ) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidParams(
                "a partition needs at least one centroid".into(),
            ));
        }
        if let Some(&z) = assignments.iter().find(|&&z| z >= centroids.len()) {
            return Err(Error::InvalidParams(format!("assignment {z} out of range")));
        }
        if variant == Variant::E && params.alpha() != params.beta() {
            return Err(Error::InvalidParams("variant E requires α = β".into()));
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidParams("μ must be non-negative".into()));
        }
        Ok(Partition {
            assignments,
            centroids,
            params,
            variant,
            mu,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    fn regularizer(&self) -> f64 {
        self.mu * (self.params.alpha().powi(2) + self.params.beta().powi(2))
    }
}

fn check_sizes(data: &SpdDataset, part: &Partition) -> Result<()> {
    if data.len() != part.assignments.len() {
        return Err(Error::InvalidParams(format!(
            "{} samples but {} assignments",
            data.len(),
            part.assignments.len()
        )));
    }
    crate::linalg::check_same_dim(data.dim(), part.centroids[0].dim())
}

/// Logs of the generalized eigenvalues of each sample against its centroid.
fn assigned_logs(data: &SpdDataset, part: &Partition) -> Result<Vec<Vec<f64>>> {
    let whiteners = part
        .centroids
        .iter()
        .map(Whitener::new)
        .collect::<Result<Vec<_>>>()?;
    data.samples()
        .iter()
        .zip(&part.assignments)
        .map(|(x, &z)| log_eigs(whiteners[z].gen_eigvals(x)?.as_slice()))
        .collect()
}

/// `Σ_z Σ_{i∈π_z} D(X_i‖C_z) + μ(α² + β²)`.
pub fn idc_objective(data: &SpdDataset, part: &Partition) -> Result<f64> {
    check_sizes(data, part)?;
    let mut acc = 0.0;
    for l in assigned_logs(data, part)? {
        acc += divergence_from_logs(&l, &part.params)?;
    }
    Ok(acc + part.regularizer())
}

/// Divergences of every sample to every centroid, `N × k`.
fn divergence_table(
    data: &SpdDataset,
    centroids: &[SpdMatrix],
    p: &AbldParams,
) -> Result<DMatrix<f64>> {
    let mut t = DMatrix::zeros(data.len(), centroids.len());
    for (z, c) in centroids.iter().enumerate() {
        let wc = Whitener::new(c)?;
        for (i, x) in data.samples().iter().enumerate() {
            t[(i, z)] = divergence_from_logs(&log_eigs(wc.gen_eigvals(x)?.as_slice())?, p)?;
        }
    }
    Ok(t)
}

fn argmin_rows(t: &DMatrix<f64>) -> Vec<usize> {
    (0..t.nrows())
        .map(|i| {
            let mut best = 0;
            for z in 1..t.ncols() {
                if t[(i, z)] < t[(i, best)] {
                    best = z;
                }
            }
            best
        })
        .collect()
}

/// Nearest centroid under the current divergence; ties go to the lower index.
pub fn update_assignments(data: &SpdDataset, part: &Partition) -> Result<Partition> {
    check_sizes(data, part)?;
    let t = divergence_table(data, &part.centroids, &part.params)?;
    Ok(Partition {
        assignments: argmin_rows(&t),
        ..part.clone()
    })
}

fn cluster_members(assignments: &[usize], z: usize) -> Vec<usize> {
    assignments
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == z)
        .map(|(i, _)| i)
        .collect()
}

/// Minimizes `Σ_{i∈members} D(X_i‖C)` over `C` with bounded RCG.
fn refine_centroid(
    data: &SpdDataset,
    members: &[usize],
    init: &SpdMatrix,
    p: &AbldParams,
    opts: &RcgOptions,
) -> Result<SpdMatrix> {
    let obj = |c: &SpdMatrix| {
        let wc = Whitener::new(c)?;
        let mut acc = 0.0;
        for &i in members {
            acc += divergence_from_logs(&log_eigs(wc.gen_eigvals(data.sample(i))?.as_slice())?, p)?;
        }
        Ok(acc)
    };
    let grad = |c: &SpdMatrix| {
        let d = c.dim();
        let mut acc = DMatrix::zeros(d, d);
        for &i in members {
            acc += grad_y_whitened(data.whitener(i), c, p, 1.0)?;
        }
        Ok(SymMatrix::from_sym(acc))
    };
    Ok(rcg_minimize(obj, grad, init.clone(), opts)?.point)
}

/// Bounded RCG on every non-empty cluster. An empty cluster's centroid is
/// moved to the sample farthest from its own centroid (each such sample used once).
pub fn update_centroids(
    data: &SpdDataset,
    part: &Partition,
    opts: &RcgOptions,
) -> Result<Partition> {
    check_sizes(data, part)?;
    let mut centroids = part.centroids.clone();
    let mut empty = Vec::new();
    for (z, c) in centroids.iter_mut().enumerate() {
        let members = cluster_members(&part.assignments, z);
        if members.is_empty() {
            empty.push(z);
            continue;
        }
        *c = refine_centroid(data, &members, c, &part.params, opts).map_err(|e| e.in_atom(z))?;
    }
    if !empty.is_empty() {
        let own = divergence_table(data, &centroids, &part.params)?;
        let mut far: Vec<(f64, usize)> = part
            .assignments
            .iter()
            .enumerate()
            .map(|(i, &z)| (own[(i, z)], i))
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (z, (_, i)) in empty.into_iter().zip(far) {
            debug!("cluster {z} is empty; re-seeded at sample {i}");
            centroids[z] = data.sample(i).clone();
        }
    }
    Ok(Partition {
        centroids,
        ..part.clone()
    })
}

/// SPG on `(α, β)` (a single `t = α = β` for variant E) with the
/// assignments and centroids fixed.
pub fn update_divergence_params(
    data: &SpdDataset,
    part: &Partition,
    opts: &SpgOptions,
) -> Result<Partition> {
    check_sizes(data, part)?;
    if part.params.is_origin() {
        return Err(Error::InvalidParams(
            "origin parameters cannot be learned".into(),
        ));
    }
    let logs = assigned_logs(data, part)?;
    let neg: Vec<Vec<f64>> = logs
        .iter()
        .map(|l| l.iter().map(|x| -x).collect())
        .collect();
    let eps = opts.bounds.eps_min;
    let variant = part.variant;
    let mu = part.mu;
    let to_params = |x: &[f64]| match variant {
        Variant::E => AbldParams::with_eps_min(x[0], x[0], eps),
        Variant::NE => AbldParams::with_eps_min(x[0], x[1], eps),
    };
    let obj = |x: &[f64]| {
        let p = to_params(x)?;
        let mut acc = 0.0;
        for l in &logs {
            acc += divergence_from_logs(l, &p)?;
        }
        Ok(acc + mu * (p.alpha().powi(2) + p.beta().powi(2)))
    };
    let grad = |x: &[f64]| {
        let p = to_params(x)?;
        let (a, b) = (p.alpha(), p.beta());
        let (mut ga, mut gb) = (2.0 * mu * a, 2.0 * mu * b);
        for (l, nl) in logs.iter().zip(&neg) {
            ga += grad_alpha_from_logs(l, a, b)?;
            gb += grad_alpha_from_logs(nl, b, a)?;
        }
        Ok(match variant {
            Variant::E => vec![ga + gb],
            Variant::NE => vec![ga, gb],
        })
    };
    let init = match variant {
        Variant::E => vec![part.params.alpha()],
        Variant::NE => vec![part.params.alpha(), part.params.beta()],
    };
    let out = spg_minimize(obj, grad, &init, opts)?;
    Ok(Partition {
        params: to_params(&out.x)?,
        ..part.clone()
    })
}

/// `∇_C Σ_{i∈π_z} D(X_i‖C)` at the current centroid `C_z`.
pub fn idc_centroid_grad(data: &SpdDataset, part: &Partition, z: usize) -> Result<SymMatrix> {
    check_sizes(data, part)?;
    let c = part
        .centroids
        .get(z)
        .ok_or_else(|| Error::InvalidParams(format!("cluster {z} out of range")))?;
    let d = c.dim();
    let mut acc = DMatrix::zeros(d, d);
    for i in cluster_members(&part.assignments, z) {
        acc += grad_y_whitened(data.whitener(i), c, &part.params, 1.0)?;
    }
    Ok(SymMatrix::from_sym(acc))
}

/// `(∂/∂α, ∂/∂β)` of the full objective, regularizer included.
pub fn idc_param_grad(data: &SpdDataset, part: &Partition) -> Result<(f64, f64)> {
    check_sizes(data, part)?;
    let (a, b) = (part.params.alpha(), part.params.beta());
    if part.params.is_origin() {
        return Err(Error::domain(
            "parameter derivatives do not exist at the origin",
        ));
    }
    let (mut ga, mut gb) = (2.0 * part.mu * a, 2.0 * part.mu * b);
    for l in assigned_logs(data, part)? {
        ga += grad_alpha_from_logs(&l, a, b)?;
        let neg: Vec<f64> = l.iter().map(|x| -x).collect();
        gb += grad_alpha_from_logs(&neg, b, a)?;
    }
    Ok((ga, gb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbKMeansOptions {
    pub mu: f64,
    pub max_outer: usize,
    /// Stop once at least this fraction of assignments is unchanged.
    pub stability: f64,
    pub centroid_rcg: RcgOptions,
    pub param_spg: SpgOptions,
}

impl Default for AbKMeansOptions {
    fn default() -> Self {
        AbKMeansOptions {
            mu: 1.0,
            max_outer: 100,
            stability: 0.999,
            centroid_rcg: RcgOptions::default().with_max_iters(10),
            param_spg: SpgOptions {
                max_iters: 20,
                ..SpgOptions::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterBlock {
    Init,
    Centroids,
    Params,
    Assignments,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub block: ClusterBlock,
    pub objective: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl TraceEntry {
    fn at(outer: usize, block: ClusterBlock, data: &SpdDataset, part: &Partition) -> Result<Self> {
        Ok(TraceEntry {
            outer,
            block,
            objective: idc_objective(data, part)?,
            alpha: part.params.alpha(),
            beta: part.params.beta(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterTermination {
    Stable,
    MaxOuterIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub trace: Vec<TraceEntry>,
    /// Fraction of unchanged assignments after each outer iteration.
    pub unchanged: Vec<f64>,
    /// `(α, β)` after each outer iteration.
    pub params: Vec<[f64; 2]>,
    pub outer_iterations: usize,
    pub termination: ClusterTermination,
}

/// Block-coordinate descent over centroids, `(α, β)` and assignments,
/// started from log-Euclidean k-means with `α = β = 1`.
pub fn ab_kmeans(
    data: &SpdDataset,
    k: usize,
    variant: Variant,
    seed: u64,
    opts: &AbKMeansOptions,
) -> Result<(Partition, ClusterReport)> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidParams(format!(
            "cannot form {k} clusters from {} samples",
            data.len()
        )));
    }
    if opts.mu == 0.0 {
        warn!("μ = 0: the divergence parameters are unregularized and may diverge");
    }
    let le = le_kmeans(data, k, seed)?;
    let mut part = Partition::new(
        le.assignments,
        le.centroids,
        AbldParams::unit(),
        variant,
        opts.mu,
    )?;
    let mut report = ClusterReport {
        trace: vec![TraceEntry::at(0, ClusterBlock::Init, data, &part)?],
        unchanged: Vec::new(),
        params: Vec::new(),
        outer_iterations: 0,
        termination: ClusterTermination::MaxOuterIterations,
    };
    let n = data.len() as f64;
    for outer in 1..=opts.max_outer {
        part = update_centroids(data, &part, &opts.centroid_rcg)
            .map_err(|e| e.in_block("centroids"))?;
        report
            .trace
            .push(TraceEntry::at(outer, ClusterBlock::Centroids, data, &part)?);
        part = update_divergence_params(data, &part, &opts.param_spg)
            .map_err(|e| e.in_block("parameters"))?;
        report
            .trace
            .push(TraceEntry::at(outer, ClusterBlock::Params, data, &part)?);
        let next = update_assignments(data, &part).map_err(|e| e.in_block("assignments"))?;
        let same = next
            .assignments
            .iter()
            .zip(&part.assignments)
            .filter(|(a, b)| a == b)
            .count() as f64
            / n;
        part = next;
        report.trace.push(TraceEntry::at(
            outer,
            ClusterBlock::Assignments,
            data,
            &part,
        )?);
        report.unchanged.push(same);
        report
            .params
            .push([part.params.alpha(), part.params.beta()]);
        report.outer_iterations = outer;
        debug!(
            "ab-kmeans outer {outer}: objective {:.6e}, unchanged {same:.4}, (α, β) = ({}, {})",
            report.trace.last().map_or(0.0, |t| t.objective),
            part.params.alpha(),
            part.params.beta()
        );
        if same >= opts.stability {
            report.termination = ClusterTermination::Stable;
            break;
        }
    }
    Ok((part, report))
}

/// Euclidean k-means on matrix logarithms; centroids mapped back by `exp`.
/// The returned partition carries origin parameters and `μ = 0`.
pub fn le_kmeans(data: &SpdDataset, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidParams(format!(
            "cannot form {k} clusters from {} samples",
            data.len()
        )));
    }
    let (centroids, assignments) = le_centroids(data.samples(), k, seed)?;
    Partition::new(
        assignments,
        centroids,
        AbldParams::origin(),
        Variant::E,
        0.0,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KarcherOptions {
    pub max_iters: usize,
    /// Stop once the Riemannian gradient norm falls below this.
    pub tol: f64,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        KarcherOptions {
            max_iters: 100,
            tol: 1e-12,
        }
    }
}

/// Riemannian gradient descent with unit step on `Σ_i ‖Log(X_i^{-1/2} M X_i^{-1/2})‖²`:
/// `M ← M^{1/2} Exp(mean_i Log(M^{-1/2} X_i M^{-1/2})) M^{1/2}`, from the log-Euclidean mean.
pub fn karcher_mean(samples: &[&SpdMatrix], opts: &KarcherOptions) -> Result<SpdMatrix> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidParams("Karcher mean of no samples".into()));
    };
    let d = first.dim();
    let nf = samples.len() as f64;
    let mut log_mean = DMatrix::zeros(d, d);
    for s in samples {
        log_mean += s.log()?.into_inner();
    }
    let mut m = sym_exp(&SymMatrix::from_sym(log_mean / nf))?;
    for _ in 0..opts.max_iters {
        let e = m.eig()?;
        let half = e.map(f64::sqrt);
        let neg_half = e.map(|v| 1.0 / v.sqrt());
        let mut t = DMatrix::zeros(d, d);
        for s in samples {
            let inner = SpdMatrix::new(sym(&(&neg_half * s.matrix() * &neg_half)))?;
            t += inner.log()?.into_inner();
        }
        t /= nf;
        let step = sym_exp(&SymMatrix::from_sym(t.clone()))?;
        m = SpdMatrix::new(sym(&(&half * step.matrix() * &half)))?;
        if t.norm() <= opts.tol {
            break;
        }
    }
    Ok(m)
}

/// Lloyd iterations with squared-AIRM assignment and Karcher-mean centroids,
/// seeded by k-means++ in the log domain. Empty clusters keep their centroid.
pub fn karcher_kmeans(
    data: &SpdDataset,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Partition> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidParams(format!(
            "cannot form {k} clusters from {} samples",
            data.len()
        )));
    }
    let points = data
        .samples()
        .iter()
        .map(|s| Ok(DVector::from_column_slice(s.log()?.matrix().as_slice())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<SpdMatrix> = kmeans_pp_seeds(&points, k, &mut rng)
        .into_iter()
        .map(|i| data.sample(i).clone())
        .collect();
    let origin = AbldParams::origin();
    let mut part = Partition::new(vec![0; data.len()], centroids, origin, Variant::E, 0.0)?;
    part = update_assignments(data, &part)?;
    for _ in 0..max_iters {
        for z in 0..k {
            let members: Vec<&SpdMatrix> = cluster_members(&part.assignments, z)
                .into_iter()
                .map(|i| data.sample(i))
                .collect();
            if !members.is_empty() {
                part.centroids[z] = karcher_mean(&members, &KarcherOptions::default())?;
            }
        }
        let next = update_assignments(data, &part)?;
        let done = next.assignments == part.assignments;
        part = next;
        if done {
            break;
        }
    }
    Ok(part)
}

/// Pairwise F1: precision and recall of "same cluster" against "same label"
/// over all sample pairs. Zero when no pair shares a predicted cluster.
pub fn f1_score(assignments: &[usize], truth: &[usize]) -> Result<f64> {
    if assignments.len() != truth.len() {
        return Err(Error::InvalidParams(
            "assignment and label counts differ".into(),
        ));
    }
    let rows = assignments.iter().max().map_or(0, |m| m + 1);
    let cols = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; rows * cols];
    for (&a, &t) in assignments.iter().zip(truth) {
        table[a * cols + t] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let tp: f64 = table.iter().map(|&c| pairs(c)).sum();
    let predicted: f64 = (0..rows)
        .map(|a| pairs(table[a * cols..(a + 1) * cols].iter().sum()))
        .sum();
    let actual: f64 = (0..cols)
        .map(|t| pairs((0..rows).map(|a| table[a * cols + t]).sum()))
        .sum();
    if predicted == 0.0 || actual == 0.0 || tp == 0.0 {
        return Ok(0.0);
    }
    let (p, r) = (tp / predicted, tp / actual);
    Ok(2.0 * p * r / (p + r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{abld, special_divergence, SpecialKind};
    use crate::harness::synth::{random_spd, wishart_synth, WishartSpec};

    fn dataset(samples: Vec<SpdMatrix>) -> SpdDataset {
        SpdDataset::new(samples).unwrap()
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<SpdMatrix> = (0..2).map(|_| random_spd(&mut rng, 3)).collect();
        let data = dataset(vec![c[0].clone(), c[1].clone(), c[0].clone()]);
        let mut part = Partition::new(
            vec![0, 1, 0],
            c.clone(),
            AbldParams::unit(),
            Variant::E,
            0.0,
        )
        .unwrap();
        assert!(idc_objective(&data, &part).unwrap() <= 1e-10);
        part.mu = 0.5;
        assert!((idc_objective(&data, &part).unwrap() - 1.0).abs() <= 1e-10);

        let xs: Vec<SpdMatrix> = (0..5).map(|_| random_spd(&mut rng, 3)).collect();
        let data = dataset(xs.clone());
        let p = AbldParams::new(0.6, 1.4).unwrap();
        let part = Partition::new(vec![1, 0, 1, 1, 0], c.clone(), p, Variant::NE, 0.3).unwrap();
        let naive: f64 = xs
            .iter()
            .zip(&part.assignments)
            .map(|(x, &z)| abld(x, &c[z], &p).unwrap())
            .sum::<f64>()
            + 0.3 * (0.36 + 1.96);
        assert!((idc_objective(&data, &part).unwrap() - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn assignment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c: Vec<SpdMatrix> = (0..4).map(|_| random_spd(&mut rng, 3)).collect();
        let data = dataset(vec![c[2].clone()]);
        let part = Partition::new(vec![0], c.clone(), AbldParams::unit(), Variant::E, 1.0).unwrap();
        assert_eq!(
            update_assignments(&data, &part).unwrap().assignments,
            vec![2]
        );

        let twin = vec![c[1].clone(), c[1].clone()];
        let part = Partition::new(vec![1], twin, AbldParams::unit(), Variant::E, 1.0).unwrap();
        let x = dataset(vec![random_spd(&mut rng, 3)]);
        assert_eq!(update_assignments(&x, &part).unwrap().assignments, vec![0]);

        let xs = dataset((0..12).map(|_| random_spd(&mut rng, 3)).collect());
        let p = AbldParams::new(0.4, 0.9).unwrap();
        let part = Partition::new(vec![0; 12], c.clone(), p, Variant::NE, 1.0).unwrap();
        let once = update_assignments(&xs, &part).unwrap();
        for (i, &z) in once.assignments.iter().enumerate() {
            let best = (0..4)
                .min_by(|&a, &b| {
                    abld(xs.sample(i), &c[a], &p)
                        .unwrap()
                        .total_cmp(&abld(xs.sample(i), &c[b], &p).unwrap())
                })
                .unwrap();
            assert_eq!(z, best);
        }
        assert!(idc_objective(&xs, &once).unwrap() <= idc_objective(&xs, &part).unwrap());
        assert_eq!(
            update_assignments(&xs, &once).unwrap().assignments,
            once.assignments
        );
    }

    #[test]
    fn centroid_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_spd(&mut rng, 3);
        let data = dataset(vec![x.clone()]);
        let part = Partition::new(
            vec![0],
            vec![SpdMatrix::identity(3)],
            AbldParams::unit(),
            Variant::E,
            0.0,
        )
        .unwrap();
        let opts = RcgOptions {
            rel_obj_tol: 1e-12,
            ..RcgOptions::default()
        };
        let moved = update_centroids(&data, &part, &opts).unwrap();
        assert!(idc_objective(&data, &moved).unwrap() <= 1e-8);

        let a = SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let b = SpdMatrix::from_diagonal(&[9.0, 16.0]).unwrap();
        let data = dataset(vec![a, b]);
        let part = Partition::new(
            vec![0, 0],
            vec![SpdMatrix::identity(2)],
            AbldParams::origin(),
            Variant::E,
            0.0,
        )
        .unwrap();
        let tight = RcgOptions {
            rel_obj_tol: 1e-15,
            grad_tol: 1e-13,
            ..RcgOptions::default()
        };
        let mid = update_centroids(&data, &part, &tight).unwrap();
        let target = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, 8.0]));
        assert!((mid.centroids[0].matrix() - target).norm() <= 1e-6);

        let again = update_centroids(&data, &mid, &tight).unwrap();
        assert!((again.centroids[0].matrix() - mid.centroids[0].matrix()).norm() <= 1e-8);
    }

    #[test]
    fn empty_cluster_is_reseeded_at_the_farthest_sample() {
        let xs = vec![
            SpdMatrix::identity(2),
            SpdMatrix::from_diagonal(&[1.1, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[50.0, 1.0]).unwrap(),
        ];
        let data = dataset(xs.clone());
        let part = Partition::new(
            vec![0, 0, 0],
            vec![
                SpdMatrix::identity(2),
                SpdMatrix::from_diagonal(&[7.0, 7.0]).unwrap(),
            ],
            AbldParams::unit(),
            Variant::E,
            1.0,
        )
        .unwrap();
        let out = update_centroids(&data, &part, &RcgOptions::default().with_max_iters(0)).unwrap();
        assert_eq!(out.centroids[1], xs[2]);
    }

    #[test]
    fn parameter_examples() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 10, 4)).unwrap();
        let le = le_kmeans(data.data(), 2, 0).unwrap();
        let heavy = Partition::new(
            le.assignments.clone(),
            le.centroids.clone(),
            AbldParams::unit(),
            Variant::NE,
            1e6,
        )
        .unwrap();
        let out = update_divergence_params(data.data(), &heavy, &SpgOptions::default()).unwrap();
        assert!(
            (out.params.alpha() - 1e-4).abs() < 1e-9 && (out.params.beta() - 1e-4).abs() < 1e-9
        );

        let tied = Partition::new(
            le.assignments,
            le.centroids,
            AbldParams::unit(),
            Variant::E,
            1.0,
        )
        .unwrap();
        let out = update_divergence_params(data.data(), &tied, &SpgOptions::default()).unwrap();
        assert_eq!(out.params.alpha(), out.params.beta());
        assert!(
            idc_objective(data.data(), &out).unwrap() <= idc_objective(data.data(), &tied).unwrap()
        );
    }

    #[test]
    fn le_and_karcher_baselines() {
        let e = std::f64::consts::E;
        let data = dataset(vec![
            SpdMatrix::identity(2),
            SpdMatrix::from_diagonal(&[e * e, e * e]).unwrap(),
        ]);
        let p = le_kmeans(&data, 1, 0).unwrap();
        let target = DMatrix::from_diagonal(&DVector::from_row_slice(&[e, e]));
        assert!((p.centroids[0].matrix() - target).norm() < 1e-12);

        let x = SpdMatrix::from_diagonal(&[2.0, 3.0]).unwrap();
        let same = dataset(vec![x.clone(); 3]);
        for c in karcher_kmeans(&same, 2, 1, 20).unwrap().centroids {
            assert!((c.matrix() - x.matrix()).norm() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let b = random_spd(&mut rng, 4);
        let m = karcher_mean(&[&a, &b], &KarcherOptions::default()).unwrap();
        let ah = a.sqrt().unwrap().into_inner();
        let ahi = a.inv_sqrt().unwrap().into_inner();
        let inner = SpdMatrix::new(sym(&(&ahi * b.matrix() * &ahi))).unwrap();
        let mid = &ah * inner.sqrt().unwrap().into_inner() * &ah;
        assert!((m.matrix() - mid).norm() <= 1e-6);
        let da = special_divergence(&a, &m, SpecialKind::AirmSq).unwrap();
        let db = special_divergence(&b, &m, SpecialKind::AirmSq).unwrap();
        assert!((da - db).abs() < 1e-8);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(f1_score(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!((f1_score(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(f1_score(&[0, 1, 2, 3], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_run_is_stable_immediately() {
        let data = wishart_synth(&WishartSpec::new(1, 3, 8, 6)).unwrap();
        let (part, report) =
            ab_kmeans(data.data(), 1, Variant::NE, 0, &AbKMeansOptions::default()).unwrap();
        assert_eq!(report.outer_iterations, 1);
        assert_eq!(report.termination, ClusterTermination::Stable);
        assert!(part.assignments.iter().all(|&z| z == 0));
    }

    #[test]
    fn trace_is_monotone() {
        let data = wishart_synth(&WishartSpec::new(3, 4, 10, 7)).unwrap();
        for variant in [Variant::E, Variant::NE] {
            let (part, report) =
                ab_kmeans(data.data(), 3, variant, 1, &AbKMeansOptions::default()).unwrap();
            let objs: Vec<f64> = report.trace.iter().map(|t| t.objective).collect();
            assert!(
                objs.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()),
                "{objs:?}"
            );
            if variant == Variant::E {
                assert!(report.params.iter().all(|p| p[0] == p[1]));
            }
            assert!(part.params.alpha() > 0.0);
        }
    }

    #[test]
    fn one_cluster_per_sample_leaves_the_regularizer() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 3, 8)).unwrap();
        let (part, report) =
            ab_kmeans(data.data(), 6, Variant::NE, 0, &AbKMeansOptions::default()).unwrap();
        let obj = report.trace.last().unwrap().objective;
        assert!(
            (obj - part.regularizer()).abs() <= 1e-6,
            "{obj} vs {}",
            part.regularizer()
        );
    }
}
