//! Joint divergence and dictionary learning: samples are encoded by their
//! learned divergences to a set of SPD atoms and classified linearly.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSpdDataset;
use crate::divergence::{
    divergence_from_logs, grad_alpha_from_logs, grad_y_whitened, log_eigs, AbldParams,
    DEFAULT_EPS_MIN,
};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::linalg::{check_same_dim, sym_exp, SpdMatrix, SymMatrix, Whitener};
use crate::manifold::{rcg_minimize, spg_minimize, OrthantBox, RcgOptions, SpgOptions};

/// How divergence parameters are shared across atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tying {
    /// One `(α, β)` pair for all atoms.
    S,
    /// Per atom, with `α_k = β_k`.
    V,
    /// Per atom, independent.
    N,
    /// Frozen at the origin (squared AIRM).
    A,
    /// Frozen at `α = β = 1`.
    B,
}

impl Tying {
    pub fn is_frozen(self) -> bool {
        matches!(self, Tying::A | Tying::B)
    }
}

impl FromStr for Tying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S" => Ok(Tying::S),
            "V" => Ok(Tying::V),
            "N" => Ok(Tying::N),
            "A" => Ok(Tying::A),
            "B" => Ok(Tying::B),
            _ => Err(Error::InvalidParams(format!("unknown tying mode '{s}'"))),
        }
    }
}

impl fmt::Display for Tying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    Ridge,
    Ssvm,
}

impl Loss {
    /// Encoding length for `n` atoms; the SVM appends a constant bias slot.
    pub fn encoding_len(self, n: usize) -> usize {
        match self {
            Loss::Ridge => n,
            Loss::Ssvm => n + 1,
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridge" => Ok(Loss::Ridge),
            "ssvm" | "svm" => Ok(Loss::Ssvm),
            _ => Err(Error::InvalidParams(format!("unknown loss '{s}'"))),
        }
    }
}

/// Which blocks the trainer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Joint,
    FixAtoms,
    FixParams,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "joint" => Ok(Ablation::Joint),
            "fix_atoms" => Ok(Ablation::FixAtoms),
            "fix_params" => Ok(Ablation::FixParams),
            _ => Err(Error::InvalidParams(format!("unknown ablation mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamInit {
    Grid,
    Burg,
}

impl FromStr for ParamInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(ParamInit::Grid),
            "burg" => Ok(ParamInit::Burg),
            _ => Err(Error::InvalidParams(format!(
                "unknown initialization '{s}'"
            ))),
        }
    }
}

/// SPD atoms with their divergence parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    atoms: Vec<SpdMatrix>,
    params: Vec<AbldParams>,
    tying: Tying,
}

impl Dictionary {
    pub fn new(atoms: Vec<SpdMatrix>, params: Vec<AbldParams>, tying: Tying) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidParams(
                "a dictionary needs at least one atom".into(),
            ));
        };
        if atoms.len() != params.len() {
            return Err(Error::InvalidParams(format!(
                "{} atoms but {} parameter pairs",
                atoms.len(),
                params.len()
            )));
        }
        for a in &atoms {
            check_same_dim(first.dim(), a.dim())?;
        }
        let ok = match tying {
            Tying::S => params.iter().all(|p| *p == params[0]) && !params[0].is_origin(),
            Tying::V => params
                .iter()
                .all(|p| p.alpha() == p.beta() && !p.is_origin()),
            Tying::N => params.iter().all(|p| !p.is_origin()),
            Tying::A => params.iter().all(|p| p.is_origin()),
            Tying::B => params.iter().all(|p| *p == AbldParams::unit()),
        };
        if !ok {
            return Err(Error::InvalidParams(format!(
                "parameters do not satisfy tying mode {tying}"
            )));
        }
        Ok(Dictionary {
            atoms,
            params,
            tying,
        })
    }

    /// Every atom gets `p`; frozen modes override it with their fixed value.
    pub fn uniform(atoms: Vec<SpdMatrix>, tying: Tying, p: AbldParams) -> Result<Self> {
        let p = match tying {
            Tying::A => AbldParams::origin(),
            Tying::B => AbldParams::unit(),
            Tying::V => AbldParams::tied(p.alpha())?,
            _ => p,
        };
        let n = atoms.len();
        Dictionary::new(atoms, vec![p; n], tying)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn atoms(&self) -> &[SpdMatrix] {
        &self.atoms
    }

    pub fn params(&self) -> &[AbldParams] {
        &self.params
    }

    pub fn tying(&self) -> Tying {
        self.tying
    }

    /// Free parameter vector in the layout the trainer optimizes:
    /// S → `[α, β]`, V → `[t_k]`, N → `[α_0, β_0, α_1, …]`, frozen → empty.
    pub fn packed_params(&self) -> Vec<f64> {
        pack(&self.params, self.tying)
    }
}

fn pack(params: &[AbldParams], tying: Tying) -> Vec<f64> {
    match tying {
        Tying::S => vec![params[0].alpha(), params[0].beta()],
        Tying::V => params.iter().map(|p| p.alpha()).collect(),
        Tying::N => params.iter().flat_map(|p| [p.alpha(), p.beta()]).collect(),
        Tying::A | Tying::B => Vec::new(),
    }
}

fn unpack(x: &[f64], tying: Tying, n: usize, eps_min: f64) -> Result<Vec<AbldParams>> {
    Ok(match tying {
        Tying::S => vec![AbldParams::with_eps_min(x[0], x[1], eps_min)?; n],
        Tying::V => x
            .iter()
            .map(|&t| AbldParams::with_eps_min(t, t, eps_min))
            .collect::<Result<_>>()?,
        Tying::N => x
            .chunks(2)
            .map(|c| AbldParams::with_eps_min(c[0], c[1], eps_min))
            .collect::<Result<_>>()?,
        Tying::A => vec![AbldParams::origin(); n],
        Tying::B => vec![AbldParams::unit(); n],
    })
}

/// Reduces per-atom `(∂α_k, ∂β_k)` to the packed layout.
fn pack_grad(per_atom: &[(f64, f64)], tying: Tying) -> Vec<f64> {
    match tying {
        Tying::S => {
            let (a, b) = per_atom
                .iter()
                .fold((0.0, 0.0), |(a, b), &(ga, gb)| (a + ga, b + gb));
            vec![a, b]
        }
        Tying::V => per_atom.iter().map(|&(a, b)| a + b).collect(),
        Tying::N => per_atom.iter().flat_map(|&(a, b)| [a, b]).collect(),
        Tying::A | Tying::B => Vec::new(),
    }
}

/// Linear classifier on encodings. `w` is `L × n` for ridge and `L × (n+1)`
/// for the SVM, whose last column multiplies the constant bias slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierWeights {
    pub w: DMatrix<f64>,
    pub loss: Loss,
    pub gamma: f64,
    pub margin: f64,
}

impl ClassifierWeights {
    pub fn zeros(num_classes: usize, n_atoms: usize, loss: Loss, gamma: f64, margin: f64) -> Self {
        ClassifierWeights {
            w: DMatrix::zeros(num_classes, loss.encoding_len(n_atoms)),
            loss,
            gamma,
            margin,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }
}

/// `v_k = D^{(α_k,β_k)}(X‖B_k)`, with a trailing 1 for the SVM.
pub fn encode(x: &SpdMatrix, dict: &Dictionary, loss: Loss) -> Result<DVector<f64>> {
    check_same_dim(x.dim(), dict.dim())?;
    let mut v = DVector::zeros(loss.encoding_len(dict.len()));
    for (k, (b, p)) in dict.atoms.iter().zip(&dict.params).enumerate() {
        v[k] = crate::divergence::abld(x, b, p).map_err(|e| e.in_atom(k))?;
    }
    if loss == Loss::Ssvm {
        v[dict.len()] = 1.0;
    }
    Ok(v)
}

/// Encodings of every sample as columns.
pub fn encode_dataset(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    loss: Loss,
) -> Result<DMatrix<f64>> {
    let logs = atom_logs(data, dict)?;
    encodings_from_logs(&logs, &dict.params, loss)
}

/// `logs[k][i]` = logs of the generalized eigenvalues of `X_i B_k⁻¹`.
type LogCache = Vec<Vec<Vec<f64>>>;

fn logs_for_atom(data: &LabeledSpdDataset, atom: &SpdMatrix) -> Result<Vec<Vec<f64>>> {
    let wb = Whitener::new(atom)?;
    data.data()
        .samples()
        .iter()
        .map(|x| log_eigs(wb.gen_eigvals(x)?.as_slice()))
        .collect()
}

fn atom_logs(data: &LabeledSpdDataset, dict: &Dictionary) -> Result<LogCache> {
    check_same_dim(data.dim(), dict.dim())?;
    dict.atoms
        .iter()
        .enumerate()
        .map(|(k, b)| logs_for_atom(data, b).map_err(|e| e.in_atom(k)))
        .collect()
}

fn row_from_logs(logs: &[Vec<f64>], p: &AbldParams) -> Result<Vec<f64>> {
    logs.iter().map(|l| divergence_from_logs(l, p)).collect()
}

fn encodings_from_logs(logs: &LogCache, params: &[AbldParams], loss: Loss) -> Result<DMatrix<f64>> {
    let n = logs.len();
    let count = logs.first().map_or(0, |r| r.len());
    let mut v = DMatrix::zeros(loss.encoding_len(n), count);
    for (k, (row, p)) in logs.iter().zip(params).enumerate() {
        for (i, val) in row_from_logs(row, p)
            .map_err(|e| e.in_atom(k))?
            .into_iter()
            .enumerate()
        {
            v[(k, i)] = val;
        }
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(format!("encoding evaluated to {bad}")));
    }
    if loss == Loss::Ssvm {
        v.row_mut(n).fill(1.0);
    }
    Ok(v)
}

/// Loss evaluation on precomputed encodings.
struct Objective<'a> {
    labels: &'a [usize],
    h: DMatrix<f64>,
    loss: Loss,
    gamma: f64,
    margin: f64,
}

impl<'a> Objective<'a> {
    fn new(data: &'a LabeledSpdDataset, w: &ClassifierWeights) -> Self {
        Objective {
            labels: data.labels(),
            h: data.one_hot(),
            loss: w.loss,
            gamma: w.gamma,
            margin: w.margin,
        }
    }

    fn value(&self, v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        let reg = self.gamma * w.norm_squared();
        match self.loss {
            Loss::Ridge => 0.5 * (&self.h - w * v).norm_squared() + reg,
            Loss::Ssvm => {
                let g = w * v;
                let mut acc = 0.0;
                for (i, &y) in self.labels.iter().enumerate() {
                    for l in 0..g.nrows() {
                        if l != y {
                            acc += (g[(l, i)] - g[(y, i)] + self.margin).max(0.0);
                        }
                    }
                }
                acc + reg
            }
        }
    }

    /// Hinge terms with strictly positive margin violation.
    fn active(&self, g: &DMatrix<f64>, i: usize, l: usize) -> bool {
        let y = self.labels[i];
        l != y && g[(l, i)] - g[(y, i)] + self.margin > 0.0
    }

    /// `∂f/∂V`, one column per sample.
    fn sensitivity(&self, v: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        match self.loss {
            Loss::Ridge => -w.transpose() * (&self.h - w * v),
            Loss::Ssvm => {
                let g = w * v;
                let mut s = DMatrix::zeros(v.nrows(), v.ncols());
                for (i, &y) in self.labels.iter().enumerate() {
                    for l in 0..g.nrows() {
                        if self.active(&g, i, l) {
                            let diff = (w.row(l) - w.row(y)).transpose();
                            let mut col = s.column_mut(i);
                            col += &diff;
                        }
                    }
                }
                s
            }
        }
    }

    fn grad_w(&self, v: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let reg = w * (2.0 * self.gamma);
        match self.loss {
            Loss::Ridge => -(&self.h - w * v) * v.transpose() + reg,
            Loss::Ssvm => {
                let g = w * v;
                let mut out = reg;
                for (i, &y) in self.labels.iter().enumerate() {
                    for l in 0..g.nrows() {
                        if self.active(&g, i, l) {
                            let col = v.column(i).transpose();
                            let mut row = out.row_mut(l);
                            row += &col;
                            let mut row_y = out.row_mut(y);
                            row_y -= &col;
                        }
                    }
                }
                out
            }
        }
    }
}

/// `Σ_i ½‖h_i − W v_i‖² + γ‖W‖²_F`, the penalty counted once.
pub fn ridge_loss(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<f64> {
    require_loss(w, Loss::Ridge)?;
    let v = encode_dataset(data, dict, Loss::Ridge)?;
    Ok(Objective::new(data, w).value(&v, &w.w))
}

/// `Σ_i Σ_{l≠y_i} max(0, g_l − g_{y_i} + Δ) + γ‖W‖²_F` with `g = W v_i`.
pub fn ssvm_loss(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<f64> {
    require_loss(w, Loss::Ssvm)?;
    let v = encode_dataset(data, dict, Loss::Ssvm)?;
    Ok(Objective::new(data, w).value(&v, &w.w))
}

fn require_loss(w: &ClassifierWeights, loss: Loss) -> Result<()> {
    if w.loss != loss {
        return Err(Error::InvalidParams(format!(
            "weights were built for {:?}, not {loss:?}",
            w.loss
        )));
    }
    Ok(())
}

/// Minimizer of the ridge loss over `W`: `H Vᵀ (V Vᵀ + 2γ I)⁻¹`.
pub fn ridge_closed_form(h: &DMatrix<f64>, v: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let m = v.nrows();
    let gram = v * v.transpose() + DMatrix::identity(m, m) * (2.0 * gamma);
    let rhs = h * v.transpose();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("V Vᵀ + 2γI is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if !(lo > hi * 1e-7) {
        return Err(Error::SingularSystem(format!(
            "V Vᵀ + 2γI is numerically singular (Cholesky pivot ratio {:e})",
            lo / hi
        )));
    }
    // W G = R  ⇔  G Wᵀ = Rᵀ.
    Ok(chol.solve(&rhs.transpose()).transpose())
}

pub fn solve_w_ridge(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    gamma: f64,
) -> Result<ClassifierWeights> {
    let v = encode_dataset(data, dict, Loss::Ridge)?;
    Ok(ClassifierWeights {
        w: ridge_closed_form(&data.one_hot(), &v, gamma)?,
        loss: Loss::Ridge,
        gamma,
        margin: 1.0,
    })
}

/// Gradient of the loss with respect to `W`.
pub fn loss_grad_w(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<DMatrix<f64>> {
    let v = encode_dataset(data, dict, w.loss)?;
    Ok(Objective::new(data, w).grad_w(&v, &w.w))
}

pub fn ssvm_grad_w(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<DMatrix<f64>> {
    require_loss(w, Loss::Ssvm)?;
    loss_grad_w(data, dict, w)
}

fn atom_grad_from_sensitivity(
    data: &LabeledSpdDataset,
    atom: &SpdMatrix,
    p: &AbldParams,
    s_row: &[f64],
) -> Result<SymMatrix> {
    let d = atom.dim();
    let mut acc = DMatrix::zeros(d, d);
    for (i, &s) in s_row.iter().enumerate() {
        if s != 0.0 {
            acc += grad_y_whitened(data.data().whitener(i), atom, p, s)?;
        }
    }
    Ok(SymMatrix::from_sym(acc))
}

fn param_grads_from_sensitivity(
    logs: &LogCache,
    params: &[AbldParams],
    s: &DMatrix<f64>,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(params.len());
    for (k, (rows, p)) in logs.iter().zip(params).enumerate() {
        if p.is_origin() {
            out.push((0.0, 0.0));
            continue;
        }
        let (mut ga, mut gb) = (0.0, 0.0);
        for (i, l) in rows.iter().enumerate() {
            let w = s[(k, i)];
            if w == 0.0 {
                continue;
            }
            ga += w * grad_alpha_from_logs(l, p.alpha(), p.beta()).map_err(|e| e.in_atom(k))?;
            let neg: Vec<f64> = l.iter().map(|x| -x).collect();
            gb += w * grad_alpha_from_logs(&neg, p.beta(), p.alpha()).map_err(|e| e.in_atom(k))?;
        }
        out.push((ga, gb));
    }
    Ok(out)
}

/// Gradient of the loss with respect to the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    /// `(∂/∂α_k, ∂/∂β_k)` per atom; zero under the frozen modes.
    pub per_atom: Vec<(f64, f64)>,
    /// Reduced to the free variables of the tying mode (see [`Dictionary::packed_params`]).
    pub packed: Vec<f64>,
}

/// `∇_{B_k}` of the loss through `Σ_i (∂f/∂v_i^k) ∇_{B_k} D(X_i‖B_k)`.
pub fn loss_grad_atom(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
    k: usize,
) -> Result<SymMatrix> {
    if k >= dict.len() {
        return Err(Error::InvalidParams(format!("atom index {k} out of range")));
    }
    let v = encode_dataset(data, dict, w.loss)?;
    let s = Objective::new(data, w).sensitivity(&v, &w.w);
    let row: Vec<f64> = s.row(k).iter().copied().collect();
    atom_grad_from_sensitivity(data, &dict.atoms[k], &dict.params[k], &row)
        .map_err(|e| e.in_atom(k))
}

pub fn loss_grad_params(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<ParamGradient> {
    let logs = atom_logs(data, dict)?;
    let v = encodings_from_logs(&logs, &dict.params, w.loss)?;
    let s = Objective::new(data, w).sensitivity(&v, &w.w);
    let per_atom = if dict.tying.is_frozen() {
        vec![(0.0, 0.0); dict.len()]
    } else {
        param_grads_from_sensitivity(&logs, &dict.params, &s)?
    };
    let packed = pack_grad(&per_atom, dict.tying);
    Ok(ParamGradient { per_atom, packed })
}

pub fn ridge_grad_atom(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
    k: usize,
) -> Result<SymMatrix> {
    require_loss(w, Loss::Ridge)?;
    loss_grad_atom(data, dict, w, k)
}

pub fn ridge_grad_params(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<ParamGradient> {
    require_loss(w, Loss::Ridge)?;
    loss_grad_params(data, dict, w)
}

pub fn ssvm_grad_atom(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
    k: usize,
) -> Result<SymMatrix> {
    require_loss(w, Loss::Ssvm)?;
    loss_grad_atom(data, dict, w, k)
}

pub fn ssvm_grad_params(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    w: &ClassifierWeights,
) -> Result<ParamGradient> {
    require_loss(w, Loss::Ssvm)?;
    loss_grad_params(data, dict, w)
}

/// Log-Euclidean k-means centroids, mapped back by the matrix exponential.
pub fn init_dictionary(data: &LabeledSpdDataset, n: usize, seed: u64) -> Result<Vec<SpdMatrix>> {
    if n == 0 || n > data.len() {
        return Err(Error::InvalidParams(format!(
            "cannot pick {n} atoms from {} samples",
            data.len()
        )));
    }
    le_centroids(data.data().samples(), n, seed).map(|(c, _)| c)
}

/// Shared by the dictionary initializer and the log-Euclidean clusterer.
pub(crate) fn le_centroids(
    samples: &[SpdMatrix],
    k: usize,
    seed: u64,
) -> Result<(Vec<SpdMatrix>, Vec<usize>)> {
    let d = samples[0].dim();
    let points = samples
        .iter()
        .map(|s| Ok(DVector::from_column_slice(s.log()?.matrix().as_slice())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = kmeans(&points, k, 300, &mut rng);
    let centroids = res
        .centroids
        .iter()
        .map(|c| {
            sym_exp(&SymMatrix::from_sym(DMatrix::from_column_slice(
                d,
                d,
                c.as_slice(),
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((centroids, res.assignments))
}

/// Grid searched by the parameter initializer.
pub const PARAM_GRID: [f64; 6] = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0];

/// Deterministic per-class split: a seeded shuffle of each class, the first
/// `fraction` (at least one sample when the class has two or more) held out.
pub fn validation_split(
    data: &LabeledSpdDataset,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == c).collect();
        idx.shuffle(&mut rng);
        let mut held = ((idx.len() as f64) * fraction).round() as usize;
        if idx.len() >= 2 {
            held = held.clamp(1, idx.len() - 1);
        } else {
            held = 0;
        }
        val.extend_from_slice(&idx[..held]);
        train.extend_from_slice(&idx[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn argmax_labels(scores: &DMatrix<f64>) -> Vec<usize> {
    (0..scores.ncols())
        .map(|i| {
            let mut best = 0;
            for l in 1..scores.nrows() {
                if scores[(l, i)] > scores[(best, i)] {
                    best = l;
                }
            }
            best
        })
        .collect()
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Stratified `k`-fold assignment: each class is shuffled and dealt round-robin.
fn stratified_folds(data: &LabeledSpdDataset, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; data.len()];
    for c in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == c).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    fold
}

/// Cross-validated accuracy of the ridge classifier for one `γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScore {
    pub gamma: f64,
    pub accuracy: f64,
}

/// Chooses `γ` from `candidates` by `folds`-fold cross-validation of the
/// closed-form ridge classifier on the encodings of `dict`. Ties go to the
/// larger `γ`. Returns the choice and every score.
pub fn select_gamma(
    data: &LabeledSpdDataset,
    dict: &Dictionary,
    candidates: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(f64, Vec<GammaScore>)> {
    if candidates.is_empty() || candidates.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidParams(
            "γ candidates must be non-empty and non-negative".into(),
        ));
    }
    if folds < 2 {
        return Err(Error::InvalidParams(
            "cross-validation needs at least two folds".into(),
        ));
    }
    let v = encode_dataset(data, dict, Loss::Ridge)?;
    let fold = stratified_folds(data, folds, seed);
    let mut scores = Vec::with_capacity(candidates.len());
    for &gamma in candidates {
        let mut hits = 0usize;
        let mut total = 0usize;
        for f in 0..folds {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let h = data.subset(&train).one_hot();
            let Ok(w) = ridge_closed_form(&h, &v.select_columns(&train), gamma) else {
                total += test.len();
                continue;
            };
            let pred = argmax_labels(&(w * v.select_columns(&test)));
            hits += pred
                .iter()
                .zip(&test)
                .filter(|(p, &i)| **p == data.labels()[i])
                .count();
            total += test.len();
        }
        let accuracy = if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        };
        debug!("γ = {gamma}: cross-validated accuracy {accuracy:.4}");
        scores.push(GammaScore { gamma, accuracy });
    }
    let best = scores
        .iter()
        .copied()
        .reduce(|a, b| match b.accuracy.total_cmp(&a.accuracy) {
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal if b.gamma > a.gamma => b,
            _ => a,
        })
        .expect("candidates are non-empty");
    Ok((best.gamma, scores))
}

/// One grid point evaluated by [`grid_scores`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub accuracy: f64,
}

/// Validation accuracy of the frozen-dictionary ridge pipeline at every
/// `(α, β)` in `alphas × betas`. Points whose ridge system is singular score 0.
pub fn grid_scores(
    data: &LabeledSpdDataset,
    atoms: &[SpdMatrix],
    alphas: &[f64],
    betas: &[f64],
    gamma: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Vec<GridPoint>> {
    let probe = Dictionary::uniform(atoms.to_vec(), Tying::B, AbldParams::unit())?;
    let logs = atom_logs(data, &probe)?;
    let (train, val) = validation_split(data, validation_fraction, seed);
    let (train, val) = if val.is_empty() {
        (train.clone(), train)
    } else {
        (train, val)
    };
    let h_train = data.subset(&train).one_hot();
    let truth: Vec<usize> = val.iter().map(|&i| data.labels()[i]).collect();
    let mut out = Vec::new();
    for &a in alphas {
        for &b in betas {
            let p = AbldParams::new(a, b)?;
            let v = encodings_from_logs(&logs, &vec![p; atoms.len()], Loss::Ridge)?;
            let v_train = v.select_columns(&train);
            let acc = match ridge_closed_form(&h_train, &v_train, gamma) {
                Ok(w) => accuracy(&argmax_labels(&(w * v.select_columns(&val))), &truth),
                Err(e) => {
                    debug!("grid point ({a}, {b}) skipped: {e}");
                    0.0
                }
            };
            out.push(GridPoint {
                alpha: a,
                beta: b,
                accuracy: acc,
            });
        }
    }
    Ok(out)
}

/// Initial parameters for `tying`: burg mode gives `(1, 1)`; grid mode picks
/// the best validation accuracy over [`PARAM_GRID`] (diagonal only for V),
/// earliest grid point on ties. Frozen modes return their fixed value.
pub fn init_params(
    data: &LabeledSpdDataset,
    atoms: &[SpdMatrix],
    tying: Tying,
    mode: ParamInit,
    gamma: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<AbldParams> {
    match (tying, mode) {
        (Tying::A, _) => return Ok(AbldParams::origin()),
        (Tying::B, _) | (_, ParamInit::Burg) => return Ok(AbldParams::unit()),
        _ => {}
    }
    let points = if tying == Tying::V {
        PARAM_GRID
            .iter()
            .map(|&t| grid_scores(data, atoms, &[t], &[t], gamma, validation_fraction, seed))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    } else {
        grid_scores(
            data,
            atoms,
            &PARAM_GRID,
            &PARAM_GRID,
            gamma,
            validation_fraction,
            seed,
        )?
    };
    let mut best = points[0];
    for p in &points[1..] {
        if p.accuracy > best.accuracy {
            best = *p;
        }
    }
    debug!(
        "grid init picked ({}, {}) at accuracy {}",
        best.alpha, best.beta, best.accuracy
    );
    AbldParams::new(best.alpha, best.beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IddlOptions {
    /// Defaults to five atoms per class.
    pub n_atoms: Option<usize>,
    pub loss: Loss,
    pub tying: Tying,
    pub ablation: Ablation,
    /// Used as is when `gamma_grid` is empty, otherwise only for the
    /// parameter grid initialization.
    pub gamma: f64,
    /// Candidates for `γ`, chosen by cross-validation on the initial dictionary.
    pub gamma_grid: Vec<f64>,
    pub cv_folds: usize,
    pub margin: f64,
    pub init: ParamInit,
    pub validation_fraction: f64,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub eps_min: f64,
    /// Upper bound on `|α|` and `|β|` during parameter updates.
    pub param_max: f64,
    pub atom_rcg: RcgOptions,
    pub param_spg_iters: usize,
    /// Gradient descent on `W` for the SVM loss.
    pub ssvm_inner: InnerOptions,
    pub seed: u64,
}

impl Default for IddlOptions {
    fn default() -> Self {
        IddlOptions {
            n_atoms: None,
            loss: Loss::Ridge,
            tying: Tying::V,
            ablation: Ablation::Joint,
            gamma: 1e-3,
            gamma_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            cv_folds: 5,
            margin: 1.0,
            init: ParamInit::Grid,
            validation_fraction: 0.2,
            max_outer: 50,
            rel_tol: 1e-6,
            eps_min: DEFAULT_EPS_MIN,
            param_max: 10.0,
            atom_rcg: RcgOptions::default().with_max_iters(5),
            param_spg_iters: 100,
            ssvm_inner: InnerOptions {
                max_iters: 500,
                tol: 1e-6,
            },
            seed: 0,
        }
    }
}

impl IddlOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.margin > 0.0) {
            return Err(Error::InvalidParams("need γ ≥ 0 and Δ > 0".into()));
        }
        if !(self.param_max > self.eps_min) {
            return Err(Error::InvalidParams("need param_max > eps_min".into()));
        }
        if !(self.rel_tol > 0.0) || self.max_outer == 0 {
            return Err(Error::InvalidParams(
                "need rel_tol > 0 and max_outer ≥ 1".into(),
            ));
        }
        if self.gamma_grid.iter().any(|g| !(*g >= 0.0))
            || (!self.gamma_grid.is_empty() && self.cv_folds < 2)
        {
            return Err(Error::InvalidParams(
                "γ candidates must be ≥ 0 with at least two folds".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParams(
                "validation fraction must be in [0, 1)".into(),
            ));
        }
        self.atom_rcg.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Atoms,
    Params,
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockObjective {
    pub outer: usize,
    pub block: Block,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxOuterIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective after every block update, in order.
    pub blocks: Vec<BlockObjective>,
    /// Objective at the start and after each outer iteration.
    pub objective: Vec<f64>,
    /// Per-atom `(α, β)` at the start and after each outer iteration.
    pub params: Vec<Vec<[f64; 2]>>,
    pub train_accuracy: Vec<f64>,
    pub outer_iterations: usize,
    pub termination: Termination,
    /// Cross-validation scores behind the chosen `γ`; empty when `γ` was fixed.
    pub gamma_scores: Vec<GammaScore>,
}

impl TrainReport {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective
            .last()
            .expect("report holds the initial objective")
    }
}

/// A trained classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct IddlModel {
    pub dictionary: Dictionary,
    pub weights: ClassifierWeights,
}

impl IddlModel {
    /// Label with the largest score; ties go to the smaller label.
    pub fn predict(&self, x: &SpdMatrix) -> Result<usize> {
        let v = encode(x, &self.dictionary, self.weights.loss)?;
        Ok(
            argmax_labels(
                &(&self.weights.w * DMatrix::from_column_slice(v.len(), 1, v.as_slice())),
            )[0],
        )
    }

    pub fn predict_all(&self, samples: &[SpdMatrix]) -> Result<Vec<usize>> {
        samples.iter().map(|x| self.predict(x)).collect()
    }

    pub fn accuracy(&self, data: &LabeledSpdDataset) -> Result<f64> {
        let v = encode_dataset(data, &self.dictionary, self.weights.loss)?;
        Ok(accuracy(
            &argmax_labels(&(&self.weights.w * v)),
            data.labels(),
        ))
    }
}

pub fn predict(x: &SpdMatrix, model: &IddlModel) -> Result<usize> {
    model.predict(x)
}

/// 1-nearest-neighbor labels under the log-Euclidean distance `‖Log X − Log Y‖_F`.
/// Ties go to the earlier training sample.
pub fn le_nearest_neighbor(train: &LabeledSpdDataset, queries: &[SpdMatrix]) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::InvalidParams(
            "nearest neighbor needs training samples".into(),
        ));
    }
    let logs = train
        .data()
        .samples()
        .iter()
        .map(|s| Ok(s.log()?.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    queries
        .iter()
        .map(|q| {
            check_same_dim(q.dim(), train.dim())?;
            let lq = q.log()?.into_inner();
            let mut best = (f64::INFINITY, 0);
            for (i, l) in logs.iter().enumerate() {
                let dist = (l - &lq).norm_squared();
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            Ok(train.labels()[best.1])
        })
        .collect()
}

/// Mutable training state: the dictionary with its eigenvalue cache and the
/// encodings it implies.
struct State<'a> {
    data: &'a LabeledSpdDataset,
    atoms: Vec<SpdMatrix>,
    params: Vec<AbldParams>,
    logs: LogCache,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    objective: Objective<'a>,
}

impl<'a> State<'a> {
    fn value(&self) -> f64 {
        self.objective.value(&self.v, &self.w)
    }

    fn atom_row(&self, b: &SpdMatrix, k: usize) -> Result<Vec<f64>> {
        let wb = Whitener::new(b)?;
        self.data
            .data()
            .samples()
            .iter()
            .map(|x| {
                let l = log_eigs(wb.gen_eigvals(x)?.as_slice())?;
                divergence_from_logs(&l, &self.params[k])
            })
            .collect()
    }

    fn with_row(&self, k: usize, row: &[f64]) -> DMatrix<f64> {
        let mut v = self.v.clone();
        for (i, &x) in row.iter().enumerate() {
            v[(k, i)] = x;
        }
        v
    }

    fn update_atom(&mut self, k: usize, opts: &RcgOptions) -> Result<()> {
        let p = self.params[k];
        let run = {
            let this = &*self;
            let obj = |b: &SpdMatrix| {
                let row = this.atom_row(b, k)?;
                Ok(this.objective.value(&this.with_row(k, &row), &this.w))
            };
            let grad = |b: &SpdMatrix| {
                let row = this.atom_row(b, k)?;
                let s = this.objective.sensitivity(&this.with_row(k, &row), &this.w);
                let s_row: Vec<f64> = s.row(k).iter().copied().collect();
                atom_grad_from_sensitivity(this.data, b, &p, &s_row)
            };
            rcg_minimize(obj, grad, this.atoms[k].clone(), opts)?
        };
        self.logs[k] = logs_for_atom(self.data, &run.point)?;
        let row = row_from_logs(&self.logs[k], &p)?;
        for (i, x) in row.into_iter().enumerate() {
            self.v[(k, i)] = x;
        }
        self.atoms[k] = run.point;
        Ok(())
    }

    fn update_params(
        &mut self,
        tying: Tying,
        eps_min: f64,
        param_max: f64,
        max_iters: usize,
    ) -> Result<()> {
        if tying.is_frozen() {
            return Ok(());
        }
        let n = self.atoms.len();
        let loss = self.objective.loss;
        let init = pack(&self.params, tying);
        let opts = SpgOptions {
            max_iters,
            bounds: OrthantBox {
                eps_min,
                max_abs: param_max,
                ..OrthantBox::new(self.params[0].orthant())
            },
            ..SpgOptions::default()
        };
        let out = {
            let this = &*self;
            let obj = |x: &[f64]| {
                let params = unpack(x, tying, n, eps_min)?;
                let v = encodings_from_logs(&this.logs, &params, loss)?;
                Ok(this.objective.value(&v, &this.w))
            };
            let grad = |x: &[f64]| {
                let params = unpack(x, tying, n, eps_min)?;
                let v = encodings_from_logs(&this.logs, &params, loss)?;
                let s = this.objective.sensitivity(&v, &this.w);
                Ok(pack_grad(
                    &param_grads_from_sensitivity(&this.logs, &params, &s)?,
                    tying,
                ))
            };
            spg_minimize(obj, grad, &init, &opts)?
        };
        self.params = unpack(&out.x, tying, n, eps_min)?;
        self.v = encodings_from_logs(&self.logs, &self.params, loss)?;
        Ok(())
    }

    fn update_w(&mut self, inner: &InnerOptions) -> Result<()> {
        match self.objective.loss {
            Loss::Ridge => {
                self.w = ridge_closed_form(&self.objective.h, &self.v, self.objective.gamma)?;
            }
            Loss::Ssvm => {
                self.w = ssvm_descent(&self.objective, &self.v, self.w.clone(), inner);
            }
        }
        Ok(())
    }

    fn train_accuracy(&self) -> f64 {
        accuracy(&argmax_labels(&(&self.w * &self.v)), self.objective.labels)
    }
}

/// Monotone subgradient descent with Armijo backtracking on `W`.
fn ssvm_descent(
    obj: &Objective<'_>,
    v: &DMatrix<f64>,
    mut w: DMatrix<f64>,
    inner: &InnerOptions,
) -> DMatrix<f64> {
    let mut f = obj.value(v, &w);
    let mut step = 1.0 / v.norm_squared().max(1e-12) * v.ncols() as f64;
    for _ in 0..inner.max_iters {
        let g = obj.grad_w(v, &w);
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= inner.tol {
            break;
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &w - &g * s;
            let fc = obj.value(v, &cand);
            if fc <= f - 1e-4 * s * gn2 {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let decrease = f - fc;
        w = cand;
        f = fc;
        step = 2.0 * s;
        if decrease <= inner.tol * f.abs().max(1e-12) {
            break;
        }
    }
    w
}

/// Block-coordinate descent over atoms, divergence parameters and the
/// classifier.
pub fn train_iddl(
    data: &LabeledSpdDataset,
    opts: &IddlOptions,
) -> Result<(IddlModel, TrainReport)> {
    opts.validate()?;
    let n = opts
        .n_atoms
        .unwrap_or(5 * data.num_classes())
        .min(data.len());
    let atoms = init_dictionary(data, n, opts.seed)?;
    let p0 = init_params(
        data,
        &atoms,
        opts.tying,
        opts.init,
        opts.gamma,
        opts.validation_fraction,
        opts.seed,
    )?;
    let dict = Dictionary::uniform(atoms, opts.tying, p0)?;
    let mut opts = opts.clone();
    let mut gamma_scores = Vec::new();
    if !opts.gamma_grid.is_empty() {
        let (gamma, scores) =
            select_gamma(data, &dict, &opts.gamma_grid, opts.cv_folds, opts.seed)?;
        info!("cross-validation picked γ = {gamma}");
        opts.gamma = gamma;
        gamma_scores = scores;
    }
    info!(
        "IDDL: {} samples, {} classes, {n} atoms, tying {}, init ({}, {})",
        data.len(),
        data.num_classes(),
        opts.tying,
        dict.params[0].alpha(),
        dict.params[0].beta()
    );
    let (model, mut report) = train_from(data, dict, &opts)?;
    report.gamma_scores = gamma_scores;
    Ok((model, report))
}

/// Runs the trainer from a given dictionary (atoms and parameters).
pub fn train_from(
    data: &LabeledSpdDataset,
    dict: Dictionary,
    opts: &IddlOptions,
) -> Result<(IddlModel, TrainReport)> {
    opts.validate()?;
    let tying = dict.tying;
    let weights = ClassifierWeights::zeros(
        data.num_classes(),
        dict.len(),
        opts.loss,
        opts.gamma,
        opts.margin,
    );
    let logs = atom_logs(data, &dict)?;
    let v = encodings_from_logs(&logs, &dict.params, opts.loss)?;
    let mut st = State {
        data,
        atoms: dict.atoms,
        params: dict.params,
        logs,
        v,
        w: weights.w.clone(),
        objective: Objective::new(data, &weights),
    };
    let update_atoms = opts.ablation != Ablation::FixAtoms;
    let update_params = opts.ablation != Ablation::FixParams && !tying.is_frozen();
    if dict_orthant_is_origin(&st.params) && update_params {
        return Err(Error::InvalidParams(
            "origin parameters cannot be learned".into(),
        ));
    }

    st.update_w(&opts.ssvm_inner)
        .map_err(|e| e.in_block("classifier"))?;
    let mut report = TrainReport {
        blocks: Vec::new(),
        objective: vec![st.value()],
        params: vec![param_pairs(&st.params)],
        train_accuracy: vec![st.train_accuracy()],
        outer_iterations: 0,
        termination: Termination::MaxOuterIterations,
        gamma_scores: Vec::new(),
    };

    for outer in 1..=opts.max_outer {
        let before = st.value();
        if update_atoms {
            for k in 0..st.atoms.len() {
                st.update_atom(k, &opts.atom_rcg)
                    .map_err(|e| e.in_atom(k).in_block("atoms"))?;
            }
            report.blocks.push(BlockObjective {
                outer,
                block: Block::Atoms,
                objective: st.value(),
            });
        }
        if update_params {
            st.update_params(tying, opts.eps_min, opts.param_max, opts.param_spg_iters)
                .map_err(|e| e.in_block("parameters"))?;
            report.blocks.push(BlockObjective {
                outer,
                block: Block::Params,
                objective: st.value(),
            });
        }
        st.update_w(&opts.ssvm_inner)
            .map_err(|e| e.in_block("classifier"))?;
        let after = st.value();
        report.blocks.push(BlockObjective {
            outer,
            block: Block::Classifier,
            objective: after,
        });
        report.objective.push(after);
        report.params.push(param_pairs(&st.params));
        report.train_accuracy.push(st.train_accuracy());
        report.outer_iterations = outer;
        debug!(
            "IDDL outer {outer}: objective {after:.6e}, train accuracy {:.3}",
            report.train_accuracy[outer]
        );
        if after > before + 1e-9 * before.abs().max(1.0) {
            warn!("IDDL outer {outer}: objective rose from {before} to {after}");
        }
        if (before - after).abs() <= opts.rel_tol * before.abs().max(f64::MIN_POSITIVE) {
            report.termination = Termination::Converged;
            break;
        }
    }

    let dictionary = Dictionary::new(st.atoms, st.params, tying)?;
    let model = IddlModel {
        dictionary,
        weights: ClassifierWeights {
            w: st.w,
            loss: opts.loss,
            gamma: opts.gamma,
            margin: opts.margin,
        },
    };
    Ok((model, report))
}

fn dict_orthant_is_origin(params: &[AbldParams]) -> bool {
    params.iter().any(|p| p.is_origin())
}

fn param_pairs(params: &[AbldParams]) -> Vec<[f64; 2]> {
    params.iter().map(|p| [p.alpha(), p.beta()]).collect()
}

pub mod container {
    //! Model file layout (all integers and floats little-endian):
    //!
    //! | bytes | content |
    //! |---|---|
    //! | 8 | magic `ABLDIDDL` |
    //! | 4 | format version `u32` (currently 1) |
    //! | 8 | header length `u64` |
    //! | header length | UTF-8 JSON [`Header`] |
    //! | rest | `f64` payload: atoms (row-major, `n·d·d`), then `(α_k, β_k)` pairs (`2n`), then `W` row-major (`L·m`), then `γ`, `Δ` |
    //!
    //! Every number needed to rebuild the model lives in the payload, so a
    //! round trip is bit-exact.

    use std::io::{Read, Write};

    use nalgebra::DMatrix;
    use serde::{Deserialize, Serialize};

    use super::{ClassifierWeights, Dictionary, IddlModel, Loss, Tying};
    use crate::divergence::{AbldParams, Orthant};
    use crate::error::{Error, Result};
    use crate::linalg::SpdMatrix;

    pub const MAGIC: &[u8; 8] = b"ABLDIDDL";
    pub const VERSION: u32 = 1;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Header {
        pub dim: usize,
        pub n_atoms: usize,
        pub num_classes: usize,
        pub encoding_len: usize,
        pub loss: Loss,
        pub tying: Tying,
        pub orthants: Vec<Orthant>,
        /// Free-form training metadata.
        pub metadata: serde_json::Value,
    }

    pub fn write_model<W: Write>(
        mut out: W,
        model: &IddlModel,
        metadata: serde_json::Value,
    ) -> Result<()> {
        let dict = &model.dictionary;
        let header = Header {
            dim: dict.dim(),
            n_atoms: dict.len(),
            num_classes: model.weights.num_classes(),
            encoding_len: model.weights.w.ncols(),
            loss: model.weights.loss,
            tying: dict.tying(),
            orthants: dict.params().iter().map(|p| p.orthant()).collect(),
            metadata,
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut put = |x: f64| out.write_all(&x.to_le_bytes());
        for a in dict.atoms() {
            let m = a.matrix();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    put(m[(i, j)])?;
                }
            }
        }
        for p in dict.params() {
            put(p.alpha())?;
            put(p.beta())?;
        }
        let w = &model.weights.w;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                put(w[(i, j)])?;
            }
        }
        put(model.weights.gamma)?;
        put(model.weights.margin)?;
        Ok(())
    }

    pub fn read_model<R: Read>(mut input: R) -> Result<(IddlModel, Header)> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an IDDL model file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        if len > 1 << 30 {
            return Err(Error::Format("model header is implausibly large".into()));
        }
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let (d, n, l, m) = (
            header.dim,
            header.n_atoms,
            header.num_classes,
            header.encoding_len,
        );
        if m != header.loss.encoding_len(n) || header.orthants.len() != n || d == 0 || n == 0 {
            return Err(Error::Format("model header is inconsistent".into()));
        }
        let count = n * d * d + 2 * n + l * m + 2;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != count * 8 {
            return Err(Error::Format(format!(
                "model payload has {} bytes, expected {}",
                payload.len(),
                count * 8
            )));
        }
        let mut vals = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut next = || vals.next().expect("length checked");
        let mut atoms = Vec::with_capacity(n);
        for _ in 0..n {
            let m = DMatrix::from_fn(d, d, |_, _| 0.0);
            let mut m = m;
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = next();
                }
            }
            atoms.push(SpdMatrix::new(m)?);
        }
        let mut params = Vec::with_capacity(n);
        for o in &header.orthants {
            let (a, b) = (next(), next());
            params.push(match o {
                Orthant::Origin => AbldParams::origin(),
                _ => AbldParams::with_eps_min(a, b, a.abs().min(b.abs()))?,
            });
        }
        let mut w = DMatrix::zeros(l, m);
        for i in 0..l {
            for j in 0..m {
                w[(i, j)] = next();
            }
        }
        let gamma = next();
        let margin = next();
        let model = IddlModel {
            dictionary: Dictionary::new(atoms, params, header.tying)?,
            weights: ClassifierWeights {
                w,
                loss: header.loss,
                gamma,
                margin,
            },
        };
        Ok((model, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{special_divergence, SpecialKind};
    use crate::harness::fd::{matrix_gradient_fd, rel_err, sym_gradient_fd, vector_gradient_fd};
    use crate::harness::synth::{random_spd, wishart_synth, WishartSpec};

    fn toy(seed: u64, loss: Loss) -> (LabeledSpdDataset, Dictionary, ClassifierWeights) {
        let data = wishart_synth(&WishartSpec::new(3, 3, 4, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let atoms: Vec<SpdMatrix> = (0..3).map(|_| random_spd(&mut rng, 3)).collect();
        let params = vec![
            AbldParams::new(0.7, 1.3).unwrap(),
            AbldParams::new(1.1, 0.4).unwrap(),
            AbldParams::new(0.5, 0.9).unwrap(),
        ];
        let dict = Dictionary::new(atoms, params, Tying::N).unwrap();
        let mut w = ClassifierWeights::zeros(3, 3, loss, 0.05, 1.0);
        w.w = DMatrix::from_fn(3, loss.encoding_len(3), |i, j| {
            ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6
        });
        (data, dict, w)
    }

    #[test]
    fn encoding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let atoms: Vec<SpdMatrix> = (0..3).map(|_| random_spd(&mut rng, 4)).collect();
        let dict = Dictionary::uniform(atoms.clone(), Tying::N, AbldParams::new(0.6, 0.8).unwrap())
            .unwrap();
        let v = encode(&atoms[1], &dict, Loss::Ridge).unwrap();
        assert!(v[1].abs() <= 1e-10);

        let x = random_spd(&mut rng, 4);
        let burg =
            Dictionary::uniform(vec![atoms[0].clone()], Tying::B, AbldParams::unit()).unwrap();
        let v = encode(&x, &burg, Loss::Ridge).unwrap();
        let oracle = special_divergence(&x, &atoms[0], SpecialKind::Burg).unwrap();
        // α = β = 1 is not the Burg divergence; Burg is the boundary limit.
        assert!(
            (v[0] - crate::divergence::abld(&x, &atoms[0], &AbldParams::unit()).unwrap()).abs()
                < 1e-12
        );
        assert!(v[0] > 0.0 && oracle > 0.0);

        let ident = Dictionary::uniform(
            vec![SpdMatrix::identity(4); 3],
            Tying::V,
            AbldParams::tied(0.5).unwrap(),
        )
        .unwrap();
        let v = encode(&SpdMatrix::identity(4), &ident, Loss::Ssvm).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ridge_loss_examples() {
        let (data, dict, mut w) = toy(2, Loss::Ridge);
        w.w.fill(0.0);
        w.gamma = 0.0;
        assert!((ridge_loss(&data, &dict, &w).unwrap() - data.len() as f64 / 2.0).abs() < 1e-12);

        let (data, dict, w) = toy(3, Loss::Ridge);
        let v = encode_dataset(&data, &dict, Loss::Ridge).unwrap();
        let mut naive = 0.0;
        for i in 0..data.len() {
            for l in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += w.w[(l, k)] * v[(k, i)];
                }
                let h = if data.labels()[i] == l { 1.0 } else { 0.0 };
                naive += 0.5 * (h - s) * (h - s);
            }
        }
        for x in w.w.iter() {
            naive += w.gamma * x * x;
        }
        assert!((ridge_loss(&data, &dict, &w).unwrap() - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn ridge_solution_is_stationary() {
        let (data, dict, _) = toy(4, Loss::Ridge);
        for gamma in [0.0, 0.1, 3.0] {
            let w = solve_w_ridge(&data, &dict, gamma).unwrap();
            let g = loss_grad_w(&data, &dict, &w).unwrap();
            assert!(
                g.norm() <= 1e-8 * w.w.norm().max(1.0),
                "γ = {gamma}: {}",
                g.norm()
            );
        }
        let w = solve_w_ridge(&data, &dict, 1e6).unwrap();
        let v = encode_dataset(&data, &dict, Loss::Ridge).unwrap();
        assert!(w.w.norm() <= (data.one_hot() * v.transpose()).norm() / 1e6);
    }

    #[test]
    fn ridge_square_invertible_case() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let w = ridge_closed_form(&h, &v, 0.0).unwrap();
        let expect = v.clone().try_inverse().unwrap();
        assert!((w - expect).norm() < 1e-12);
        let rank_deficient = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            ridge_closed_form(&h, &rank_deficient, 0.0),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn ssvm_loss_examples() {
        let (data, dict, mut w) = toy(5, Loss::Ssvm);
        w.w.fill(0.0);
        w.gamma = 0.0;
        let expect = (data.len() * 2) as f64 * w.margin;
        assert!((ssvm_loss(&data, &dict, &w).unwrap() - expect).abs() < 1e-12);

        // Bias alone separates perfectly when it favours every true class.
        let single = data.subset(&[0]);
        let y = single.labels()[0];
        let mut w2 = ClassifierWeights::zeros(3, 3, Loss::Ssvm, 0.0, 1.0);
        w2.w[(y, 3)] = 5.0;
        assert_eq!(ssvm_loss(&single, &dict, &w2).unwrap(), 0.0);
        assert_eq!(loss_grad_w(&single, &dict, &w2).unwrap().norm(), 0.0);
    }

    #[test]
    fn ssvm_two_class_hand_gradient() {
        let data = LabeledSpdDataset::new(
            vec![
                SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap(),
                SpdMatrix::identity(2),
            ],
            vec![0, 1],
        )
        .unwrap()
        .subset(&[0]);
        let dict = Dictionary::uniform(vec![SpdMatrix::identity(2)], Tying::B, AbldParams::unit())
            .unwrap();
        let w = ClassifierWeights::zeros(2, 1, Loss::Ssvm, 0.0, 1.0);
        let v = encode(data.data().sample(0), &dict, Loss::Ssvm).unwrap();
        let g = ssvm_grad_w(&data, &dict, &w).unwrap();
        for j in 0..2 {
            assert_eq!(g[(0, j)], -v[j]);
            assert_eq!(g[(1, j)], v[j]);
        }
    }

    #[test]
    fn ssvm_naive_loss() {
        let (data, dict, w) = toy(6, Loss::Ssvm);
        let v = encode_dataset(&data, &dict, Loss::Ssvm).unwrap();
        let mut naive = 0.0;
        for i in 0..data.len() {
            let y = data.labels()[i];
            let score = |l: usize| (0..4).map(|k| w.w[(l, k)] * v[(k, i)]).sum::<f64>();
            for l in 0..3 {
                if l != y {
                    naive += (score(l) - score(y) + w.margin).max(0.0);
                }
            }
        }
        naive += w.gamma * w.w.norm_squared();
        assert!((ssvm_loss(&data, &dict, &w).unwrap() - naive).abs() <= 1e-12 * naive.max(1.0));
    }

    fn loss_of(data: &LabeledSpdDataset, dict: &Dictionary, w: &ClassifierWeights) -> f64 {
        let v = encode_dataset(data, dict, w.loss).unwrap();
        Objective::new(data, w).value(&v, &w.w)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for loss in [Loss::Ridge, Loss::Ssvm] {
            let (data, dict, w) = toy(7, loss);
            let gw = loss_grad_w(&data, &dict, &w).unwrap();
            let fd = matrix_gradient_fd(
                |m| {
                    let mut w2 = w.clone();
                    w2.w = m.clone();
                    loss_of(&data, &dict, &w2)
                },
                &w.w,
                1e-6,
            );
            assert!(rel_err(&gw, &fd) < 1e-5, "{loss:?} W");

            for k in 0..dict.len() {
                let ga = loss_grad_atom(&data, &dict, &w, k).unwrap();
                let fd = sym_gradient_fd(
                    |m| {
                        let mut d2 = dict.clone();
                        d2.atoms[k] = SpdMatrix::new(m.clone()).unwrap();
                        loss_of(&data, &d2, &w)
                    },
                    dict.atoms[k].matrix(),
                    1e-6,
                );
                assert!(rel_err(ga.matrix(), &fd) < 1e-5, "{loss:?} atom {k}");
            }

            let gp = loss_grad_params(&data, &dict, &w).unwrap();
            let fd = vector_gradient_fd(
                |x| {
                    let mut d2 = dict.clone();
                    d2.params = unpack(x, Tying::N, 3, DEFAULT_EPS_MIN).unwrap();
                    loss_of(&data, &d2, &w)
                },
                &dict.packed_params(),
                1e-6,
            );
            assert!(rel_err(gp.packed.clone(), fd) < 1e-5, "{loss:?} params");
        }
    }

    #[test]
    fn tied_parameter_gradients_reduce_per_atom_terms() {
        let (data, dict, w) = toy(8, Loss::Ridge);
        let atoms = dict.atoms.clone();
        let s = Dictionary::uniform(atoms.clone(), Tying::S, AbldParams::new(0.8, 1.2).unwrap())
            .unwrap();
        let g = loss_grad_params(&data, &s, &w).unwrap();
        let fd = vector_gradient_fd(
            |x| {
                let d2 = Dictionary::uniform(
                    atoms.clone(),
                    Tying::S,
                    AbldParams::new(x[0], x[1]).unwrap(),
                )
                .unwrap();
                loss_of(&data, &d2, &w)
            },
            &[0.8, 1.2],
            1e-6,
        );
        assert!(rel_err(g.packed.clone(), fd) < 1e-5);

        let a = Dictionary::uniform(atoms, Tying::A, AbldParams::unit()).unwrap();
        let g = loss_grad_params(&data, &a, &w).unwrap();
        assert!(g.packed.is_empty());
        assert!(g.per_atom.iter().all(|&(x, y)| x == 0.0 && y == 0.0));
    }

    #[test]
    fn perfect_fit_has_zero_gradients() {
        let (data, dict, _) = toy(9, Loss::Ridge);
        let data = data.subset(&[0, 4, 8]);
        let v = encode_dataset(&data, &dict, Loss::Ridge).unwrap();
        let w = ClassifierWeights {
            w: ridge_closed_form(&data.one_hot(), &v, 0.0).unwrap(),
            loss: Loss::Ridge,
            gamma: 0.0,
            margin: 1.0,
        };
        assert!(ridge_loss(&data, &dict, &w).unwrap() < 1e-18);
        for k in 0..3 {
            assert!(ridge_grad_atom(&data, &dict, &w, k).unwrap().norm() < 1e-8);
        }
        let gp = ridge_grad_params(&data, &dict, &w).unwrap();
        assert!(gp.packed.iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn dictionary_initializer_cases() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 5, 11)).unwrap();
        let atoms = init_dictionary(&data, data.len(), 0).unwrap();
        for x in data.data().samples() {
            assert!(atoms
                .iter()
                .any(|a| (a.matrix() - x.matrix()).norm() <= 1e-9 * x.matrix().norm()));
        }

        let x = SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let same = LabeledSpdDataset::new(vec![x.clone(); 4], vec![0, 0, 1, 1]).unwrap();
        for a in init_dictionary(&same, 3, 5).unwrap() {
            assert!((a.matrix() - x.matrix()).norm() <= 1e-12);
        }

        let e = std::f64::consts::E;
        let samples = vec![
            SpdMatrix::from_diagonal(&[1.0, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[e * e, 1.0]).unwrap(),
            SpdMatrix::from_diagonal(&[1e6, 1e6]).unwrap(),
            SpdMatrix::from_diagonal(&[1e6 * e * e, 1e6]).unwrap(),
        ];
        let two = LabeledSpdDataset::new(samples, vec![0, 0, 1, 1]).unwrap();
        let atoms = init_dictionary(&two, 2, 3).unwrap();
        let targets = [[e, 1.0], [1e6 * e, 1e6]];
        for t in targets {
            let tm = SpdMatrix::from_diagonal(&t).unwrap();
            assert!(atoms.iter().any(|a| {
                special_divergence(a, &tm, SpecialKind::LogEuclideanSq)
                    .unwrap()
                    .sqrt()
                    <= 1e-6
            }));
        }
    }

    #[test]
    fn param_initializer_cases() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 10, 12)).unwrap();
        let atoms = init_dictionary(&data, 4, 0).unwrap();
        let p = init_params(&data, &atoms, Tying::N, ParamInit::Burg, 1e-3, 0.2, 0).unwrap();
        assert_eq!(p, AbldParams::unit());
        let a = init_params(&data, &atoms, Tying::V, ParamInit::Grid, 1e-3, 0.2, 0).unwrap();
        let b = init_params(&data, &atoms, Tying::V, ParamInit::Grid, 1e-3, 0.2, 0).unwrap();
        assert_eq!(a, b);
        assert!(PARAM_GRID.contains(&a.alpha()) && a.alpha() == a.beta());
        let scores = grid_scores(
            &data,
            &atoms,
            &[a.alpha(), 2.0],
            &[a.alpha(), 2.0],
            1e-3,
            0.2,
            0,
        )
        .unwrap();
        assert!(scores[0].accuracy >= scores[3].accuracy);
    }

    #[test]
    fn gamma_selection_is_deterministic_and_stratified() {
        let data = wishart_synth(&WishartSpec::new(3, 3, 10, 6)).unwrap();
        let fold = stratified_folds(&data, 5, 1);
        for c in 0..3 {
            for f in 0..5 {
                assert_eq!(
                    (0..30)
                        .filter(|&i| data.labels()[i] == c && fold[i] == f)
                        .count(),
                    2
                );
            }
        }
        let atoms = init_dictionary(&data, 6, 0).unwrap();
        let dict = Dictionary::uniform(atoms, Tying::V, AbldParams::unit()).unwrap();
        let grid = [1e-3, 1e-1, 10.0];
        let (g, scores) = select_gamma(&data, &dict, &grid, 5, 2).unwrap();
        assert_eq!(select_gamma(&data, &dict, &grid, 5, 2).unwrap().0, g);
        let best = scores.iter().map(|s| s.accuracy).fold(0.0, f64::max);
        let chosen = scores.iter().find(|s| s.gamma == g).unwrap();
        assert_eq!(chosen.accuracy, best);
        assert!(scores.iter().all(|s| s.accuracy < best || s.gamma <= g));
        assert!(select_gamma(&data, &dict, &[], 5, 2).is_err());
        assert!(select_gamma(&data, &dict, &grid, 1, 2).is_err());
    }

    #[test]
    fn validation_split_is_stratified() {
        let data = wishart_synth(&WishartSpec::new(3, 2, 10, 1)).unwrap();
        let (train, val) = validation_split(&data, 0.2, 4);
        assert_eq!(train.len() + val.len(), 30);
        for c in 0..3 {
            assert_eq!(val.iter().filter(|&&i| data.labels()[i] == c).count(), 2);
        }
    }

    #[test]
    fn single_class_single_atom_run_terminates() {
        let data = wishart_synth(&WishartSpec::new(1, 3, 6, 2)).unwrap();
        let opts = IddlOptions {
            n_atoms: Some(1),
            max_outer: 5,
            gamma: 1e-2,
            ..IddlOptions::default()
        };
        let (model, report) = train_iddl(&data, &opts).unwrap();
        assert!(report.outer_iterations >= 1);
        assert!(model
            .predict_all(data.data().samples())
            .unwrap()
            .iter()
            .all(|&l| l == 0));
        assert!(report
            .objective
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
    }

    #[test]
    fn frozen_modes_keep_their_parameters() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 8, 3)).unwrap();
        for tying in [Tying::A, Tying::B] {
            let opts = IddlOptions {
                n_atoms: Some(3),
                tying,
                max_outer: 3,
                ..IddlOptions::default()
            };
            let (model, report) = train_iddl(&data, &opts).unwrap();
            let expect = if tying == Tying::A {
                [0.0, 0.0]
            } else {
                [1.0, 1.0]
            };
            assert!(report.params.iter().flatten().all(|p| *p == expect));
            if tying == Tying::A {
                let x = data.data().sample(0);
                for (a, p) in model
                    .dictionary
                    .atoms()
                    .iter()
                    .zip(model.dictionary.params())
                {
                    let direct = special_divergence(x, a, SpecialKind::AirmSq).unwrap();
                    let via = crate::divergence::abld(x, a, p).unwrap();
                    assert!((via - direct).abs() <= 1e-10 * direct.max(1.0));
                }
            }
        }
    }

    #[test]
    fn ssvm_training_is_monotone() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 8, 4)).unwrap();
        let opts = IddlOptions {
            n_atoms: Some(4),
            loss: Loss::Ssvm,
            tying: Tying::N,
            max_outer: 4,
            ..IddlOptions::default()
        };
        let (model, report) = train_iddl(&data, &opts).unwrap();
        let objs: Vec<f64> = report.blocks.iter().map(|b| b.objective).collect();
        assert!(objs
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
        for p in model.dictionary.params() {
            assert!(p.alpha() >= DEFAULT_EPS_MIN && p.beta() >= DEFAULT_EPS_MIN);
        }
    }

    #[test]
    fn model_container_round_trip() {
        let data = wishart_synth(&WishartSpec::new(2, 3, 6, 5)).unwrap();
        let opts = IddlOptions {
            n_atoms: Some(3),
            tying: Tying::N,
            loss: Loss::Ssvm,
            max_outer: 2,
            ..IddlOptions::default()
        };
        let (model, _) = train_iddl(&data, &opts).unwrap();
        let mut buf = Vec::new();
        container::write_model(&mut buf, &model, serde_json::json!({"seed": 0})).unwrap();
        let (back, header) = container::read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.metadata["seed"], 0);
        let mut again = Vec::new();
        container::write_model(&mut again, &back, serde_json::json!({"seed": 0})).unwrap();
        assert_eq!(buf, again);
        assert!(container::read_model(&buf[..buf.len() - 3]).is_err());
    }
}
