//! Finite-difference audit of every analytic gradient.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::{idc_centroid_grad, idc_objective, idc_param_grad, Partition, Variant};
use crate::dataset::{LabeledSpdDataset, SpdDataset};
use crate::divergence::{
    abld, abld_grad_alpha, abld_grad_beta, abld_grad_y, abld_grad_y_via_logdet_term,
    logdet_term_grad, AbldParams,
};
use crate::error::Result;
use crate::harness::fd::{
    central_diff, matrix_gradient_fd, rel_err, sym_gradient_fd, vector_gradient_fd,
};
use crate::harness::synth::{random_spd, wishart_synth, WishartSpec};
use crate::iddl::{
    encode_dataset, loss_grad_atom, loss_grad_params, loss_grad_w, ClassifierWeights, Dictionary,
    Loss, Tying,
};
use crate::linalg::{sym, SpdMatrix};

/// Largest relative error any family may show.
pub const AUDIT_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub threshold: f64,
    pub families: Vec<FamilyReport>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(|f| f.passed)
    }
}

/// Runs `trial` `trials` times and keeps the worst relative error. A trial
/// that errors counts as an infinite error.
pub fn audit_family(
    name: &str,
    trials: usize,
    rng: &mut ChaCha8Rng,
    mut trial: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> FamilyReport {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let e = trial(rng).unwrap_or(f64::INFINITY);
        worst = if e.is_nan() {
            f64::INFINITY
        } else {
            worst.max(e)
        };
    }
    FamilyReport {
        name: name.to_string(),
        trials,
        max_rel_err: worst,
        passed: worst <= AUDIT_THRESHOLD,
    }
}

const H_SCALAR: f64 = 1e-5;
const H_MATRIX: f64 = 1e-6;

fn params_in<R: Rng>(rng: &mut R, negative: bool) -> Result<AbldParams> {
    let s = if negative { -1.0 } else { 1.0 };
    AbldParams::new(s * rng.gen_range(0.2..2.0), s * rng.gen_range(0.2..2.0))
}

fn pair<R: Rng>(rng: &mut R, d: usize) -> (SpdMatrix, SpdMatrix) {
    (random_spd(rng, d), random_spd(rng, d))
}

fn perturbed(m: &DMatrix<f64>) -> Option<SpdMatrix> {
    SpdMatrix::new(sym(m)).ok()
}

/// Labeled toy problem with three atoms, independent parameters and a
/// random classifier.
fn toy_problem(
    rng: &mut ChaCha8Rng,
    loss: Loss,
) -> Result<(LabeledSpdDataset, Dictionary, ClassifierWeights)> {
    let data = wishart_synth(&WishartSpec::new(3, 4, 4, rng.gen()))?;
    let atoms: Vec<SpdMatrix> = (0..3).map(|_| random_spd(rng, 4)).collect();
    let params = (0..3)
        .map(|_| params_in(rng, false))
        .collect::<Result<Vec<_>>>()?;
    let dict = Dictionary::new(atoms, params, Tying::N)?;
    let m = loss.encoding_len(3);
    let mut w = ClassifierWeights::zeros(3, 3, loss, rng.gen_range(0.0..0.1), 1.0);
    w.w = DMatrix::from_fn(3, m, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    Ok((data, dict, w))
}

/// Smallest distance of any hinge argument from its kink.
fn kink_gap(data: &LabeledSpdDataset, dict: &Dictionary, w: &ClassifierWeights) -> Result<f64> {
    let v = encode_dataset(data, dict, w.loss)?;
    let g = &w.w * v;
    let mut gap = f64::INFINITY;
    for (i, &y) in data.labels().iter().enumerate() {
        for l in 0..g.nrows() {
            if l != y {
                gap = gap.min((g[(l, i)] - g[(y, i)] + w.margin).abs());
            }
        }
    }
    Ok(gap)
}

fn svm_problem(rng: &mut ChaCha8Rng) -> Result<(LabeledSpdDataset, Dictionary, ClassifierWeights)> {
    loop {
        let p = toy_problem(rng, Loss::Ssvm)?;
        if kink_gap(&p.0, &p.1, &p.2)? > 1e-3 {
            return Ok(p);
        }
    }
}

fn loss_value(data: &LabeledSpdDataset, dict: &Dictionary, w: &ClassifierWeights) -> f64 {
    let r = match w.loss {
        Loss::Ridge => crate::iddl::ridge_loss(data, dict, w),
        Loss::Ssvm => crate::iddl::ssvm_loss(data, dict, w),
    };
    r.unwrap_or(f64::NAN)
}

fn with_atom(dict: &Dictionary, k: usize, m: &DMatrix<f64>) -> Option<Dictionary> {
    let mut atoms = dict.atoms().to_vec();
    atoms[k] = perturbed(m)?;
    Dictionary::new(atoms, dict.params().to_vec(), dict.tying()).ok()
}

fn with_params(dict: &Dictionary, x: &[f64]) -> Option<Dictionary> {
    let params = x
        .chunks(2)
        .map(|c| AbldParams::new(c[0], c[1]))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    Dictionary::new(dict.atoms().to_vec(), params, dict.tying()).ok()
}

fn classifier_families(
    loss: Loss,
    prefix: &str,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FamilyReport> {
    let make = |rng: &mut ChaCha8Rng| match loss {
        Loss::Ridge => toy_problem(rng, Loss::Ridge),
        Loss::Ssvm => svm_problem(rng),
    };
    vec![
        audit_family(&format!("{prefix}_w"), trials, rng, |rng| {
            let (data, dict, w) = make(rng)?;
            let g = loss_grad_w(&data, &dict, &w)?;
            let fd = matrix_gradient_fd(
                |m| {
                    let mut w2 = w.clone();
                    w2.w = m.clone();
                    loss_value(&data, &dict, &w2)
                },
                &w.w,
                H_MATRIX,
            );
            Ok(rel_err(&g, &fd))
        }),
        audit_family(&format!("{prefix}_atom"), trials, rng, |rng| {
            let (data, dict, w) = make(rng)?;
            let k = rng.gen_range(0..dict.len());
            let g = loss_grad_atom(&data, &dict, &w, k)?;
            let fd = sym_gradient_fd(
                |m| with_atom(&dict, k, m).map_or(f64::NAN, |d2| loss_value(&data, &d2, &w)),
                dict.atoms()[k].matrix(),
                H_MATRIX,
            );
            Ok(rel_err(g.matrix(), &fd))
        }),
        audit_family(&format!("{prefix}_params"), trials, rng, |rng| {
            let (data, dict, w) = make(rng)?;
            let g = loss_grad_params(&data, &dict, &w)?;
            let fd = vector_gradient_fd(
                |x| with_params(&dict, x).map_or(f64::NAN, |d2| loss_value(&data, &d2, &w)),
                &dict.packed_params(),
                H_SCALAR,
            );
            Ok(rel_err(g.packed, fd))
        }),
    ]
}

fn clustering_problem(rng: &mut ChaCha8Rng) -> Result<(SpdDataset, Partition)> {
    let data = wishart_synth(&WishartSpec::new(2, 4, 5, rng.gen()))?;
    let centroids = vec![random_spd(rng, 4), random_spd(rng, 4)];
    let assignments = (0..data.len()).map(|_| rng.gen_range(0..2)).collect();
    let part = Partition::new(
        assignments,
        centroids,
        params_in(rng, false)?,
        Variant::NE,
        rng.gen_range(0.0..2.0),
    )?;
    Ok((data.data().clone(), part))
}

/// Compares every analytic gradient with central differences on `trials`
/// random instances per family. `trials = 0` yields an empty report.
pub fn gradient_audit(seed: u64, trials: usize) -> AuditReport {
    let mut report = AuditReport {
        threshold: AUDIT_THRESHOLD,
        families: Vec::new(),
    };
    if trials == 0 {
        return report;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = &mut report.families;

    f.push(audit_family("abld_d_alpha", trials, &mut rng, |rng| {
        let (x, y) = pair(rng, 5);
        let neg = rng.gen_bool(0.5);
        let p = params_in(rng, neg)?;
        let g = abld_grad_alpha(&x, &y, &p)?;
        let fd = central_diff(
            |a| {
                AbldParams::new(a, p.beta())
                    .and_then(|q| abld(&x, &y, &q))
                    .unwrap_or(f64::NAN)
            },
            p.alpha(),
            H_SCALAR,
        );
        Ok(rel_err(g, fd))
    }));
    f.push(audit_family("abld_d_beta", trials, &mut rng, |rng| {
        let (x, y) = pair(rng, 5);
        let neg = rng.gen_bool(0.5);
        let p = params_in(rng, neg)?;
        let g = abld_grad_beta(&x, &y, &p)?;
        let fd = central_diff(
            |b| {
                AbldParams::new(p.alpha(), b)
                    .and_then(|q| abld(&x, &y, &q))
                    .unwrap_or(f64::NAN)
            },
            p.beta(),
            H_SCALAR,
        );
        Ok(rel_err(g, fd))
    }));
    let mut orthant = 0usize;
    f.push(audit_family("abld_d_y", trials, &mut rng, |rng| {
        let (x, y) = pair(rng, 5);
        let p = match orthant % 3 {
            0 => params_in(rng, false)?,
            1 => params_in(rng, true)?,
            _ => AbldParams::origin(),
        };
        orthant += 1;
        let g = abld_grad_y(&x, &y, &p)?;
        let fd = sym_gradient_fd(
            |m| perturbed(m).map_or(f64::NAN, |yy| abld(&x, &yy, &p).unwrap_or(f64::NAN)),
            y.matrix(),
            H_MATRIX,
        );
        Ok(rel_err(g.matrix(), &fd))
    }));
    let mut orthant = 0usize;
    f.push(audit_family(
        "abld_d_y_logdet_route",
        trials,
        &mut rng,
        |rng| {
            let (x, y) = pair(rng, 5);
            let p = match orthant % 3 {
                0 => params_in(rng, false)?,
                1 => params_in(rng, true)?,
                _ => AbldParams::origin(),
            };
            orthant += 1;
            let g = abld_grad_y_via_logdet_term(&x, &y, &p)?;
            let fd = sym_gradient_fd(
                |m| perturbed(m).map_or(f64::NAN, |yy| abld(&x, &yy, &p).unwrap_or(f64::NAN)),
                y.matrix(),
                H_MATRIX,
            );
            Ok(rel_err(g.matrix(), &fd))
        },
    ));
    f.push(audit_family("logdet_term", trials, &mut rng, |rng| {
        let (a, b) = pair(rng, 4);
        let (p, q) = (rng.gen_range(0.1..2.0), rng.gen_range(0.2..2.5));
        let g = logdet_term_grad(&a, &b, p, q)?;
        let ah = a.sqrt()?.into_inner();
        let value = |m: &DMatrix<f64>| -> f64 {
            let inner = sym(&(&ah * m * &ah));
            match crate::linalg::sym_eigenvalues(&inner) {
                Ok(mu) if mu.iter().all(|&v| v > 0.0) => {
                    mu.iter().map(|&v| (p * v.powf(q)).ln_1p()).sum()
                }
                _ => f64::NAN,
            }
        };
        let fd = sym_gradient_fd(value, b.matrix(), H_MATRIX);
        Ok(rel_err(g.matrix(), &fd))
    }));

    f.extend(classifier_families(Loss::Ridge, "ridge", trials, &mut rng));
    f.extend(classifier_families(Loss::Ssvm, "ssvm", trials, &mut rng));

    f.push(audit_family("idc_centroid", trials, &mut rng, |rng| {
        let (data, part) = clustering_problem(rng)?;
        let z = rng.gen_range(0..2);
        let g = idc_centroid_grad(&data, &part, z)?;
        let fd = sym_gradient_fd(
            |m| {
                let Some(c) = perturbed(m) else {
                    return f64::NAN;
                };
                let mut p2 = part.clone();
                p2.centroids[z] = c;
                idc_objective(&data, &p2).unwrap_or(f64::NAN)
            },
            part.centroids[z].matrix(),
            H_MATRIX,
        );
        Ok(rel_err(g.matrix(), &fd))
    }));
    f.push(audit_family("idc_params", trials, &mut rng, |rng| {
        let (data, part) = clustering_problem(rng)?;
        let (ga, gb) = idc_param_grad(&data, &part)?;
        let fd = vector_gradient_fd(
            |x| {
                let Ok(p) = AbldParams::new(x[0], x[1]) else {
                    return f64::NAN;
                };
                let mut p2 = part.clone();
                p2.params = p;
                idc_objective(&data, &p2).unwrap_or(f64::NAN)
            },
            &[part.params.alpha(), part.params.beta()],
            H_SCALAR,
        );
        Ok(rel_err(vec![ga, gb], fd))
    }));
    report
}
