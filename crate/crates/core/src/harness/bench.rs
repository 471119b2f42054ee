//! Scaling of the two gradient blocks: the atom gradient against `d` and the
//! parameter gradient against the number of atoms.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::AbldParams;
use crate::error::{Error, Result};
use crate::harness::synth::{random_spd, wishart_synth, WishartSpec};
use crate::iddl::{loss_grad_atom, loss_grad_params, ClassifierWeights, Dictionary, Loss, Tying};

pub const D_SLOPE_RANGE: (f64, f64) = (2.0, 3.6);
pub const N_SLOPE_RANGE: (f64, f64) = (0.7, 1.3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub dims: Vec<usize>,
    pub atom_counts: Vec<usize>,
    /// Samples in each synthetic dataset.
    pub samples: usize,
    /// Matrix size used for the atom-count sweep.
    pub atom_sweep_dim: usize,
    /// Each timing repeats the call until at least this many seconds pass.
    pub min_seconds: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            dims: vec![8, 16, 32, 64],
            atom_counts: vec![8, 16, 32, 64],
            samples: 20,
            atom_sweep_dim: 10,
            min_seconds: 0.05,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub block: String,
    pub dim: usize,
    pub n_atoms: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    pub d_slope: f64,
    pub n_slope: f64,
}

impl BenchReport {
    pub fn d_slope_ok(&self) -> bool {
        (D_SLOPE_RANGE.0..=D_SLOPE_RANGE.1).contains(&self.d_slope)
    }

    pub fn n_slope_ok(&self) -> bool {
        (N_SLOPE_RANGE.0..=N_SLOPE_RANGE.1).contains(&self.n_slope)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParams(
            "a slope needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParams(
            "log-log fit needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParams("all x values are equal".into()));
    }
    Ok(sxy / sxx)
}

/// Best-of-`repeats` seconds per call.
fn time_call(min_seconds: f64, repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut calls = 0u32;
        loop {
            f()?;
            calls += 1;
            if start.elapsed().as_secs_f64() >= min_seconds {
                break;
            }
        }
        best = best.min(start.elapsed().as_secs_f64() / calls as f64);
    }
    Ok(best)
}

fn problem(
    d: usize,
    n_atoms: usize,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(
    crate::dataset::LabeledSpdDataset,
    Dictionary,
    ClassifierWeights,
)> {
    let classes = 2;
    let data = wishart_synth(&WishartSpec::new(
        classes,
        d,
        samples.div_ceil(classes),
        rand::Rng::gen(rng),
    ))?;
    let atoms = (0..n_atoms).map(|_| random_spd(rng, d)).collect();
    let params = vec![AbldParams::new(0.7, 1.3)?; n_atoms];
    let dict = Dictionary::new(atoms, params, Tying::N)?;
    let mut w = ClassifierWeights::zeros(classes, n_atoms, Loss::Ridge, 1e-3, 1.0);
    w.w.fill(0.1);
    Ok((data, dict, w))
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = Vec::new();
    for &d in &opts.dims {
        let (data, dict, w) = problem(d, 1, opts.samples, &mut rng)?;
        let seconds = time_call(opts.min_seconds, opts.repeats, || {
            loss_grad_atom(&data, &dict, &w, 0).map(drop)
        })?;
        points.push(BenchPoint {
            block: "atom".into(),
            dim: d,
            n_atoms: 1,
            seconds,
        });
    }
    for &n in &opts.atom_counts {
        let (data, dict, w) = problem(opts.atom_sweep_dim, n, opts.samples, &mut rng)?;
        let seconds = time_call(opts.min_seconds, opts.repeats, || {
            loss_grad_params(&data, &dict, &w).map(drop)
        })?;
        points.push(BenchPoint {
            block: "params".into(),
            dim: opts.atom_sweep_dim,
            n_atoms: n,
            seconds,
        });
    }
    let fit = |block: &str, x: fn(&BenchPoint) -> usize| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.block == block)
            .map(|p| (x(p) as f64, p.seconds))
            .unzip();
        loglog_slope(&xs, &ys)
    };
    let d_slope = fit("atom", |p| p.dim)?;
    let n_slope = fit("params", |p| p.n_atoms)?;
    Ok(BenchReport {
        points,
        d_slope,
        n_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(2.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 2.5).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn tiny_bench_runs() {
        let opts = BenchOptions {
            dims: vec![3, 6],
            atom_counts: vec![2, 4],
            samples: 4,
            atom_sweep_dim: 3,
            min_seconds: 0.0,
            repeats: 1,
            seed: 1,
        };
        let r = run_bench(&opts).unwrap();
        assert_eq!(r.points.len(), 4);
        assert!(r.d_slope.is_finite() && r.n_slope.is_finite());
    }
}
