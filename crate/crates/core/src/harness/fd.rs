//! Central finite differences used as independent gradient oracles.

use nalgebra::DMatrix;

/// `(f(x+h) − f(x−h)) / 2h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Finite-difference gradient of a scalar function of a symmetric matrix,
/// returned as the symmetric matrix `G` with `df = ⟨G, dM⟩` for symmetric `dM`.
pub fn sym_gradient_fd(
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
    at: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let d = at.nrows();
    let mut g = DMatrix::zeros(d, d);
    let mut probe = at.clone();
    for i in 0..d {
        for j in i..d {
            let orig_ij = probe[(i, j)];
            let set = |m: &mut DMatrix<f64>, v: f64| {
                m[(i, j)] = v;
                m[(j, i)] = v;
            };
            set(&mut probe, orig_ij + h);
            let up = f(&probe);
            set(&mut probe, orig_ij - h);
            let down = f(&probe);
            set(&mut probe, orig_ij);
            let dd = (up - down) / (2.0 * h);
            if i == j {
                g[(i, i)] = dd;
            } else {
                g[(i, j)] = 0.5 * dd;
                g[(j, i)] = 0.5 * dd;
            }
        }
    }
    g
}

/// Finite-difference gradient of a scalar function of a general matrix.
pub fn matrix_gradient_fd(
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
    at: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(at.nrows(), at.ncols());
    let mut probe = at.clone();
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// Finite-difference gradient of a function of a parameter vector.
pub fn vector_gradient_fd(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Things [`rel_err`] can compare.
pub trait Comparable {
    fn distance(&self, other: &Self) -> f64;
    fn magnitude(&self) -> f64;
}

impl Comparable for f64 {
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Comparable for DMatrix<f64> {
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl Comparable for &DMatrix<f64> {
    fn distance(&self, other: &Self) -> f64 {
        (*self - *other).norm()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl Comparable for Vec<f64> {
    fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
    fn magnitude(&self) -> f64 {
        self.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn rel_err<T: Comparable>(a: T, b: T) -> f64 {
    let scale = a.magnitude().max(b.magnitude()).max(1e-12);
    a.distance(&b) / scale
}
