//! Small dense helpers: symmetric spectra and a 1-D concave maximizer.

use nalgebra::{DMatrix, SMatrix};

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let dense = DMatrix::from_column_slice(N, N, sym.as_slice());
    let mut values: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    sym_eigenvalues(m)[N - 1]
}

/// Golden-section search for the maximum of a concave function on `[lo, hi]`.
/// Returns `(argmax, max)`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}
