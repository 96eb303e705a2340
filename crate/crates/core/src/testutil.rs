//! Helpers shared by the test suites: seeded RNGs, random array draws,
//! and central finite-difference oracles for gradient checks.
//!
//! Not part of the supported API.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array::{steering_matrix, ArrayParams, DirectionFn};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random impaired array around the nominal half-wavelength ULA:
/// unit-mean complex gains with sizable scatter and positions jittered by
/// up to a quarter wavelength.
pub fn random_params(rng: &mut impl Rng, n: usize) -> ArrayParams {
    let wavelength = 1.0;
    let gains = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(1.0 + 0.42 * re, 0.42 * im)
        })
        .collect();
    let positions = (0..n)
        .map(|i| i as f64 * wavelength / 2.0 + rng.gen_range(-0.25..0.25) * wavelength)
        .collect();
    ArrayParams::new(gains, positions, wavelength, DirectionFn::Sin).unwrap()
}

/// Exact model covariance `A diag(source_power) A^H + noise_var * I` for
/// uncorrelated equal-power sources.
pub fn model_covariance(
    params: &ArrayParams,
    thetas: &[f64],
    source_power: f64,
    noise_var: f64,
) -> DMatrix<Complex64> {
    let a = steering_matrix(params, thetas).unwrap();
    let n = params.n_antennas();
    let mut gamma = &a * a.adjoint() * Complex64::new(source_power, 0.0);
    for i in 0..n {
        gamma[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    gamma
}

/// Central finite difference of a complex-vector-valued function with
/// respect to parameter `k` of a flat real parameter vector.
pub fn central_diff_vec(
    flat: &[f64],
    k: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> Vec<Complex64>,
) -> Vec<Complex64> {
    let mut plus = flat.to_vec();
    plus[k] += h;
    let mut minus = flat.to_vec();
    minus[k] -= h;
    let fp = f(&plus);
    let fm = f(&minus);
    fp.iter()
        .zip(&fm)
        .map(|(p, m)| (p - m) / (2.0 * h))
        .collect()
}

/// Central finite difference of a scalar function with respect to
/// parameter `k` of a flat real parameter vector.
pub fn central_diff_scalar(
    flat: &[f64],
    k: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut plus = flat.to_vec();
    plus[k] += h;
    let mut minus = flat.to_vec();
    minus[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Full central finite-difference gradient of a scalar function.
pub fn fd_gradient(flat: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..flat.len())
        .map(|k| central_diff_scalar(flat, k, h, &mut f))
        .collect()
}

fn rel_err(diff: f64, a: f64, b: f64, floor: f64) -> f64 {
    diff / a.max(b).max(floor)
}

/// Worst elementwise relative error between two complex slices. Elements
/// far below the slice scale are compared against a floor of 1e-3 times
/// the scale, which keeps finite-difference roundoff noise out of the
/// comparison without hiding real errors.
pub fn max_rel_err_complex(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    let floor = (1e-3 * scale).max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err((x - y).norm(), x.norm(), y.norm(), floor))
        .fold(0.0f64, f64::max)
}

/// Worst elementwise relative error between two real slices, with the
/// same floor rule as [`max_rel_err_complex`].
pub fn max_rel_err_real(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);
    let floor = (1e-3 * scale).max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err((x - y).abs(), x.abs(), y.abs(), floor))
        .fold(0.0f64, f64::max)
}
