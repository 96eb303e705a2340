//! Calibration objectives: supervised periodic DoA error, supervised
//! spectrum-at-truth, and the unsupervised Jain's-index peak-sharpness
//! loss. Each returns its value together with the analytic gradient with
//! respect to all `3N` real array parameters.

use itertools::Itertools;
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::array::{ArrayParams, ParamGradient};
use crate::diffmusic::{diff_estimate_with_grad, make_mask_at, spectrum_point_with_grad};
use crate::error::{Error, Result};
use crate::grid::AngularGrid;
use crate::music::{music_spectrum, peak_indices};
use crate::sim::Scene;
use crate::subspace::{noise_subspace_of, NoiseSubspace};

/// Scalar loss with its gradient over `[Re g | Im g | p]`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: ParamGradient,
}

impl LossValue {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.is_finite()
    }
}

/// Wrap an angle difference into `(-pi/2, pi/2]` by removing the nearest
/// integer multiple of pi.
pub fn mod_pi(delta: f64) -> f64 {
    let r = delta.rem_euclid(PI);
    if r > FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

const MAX_EXHAUSTIVE_SOURCES: usize = 8;

/// Root mean squared periodic error between two equally long DoA lists,
/// minimized over all pairings. Returns the error and the winning
/// assignment (`perm[i]` is the estimate index paired with `truth[i]`);
/// ties pick the lexicographically first permutation.
///
/// Pairings are enumerated exhaustively, which is exact up to 8 sources;
/// larger problems would want a Hungarian assignment instead.
pub fn rmspe_with_assignment(truth: &[f64], estimate: &[f64]) -> Result<(f64, Vec<usize>)> {
    if truth.len() != estimate.len() {
        return Err(Error::dimension(format!(
            "{} true DoAs vs {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    let m = truth.len();
    if m == 0 {
        return Ok((0.0, Vec::new()));
    }
    if m > MAX_EXHAUSTIVE_SOURCES {
        return Err(Error::invalid(format!(
            "permutation search supports up to {MAX_EXHAUSTIVE_SOURCES} sources, got {m}"
        )));
    }
    let mut best_sse = f64::INFINITY;
    let mut best_perm: Vec<usize> = (0..m).collect();
    for perm in (0..m).permutations(m) {
        let sse: f64 = truth
            .iter()
            .zip(&perm)
            .map(|(t, &j)| {
                let d = mod_pi(t - estimate[j]);
                d * d
            })
            .sum();
        if sse < best_sse {
            best_sse = sse;
            best_perm = perm;
        }
    }
    Ok(((best_sse / m as f64).sqrt(), best_perm))
}

/// Permutation-minimized periodic RMSE, radians.
pub fn rmspe(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    rmspe_with_assignment(truth, estimate).map(|(value, _)| value)
}

/// Jain's fairness index `(sum x)^2 / (n sum x^2)`; 1 for flat vectors,
/// `1/n` for one-hot vectors.
pub fn jain_index(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("Jain's index of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Jain's index of a non-finite vector"));
    }
    let s: f64 = x.iter().sum();
    let q: f64 = x.iter().map(|v| v * v).sum();
    if q == 0.0 {
        return Err(Error::invalid("Jain's index of an all-zero vector"));
    }
    Ok(s * s / (x.len() as f64 * q))
}

/// Jain's index together with its gradient with respect to the inputs.
fn jain_index_with_grad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let value = jain_index(x)?;
    let n = x.len() as f64;
    let s: f64 = x.iter().sum();
    let q: f64 = x.iter().map(|v| v * v).sum();
    let grad = x
        .iter()
        .map(|&xi| 2.0 * s * (q - s * xi) / (n * q * q))
        .collect();
    Ok((value, grad))
}

/// Per-scene cache of everything that does not depend on the array
/// parameters: the true DoAs and the measurement noise subspace.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub thetas: Vec<f64>,
    pub noise: NoiseSubspace,
}

/// Compute the noise subspace of a scene once, for reuse across
/// optimization steps. `m` is the assumed source count.
pub fn prepare_scene(scene: &Scene, m: usize) -> Result<PreparedScene> {
    Ok(PreparedScene {
        thetas: scene.thetas.clone(),
        noise: noise_subspace_of(&scene.snapshots, m)?,
    })
}

/// Prepare every scene of a dataset in parallel (order preserved).
pub fn prepare_scenes(scenes: &[Scene], m: usize) -> Result<Vec<PreparedScene>> {
    scenes
        .par_iter()
        .map(|scene| prepare_scene(scene, m))
        .collect()
}

fn mean_terms(terms: Vec<(f64, ParamGradient)>, n: usize) -> LossValue {
    let count = terms.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = ParamGradient::zeros(n);
    // Fixed scene-order reduction keeps runs bit-reproducible.
    for (v, g) in &terms {
        value += v;
        grad.add_scaled(g, 1.0);
    }
    value /= count;
    grad.scale(1.0 / count);
    LossValue { value, grad }
}

/// Supervised DoA loss: mean permutation-minimized periodic RMSE of the
/// differentiable estimates, with the gradient chained through the
/// winning pairing only.
pub fn loss_sl_theta_prepared(
    batch: &[&PreparedScene],
    params: &ArrayParams,
    grid: &AngularGrid,
    window: usize,
    tau: f64,
) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = params.n_antennas();
    let terms: Result<Vec<(f64, ParamGradient)>> = batch
        .par_iter()
        .map(|scene| {
            let m = scene.thetas.len();
            let (est, grads) =
                diff_estimate_with_grad(&scene.noise, params, grid, m, window, tau)?;
            let (value, perm) = rmspe_with_assignment(&scene.thetas, &est.thetas_hat)?;
            let mut grad = ParamGradient::zeros(n);
            if value > 0.0 {
                for (i, &j) in perm.iter().enumerate() {
                    let delta = mod_pi(scene.thetas[i] - est.thetas_hat[j]);
                    // d rmspe / d theta_hat_j through the fixed pairing.
                    let coeff = -delta / (m as f64 * value);
                    grad.add_scaled(&grads[j], coeff);
                }
            }
            Ok((value, grad))
        })
        .collect();
    Ok(mean_terms(terms?, n))
}

/// See [`loss_sl_theta_prepared`]; this variant computes the noise
/// subspaces on the fly.
pub fn loss_sl_theta(
    batch: &[Scene],
    params: &ArrayParams,
    grid: &AngularGrid,
    window: usize,
    tau: f64,
) -> Result<LossValue> {
    let prepared: Result<Vec<PreparedScene>> = batch
        .iter()
        .map(|s| prepare_scene(s, s.n_sources()))
        .collect();
    let prepared = prepared?;
    let refs: Vec<&PreparedScene> = prepared.iter().collect();
    loss_sl_theta_prepared(&refs, params, grid, window, tau)
}

/// Supervised spectrum loss: negative mean spectrum mass at the true
/// DoAs. No grid, no peak finding; the spectrum is only evaluated at the
/// `M` labeled angles per scene.
pub fn loss_sl_p_prepared(batch: &[&PreparedScene], params: &ArrayParams) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = params.n_antennas();
    let terms: Result<Vec<(f64, ParamGradient)>> = batch
        .par_iter()
        .map(|scene| {
            let mut value = 0.0;
            let mut grad = ParamGradient::zeros(n);
            for &theta in &scene.thetas {
                let (v, g) = spectrum_point_with_grad(&scene.noise, params, theta)?;
                value -= v;
                grad.add_scaled(&g, -1.0);
            }
            Ok((value, grad))
        })
        .collect();
    Ok(mean_terms(terms?, n))
}

/// See [`loss_sl_p_prepared`]. Scenes without DoA labels contribute
/// nothing.
pub fn loss_sl_p(batch: &[Scene], params: &ArrayParams) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = params.n_antennas();
    let terms: Result<Vec<(f64, ParamGradient)>> = batch
        .par_iter()
        .map(|scene| {
            if scene.thetas.is_empty() {
                return Ok((0.0, ParamGradient::zeros(n)));
            }
            let prepared = prepare_scene(scene, scene.n_sources())?;
            let mut value = 0.0;
            let mut grad = ParamGradient::zeros(n);
            for &theta in &prepared.thetas {
                let (v, g) = spectrum_point_with_grad(&prepared.noise, params, theta)?;
                value -= v;
                grad.add_scaled(&g, -1.0);
            }
            Ok((value, grad))
        })
        .collect();
    Ok(mean_terms(terms?, n))
}

/// Unsupervised objective of one spectrum: the sum of Jain's indices
/// over the `m` peak masks, plus the spectrum-value sensitivities
/// `(grid index, d value / d P)` needed for the chain rule. Masks come
/// from the current forward pass and are held fixed for the gradient.
fn ul_objective(
    values: &[f64],
    grid: &AngularGrid,
    m: usize,
    window: usize,
) -> Result<(f64, Vec<(usize, f64)>)> {
    let (peaks, _) = peak_indices(values, m)?;
    let mut total = 0.0;
    let mut sensitivities = Vec::new();
    for &center in &peaks {
        let mask = make_mask_at(grid, center, window);
        let x: Vec<f64> = mask.indices.iter().map(|&i| values[i]).collect();
        let (ji, dji) = jain_index_with_grad(&x)?;
        total += ji;
        for (&idx, d) in mask.indices.iter().zip(dji) {
            sensitivities.push((idx, d));
        }
    }
    Ok((total, sensitivities))
}

/// Unsupervised loss: mean over scenes of the summed per-mask Jain's
/// indices. Minimizing it sharpens the spectrum inside each mask; DoA
/// labels are never read.
pub fn loss_ul_prepared(
    batch: &[&PreparedScene],
    params: &ArrayParams,
    grid: &AngularGrid,
    m: usize,
    window: usize,
) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = params.n_antennas();
    let terms: Result<Vec<(f64, ParamGradient)>> = batch
        .par_iter()
        .map(|scene| {
            let spectrum = music_spectrum(&scene.noise, params, grid)?;
            let (value, sensitivities) = ul_objective(&spectrum.values, grid, m, window)?;
            let mut grad = ParamGradient::zeros(n);
            for (idx, coeff) in sensitivities {
                if coeff == 0.0 {
                    continue;
                }
                let (_, g) = spectrum_point_with_grad(&scene.noise, params, grid.angles()[idx])?;
                grad.add_scaled(&g, coeff);
            }
            Ok((value, grad))
        })
        .collect();
    Ok(mean_terms(terms?, n))
}

/// See [`loss_ul_prepared`]; DoA labels in the scenes are ignored.
pub fn loss_ul(
    batch: &[Scene],
    params: &ArrayParams,
    grid: &AngularGrid,
    m: usize,
    window: usize,
) -> Result<LossValue> {
    let prepared: Result<Vec<PreparedScene>> =
        batch.iter().map(|s| prepare_scene(s, m)).collect();
    let prepared = prepared?;
    let refs: Vec<&PreparedScene> = prepared.iter().collect();
    loss_ul_prepared(&refs, params, grid, m, window)
}
