//! Differentiable MUSIC: softmax-relaxed peak readout and analytic
//! gradients of the DoA estimates with respect to the array parameters.
//!
//! Peak finding stays a hard argmax, so gradients stop there by
//! contract: masks are recomputed on every forward pass but treated as
//! constants when differentiating. Within each mask the estimate is a
//! convex combination of grid angles weighted by a tempered softmax of
//! the spectrum, which is differentiable in the array parameters because
//! the noise subspace depends only on the measurements.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::array::{steering_jacobian, steering_vector, ArrayParams, ParamGradient};
use crate::error::{Error, Result};
use crate::grid::AngularGrid;
use crate::music::{
    find_peaks, music_spectrum, spectrum_value, Spectrum,
};
use crate::sim::SnapshotMatrix;
use crate::subspace::{hermitian_evd, noise_subspace, sample_covariance, NoiseSubspace};

/// Contiguous window of grid indices around a spectrum peak.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularMask {
    pub center_index: usize,
    pub indices: Vec<usize>,
    pub angles: Vec<f64>,
}

impl AngularMask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Window of `window` grid points centered on `center`; an even window
/// puts the extra point on the high-angle side, and windows are clipped
/// at the grid boundaries.
pub(crate) fn make_mask_at(grid: &AngularGrid, center: usize, window: usize) -> AngularMask {
    let n = grid.len();
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    let start = center.saturating_sub(half_lo);
    let end = (center + half_hi).min(n - 1);
    let indices: Vec<usize> = (start..=end).collect();
    let angles = indices.iter().map(|&i| grid.angles()[i]).collect();
    AngularMask {
        center_index: center,
        indices,
        angles,
    }
}

/// Mask centered on a peak angle, which must lie on the grid.
pub fn make_mask(grid: &AngularGrid, peak_angle: f64, window: usize) -> Result<AngularMask> {
    if window == 0 {
        return Err(Error::invalid("mask window must be at least 1"));
    }
    let center = grid
        .index_of(peak_angle)
        .ok_or_else(|| Error::invalid(format!("peak angle {peak_angle} is not a grid angle")))?;
    Ok(make_mask_at(grid, center, window))
}

/// Tempered softmax with max subtraction; finite for any finite input,
/// including spectra sitting at the cap.
pub(crate) fn softmax(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

/// Softmax-relaxed DoA estimates: per-peak masks, weights, and the
/// resulting convex combinations, sorted ascending by estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffEstimate {
    pub thetas_hat: Vec<f64>,
    pub masks: Vec<AngularMask>,
    pub weights: Vec<Vec<f64>>,
    pub degraded: bool,
}

/// Differentiable DoA readout from a spectrum: hard peak finding, then a
/// per-peak convex combination of mask angles weighted by
/// `softmax(P / tau)`. `tau = 1` is the plain softmax; smaller values
/// sharpen toward the grid argmax.
pub fn diffmusic_estimate(
    spectrum: &Spectrum,
    m: usize,
    window: usize,
    tau: f64,
) -> Result<DiffEstimate> {
    if window == 0 {
        return Err(Error::invalid("mask window must be at least 1"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let peaks = find_peaks(spectrum, m)?;
    let mut entries: Vec<(f64, AngularMask, Vec<f64>)> = peaks
        .indices
        .iter()
        .map(|&center| {
            let mask = make_mask_at(&spectrum.grid, center, window);
            let vals: Vec<f64> = mask.indices.iter().map(|&i| spectrum.values[i]).collect();
            let weights = softmax(&vals, tau);
            let theta_hat: f64 = mask
                .angles
                .iter()
                .zip(&weights)
                .map(|(a, w)| a * w)
                .sum();
            (theta_hat, mask, weights)
        })
        .collect();
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut est = DiffEstimate {
        thetas_hat: Vec::with_capacity(m),
        masks: Vec::with_capacity(m),
        weights: Vec::with_capacity(m),
        degraded: peaks.degraded,
    };
    for (theta, mask, weights) in entries {
        est.thetas_hat.push(theta);
        est.masks.push(mask);
        est.weights.push(weights);
    }
    Ok(est)
}

/// Spectrum value at one angle together with its gradient with respect
/// to all `3N` real array parameters, holding the noise subspace fixed.
///
/// With `b = U_N^H a` and `D = ||b||^2`, the chain rule through the
/// quotient gives `dP/drho = -P^2 * 2 Re((U_N b)^H da/drho)`. Capped
/// values sit on a flat clamp, so their gradient is zero.
pub fn spectrum_point_with_grad(
    noise: &NoiseSubspace,
    params: &ArrayParams,
    theta: f64,
) -> Result<(f64, ParamGradient)> {
    let n = params.n_antennas();
    if noise.n_antennas() != n {
        return Err(Error::dimension(format!(
            "noise subspace has {} rows, array has {} antennas",
            noise.n_antennas(),
            n
        )));
    }
    let a = steering_vector(params, theta)?;
    let (value, capped) = spectrum_value(noise, &a);
    if capped {
        return Ok((value, ParamGradient::zeros(n)));
    }

    let b = noise.project(&a);
    // w = U_N b, the projection of a onto the noise subspace.
    let d = noise.basis.ncols();
    let mut w = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for k in 0..d {
        for i in 0..n {
            w[i] += noise.basis[(i, k)] * b[k];
        }
    }

    let jac = steering_jacobian(params, theta)?;
    let mut grad = ParamGradient::zeros(n);
    let factor = -value * value;
    for k in 0..n {
        let mut dot_re = Complex64::new(0.0, 0.0);
        let mut dot_im = Complex64::new(0.0, 0.0);
        let mut dot_p = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let wc = w[i].conj();
            dot_re += wc * jac.d_re_gain[(k, i)];
            dot_im += wc * jac.d_im_gain[(k, i)];
            dot_p += wc * jac.d_position[(k, i)];
        }
        grad.re_gain[k] = factor * 2.0 * dot_re.re;
        grad.im_gain[k] = factor * 2.0 * dot_im.re;
        grad.position[k] = factor * 2.0 * dot_p.re;
    }
    Ok((value, grad))
}

/// Differentiable estimate plus the gradient of every estimated DoA with
/// respect to the array parameters, from a precomputed noise subspace.
/// Gradients are returned in the same (ascending) order as the
/// estimates.
pub fn diff_estimate_with_grad(
    noise: &NoiseSubspace,
    params: &ArrayParams,
    grid: &AngularGrid,
    m: usize,
    window: usize,
    tau: f64,
) -> Result<(DiffEstimate, Vec<ParamGradient>)> {
    let spectrum = music_spectrum(noise, params, grid)?;
    let est = diffmusic_estimate(&spectrum, m, window, tau)?;
    let n = params.n_antennas();

    let mut grads = Vec::with_capacity(est.thetas_hat.len());
    for (i, mask) in est.masks.iter().enumerate() {
        let theta_hat = est.thetas_hat[i];
        let weights = &est.weights[i];
        let mut grad = ParamGradient::zeros(n);
        for (j, &idx) in mask.indices.iter().enumerate() {
            // d theta_hat / d P_j = w_j (theta_j - theta_hat) / tau.
            let coeff = weights[j] * (mask.angles[j] - theta_hat) / tau;
            if coeff == 0.0 {
                continue;
            }
            let (_, point_grad) =
                spectrum_point_with_grad(noise, params, spectrum.grid.angles()[idx])?;
            grad.add_scaled(&point_grad, coeff);
        }
        grads.push(grad);
    }
    Ok((est, grads))
}

/// End-to-end differentiable estimate from raw snapshots.
pub fn estimate_gradient(
    x: &SnapshotMatrix,
    params: &ArrayParams,
    grid: &AngularGrid,
    m: usize,
    window: usize,
    tau: f64,
) -> Result<(DiffEstimate, Vec<ParamGradient>)> {
    let gamma = sample_covariance(x);
    let evd = hermitian_evd(&gamma)?;
    let noise = noise_subspace(&evd, m)?;
    diff_estimate_with_grad(&noise, params, grid, m, window, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::DirectionFn;
    use crate::music::{music_estimate, SPECTRUM_CAP};
    use crate::sim::{generate_scene, SimConfig};
    use crate::testutil::{
        central_diff_scalar, max_rel_err_real, model_covariance, random_params, seeded_rng,
    };

    fn synthetic_spectrum(values: Vec<f64>) -> Spectrum {
        let grid = AngularGrid::linspace(-1.0, 1.0, values.len()).unwrap();
        Spectrum::from_values(grid, values).unwrap()
    }

    #[test]
    fn mask_centering_and_clipping() {
        let grid = AngularGrid::linspace(-1.0, 1.0, 201).unwrap();
        let mask = make_mask_at(&grid, 100, 5);
        assert_eq!(mask.indices, vec![98, 99, 100, 101, 102]);
        let clipped = make_mask_at(&grid, 0, 5);
        assert_eq!(clipped.indices, vec![0, 1, 2]);
        let single = make_mask_at(&grid, 7, 1);
        assert_eq!(single.indices, vec![7]);
        // Even windows put the extra point on the high side.
        let even = make_mask_at(&grid, 100, 4);
        assert_eq!(even.indices, vec![99, 100, 101, 102]);
        // Clipped windows keep at least ceil(L/2) points.
        let tail = make_mask_at(&grid, 200, 6);
        assert!(tail.len() >= 3);
    }

    #[test]
    fn make_mask_requires_grid_angle() {
        let grid = AngularGrid::linspace(-1.0, 1.0, 21).unwrap();
        assert!(make_mask(&grid, grid.angles()[3], 3).is_ok());
        assert!(make_mask(&grid, 0.123456, 3).is_err());
        assert!(make_mask(&grid, grid.angles()[3], 0).is_err());
    }

    #[test]
    fn window_of_one_reduces_to_argmax() {
        let spectrum = synthetic_spectrum(vec![1.0, 3.0, 1.5, 6.0, 2.0, 1.0, 4.0, 1.0]);
        let est = diffmusic_estimate(&spectrum, 2, 1, 1.0).unwrap();
        assert_eq!(est.weights, vec![vec![1.0], vec![1.0]]);
        assert_eq!(
            est.thetas_hat,
            vec![spectrum.grid.angles()[3], spectrum.grid.angles()[6]]
        );
    }

    #[test]
    fn symmetric_mask_keeps_peak_angle() {
        let mut values = vec![1.0; 41];
        // Symmetric bump centered at index 20.
        for (k, v) in [(18, 2.0), (19, 5.0), (20, 9.0), (21, 5.0), (22, 2.0)] {
            values[k] = v;
        }
        let spectrum = synthetic_spectrum(values);
        let est = diffmusic_estimate(&spectrum, 1, 5, 1.0).unwrap();
        assert!((est.thetas_hat[0] - spectrum.grid.angles()[20]).abs() < 1e-12);
    }

    #[test]
    fn small_temperature_recovers_argmax() {
        let spectrum = synthetic_spectrum(vec![1.0, 2.0, 8.0, 3.0, 1.0, 1.2, 1.0]);
        let est = diffmusic_estimate(&spectrum, 1, 5, 1e-9).unwrap();
        assert_eq!(est.thetas_hat[0], spectrum.grid.angles()[2]);
        let w = &est.weights[0];
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn estimates_stay_inside_their_masks() {
        let mut rng = seeded_rng(11);
        let params = random_params(&mut rng, 8);
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 2,
            n_snapshots: 50,
            snr_db: 10.0,
            ..Default::default()
        };
        let grid = AngularGrid::linspace(-1.5, 1.5, 601).unwrap();
        for _ in 0..20 {
            let scene = generate_scene(&config, &params, &mut rng).unwrap();
            let noise = crate::subspace::noise_subspace_of(&scene.snapshots, 2).unwrap();
            let spectrum = music_spectrum(&noise, &params, &grid).unwrap();
            let est = diffmusic_estimate(&spectrum, 2, 9, 1.0).unwrap();
            for (theta, mask) in est.thetas_hat.iter().zip(&est.masks) {
                let lo = mask.angles.first().unwrap();
                let hi = mask.angles.last().unwrap();
                assert!(theta >= lo && theta <= hi, "{theta} outside [{lo}, {hi}]");
            }
            for w in &est.weights {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(w.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn off_grid_source_refined_beyond_grid_argmax() {
        let mut rng = seeded_rng(4);
        let params = random_params(&mut rng, 12);
        let grid = AngularGrid::linspace(-1.4, 1.4, 1401).unwrap();
        // Source midway between two grid points.
        let theta_true = (grid.angles()[700] + grid.angles()[701]) / 2.0;
        let gamma = model_covariance(&params, &[theta_true], 1.0, 1e-4);
        let evd = hermitian_evd(&gamma).unwrap();
        let noise = noise_subspace(&evd, 1).unwrap();
        let spectrum = music_spectrum(&noise, &params, &grid).unwrap();

        let hard = find_peaks(&spectrum, 1).unwrap().angles[0];
        let est = diffmusic_estimate(&spectrum, 1, 8, 1.0).unwrap();
        let soft = est.thetas_hat[0];
        assert!(
            (soft - theta_true).abs() < (hard - theta_true).abs(),
            "soft {soft} vs hard {hard} (truth {theta_true})"
        );
    }

    #[test]
    fn spectrum_point_grad_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        for trial in 0..30 {
            let params = random_params(&mut rng, 8);
            let config = SimConfig {
                n_antennas: 8,
                n_sources: 2,
                n_snapshots: 50,
                snr_db: 20.0,
                ..Default::default()
            };
            let scene = generate_scene(&config, &params, &mut rng).unwrap();
            let noise = crate::subspace::noise_subspace_of(&scene.snapshots, 2).unwrap();
            let theta = scene.thetas[trial % 2];

            let (_, grad) = spectrum_point_with_grad(&noise, &params, theta).unwrap();
            let flat = params.to_flat();
            let fd: Vec<f64> = (0..flat.len())
                .map(|k| {
                    central_diff_scalar(&flat, k, 1e-6, |f| {
                        let p = params.from_flat(f).unwrap();
                        crate::music::spectrum_at(&noise, &p, &[theta]).unwrap()[0]
                    })
                })
                .collect();
            let err = max_rel_err_real(&grad.to_flat(), &fd);
            assert!(err < 1e-5, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn capped_point_has_zero_gradient() {
        let mut rng = seeded_rng(8);
        let params = random_params(&mut rng, 8);
        let thetas = [0.25];
        let gamma = model_covariance(&params, &thetas, 1.0, 1e-3);
        let evd = hermitian_evd(&gamma).unwrap();
        let noise = noise_subspace(&evd, 1).unwrap();
        let (value, grad) = spectrum_point_with_grad(&noise, &params, thetas[0]).unwrap();
        assert_eq!(value, SPECTRUM_CAP);
        assert!(grad.to_flat().iter().all(|&g| g == 0.0));
    }

    /// Full estimate gradient against central finite differences,
    /// skipping draws where the perturbation flips a peak index.
    #[test]
    fn estimate_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(9);
        let grid = AngularGrid::linspace(-1.5, 1.5, 721).unwrap();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 12 && attempts < 60 {
            attempts += 1;
            let physical = random_params(&mut rng, 8);
            let config = SimConfig {
                n_antennas: 8,
                n_sources: 2,
                n_snapshots: 50,
                snr_db: 20.0,
                ..Default::default()
            };
            let scene = generate_scene(&config, &physical, &mut rng).unwrap();
            let noise = crate::subspace::noise_subspace_of(&scene.snapshots, 2).unwrap();
            // Check the gradient at a mismatched parametrization, as during
            // training; at the generating array the peaks saturate the
            // softmax and finite differences lose meaning.
            let params = random_params(&mut rng, 8);

            let (est, grads) =
                diff_estimate_with_grad(&noise, &params, &grid, 2, 8, 1.0).unwrap();
            let centers: Vec<usize> = est.masks.iter().map(|m| m.center_index).collect();

            let flat = params.to_flat();
            let eval = |f: &[f64]| -> Option<(Vec<f64>, Vec<usize>)> {
                let p = params.from_flat(f).ok()?;
                let spectrum = music_spectrum(&noise, &p, &grid).ok()?;
                let e = diffmusic_estimate(&spectrum, 2, 8, 1.0).ok()?;
                let c: Vec<usize> = e.masks.iter().map(|m| m.center_index).collect();
                Some((e.thetas_hat, c))
            };

            let mut discontinuous = false;
            let mut fd = vec![vec![0.0; flat.len()]; 2];
            for k in 0..flat.len() {
                let mut plus = flat.clone();
                plus[k] += 1e-6;
                let mut minus = flat.clone();
                minus[k] -= 1e-6;
                let (tp, cp) = eval(&plus).unwrap();
                let (tm, cm) = eval(&minus).unwrap();
                if cp != centers || cm != centers {
                    discontinuous = true;
                    break;
                }
                for i in 0..2 {
                    fd[i][k] = (tp[i] - tm[i]) / 2e-6;
                }
            }
            if discontinuous {
                continue;
            }
            checked += 1;
            for i in 0..2 {
                let err = max_rel_err_real(&grads[i].to_flat(), &fd[i]);
                assert!(err < 1e-4, "attempt {attempts} source {i}: rel err {err}");
            }
        }
        assert!(checked >= 12, "only {checked} smooth configurations found");
    }

    #[test]
    fn single_point_mask_has_zero_gradient() {
        let mut rng = seeded_rng(10);
        let params = random_params(&mut rng, 8);
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 2,
            n_snapshots: 50,
            ..Default::default()
        };
        let scene = generate_scene(&config, &params, &mut rng).unwrap();
        let noise = crate::subspace::noise_subspace_of(&scene.snapshots, 2).unwrap();
        let grid = AngularGrid::linspace(-1.5, 1.5, 721).unwrap();
        let (_, grads) = diff_estimate_with_grad(&noise, &params, &grid, 2, 1, 1.0).unwrap();
        for g in grads {
            assert!(g.to_flat().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_snapshots_change_nothing() {
        let mut rng = seeded_rng(12);
        let params = random_params(&mut rng, 6);
        let config = SimConfig {
            n_antennas: 6,
            n_sources: 2,
            n_snapshots: 20,
            ..Default::default()
        };
        let scene = generate_scene(&config, &params, &mut rng).unwrap();
        let x = &scene.snapshots;
        let mut doubled = SnapshotMatrix::zeros(6, 40);
        doubled.columns_mut(0, 20).copy_from(x);
        doubled.columns_mut(20, 20).copy_from(x);

        let grid = AngularGrid::linspace(-1.5, 1.5, 301).unwrap();
        let (est_a, grads_a) = estimate_gradient(x, &params, &grid, 2, 5, 1.0).unwrap();
        let (est_b, grads_b) = estimate_gradient(&doubled, &params, &grid, 2, 5, 1.0).unwrap();
        for (a, b) in est_a.thetas_hat.iter().zip(&est_b.thetas_hat) {
            assert!((a - b).abs() < 1e-12);
        }
        for (ga, gb) in grads_a.iter().zip(&grads_b) {
            let err = max_rel_err_real(&ga.to_flat(), &gb.to_flat());
            assert!(err < 1e-9, "gradient mismatch {err}");
        }
    }

    #[test]
    fn window_one_matches_classical_music() {
        let mut rng = seeded_rng(13);
        let params = random_params(&mut rng, 8);
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 3,
            n_snapshots: 64,
            snr_db: 15.0,
            ..Default::default()
        };
        let grid = AngularGrid::linspace(-1.5, 1.5, 901).unwrap();
        for _ in 0..10 {
            let scene = generate_scene(&config, &params, &mut rng).unwrap();
            let hard = music_estimate(&scene.snapshots, 3, &grid, &params).unwrap();
            let noise = crate::subspace::noise_subspace_of(&scene.snapshots, 3).unwrap();
            let spectrum = music_spectrum(&noise, &params, &grid).unwrap();
            let soft = diffmusic_estimate(&spectrum, 3, 1, 1.0).unwrap();
            assert_eq!(hard, soft.thetas_hat);
        }
    }
}
