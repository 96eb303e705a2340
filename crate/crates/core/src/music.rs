//! Classical MUSIC: pseudo-spectrum evaluation over an angular grid and
//! hard argmax peak picking.
//!
//! The spectrum at angle `theta` is `1 / ||U_N^H a(theta)||^2`. On
//! near-orthogonal inputs the denominator collapses, so values are capped
//! at [`SPECTRUM_CAP`] (and flagged) instead of overflowing; downstream
//! softmax stages rely on every value being finite.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::{steering_matrix, steering_vector, ArrayParams};
use crate::error::{Error, Result};
use crate::grid::AngularGrid;
use crate::sim::SnapshotMatrix;
use crate::subspace::{hermitian_evd, noise_subspace, sample_covariance, NoiseSubspace};

/// Upper bound on spectrum values; reached only on (near-)exact
/// orthogonality, where the true value diverges.
pub const SPECTRUM_CAP: f64 = 1e12;

/// Denominators below this are treated as exact orthogonality.
const DENOM_FLOOR: f64 = 1e-300;

static GRID_EVALS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of full-grid spectrum evaluations. Point
/// evaluations through [`spectrum_at`] do not count.
pub fn grid_eval_count() -> u64 {
    GRID_EVALS.load(Ordering::Relaxed)
}

/// MUSIC pseudo-spectrum over a grid. `clamped` is set when any value hit
/// [`SPECTRUM_CAP`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: AngularGrid,
    pub values: Vec<f64>,
    pub clamped: bool,
}

impl Spectrum {
    /// Wrap precomputed values; lengths must match and values must be
    /// positive and finite.
    pub fn from_values(grid: AngularGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dimension(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("spectrum values must be positive and finite"));
        }
        let clamped = values.iter().any(|&v| v >= SPECTRUM_CAP);
        Ok(Spectrum {
            grid,
            values,
            clamped,
        })
    }
}

/// Spectrum value for one steering vector: `1 / ||U_N^H a||^2`, capped.
/// The boolean reports whether the cap was applied.
pub(crate) fn spectrum_value(noise: &NoiseSubspace, a: &DVector<Complex64>) -> (f64, bool) {
    let n = noise.basis.nrows();
    let d = noise.basis.ncols();
    let mut denom = 0.0;
    for k in 0..d {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += noise.basis[(i, k)].conj() * a[i];
        }
        denom += acc.norm_sqr();
    }
    if denom < DENOM_FLOOR {
        return (SPECTRUM_CAP, true);
    }
    let value = 1.0 / denom;
    if value > SPECTRUM_CAP {
        (SPECTRUM_CAP, true)
    } else {
        (value, false)
    }
}

fn spectrum_column(noise: &NoiseSubspace, a_grid: &DMatrix<Complex64>, j: usize) -> (f64, bool) {
    let n = noise.basis.nrows();
    let d = noise.basis.ncols();
    let mut denom = 0.0;
    for k in 0..d {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += noise.basis[(i, k)].conj() * a_grid[(i, j)];
        }
        denom += acc.norm_sqr();
    }
    if denom < DENOM_FLOOR {
        return (SPECTRUM_CAP, true);
    }
    let value = 1.0 / denom;
    if value > SPECTRUM_CAP {
        (SPECTRUM_CAP, true)
    } else {
        (value, false)
    }
}

/// Spectrum from a precomputed steering matrix whose columns follow the
/// grid. Angles are independent, so the parallel evaluation is bitwise
/// identical to a serial one.
pub(crate) fn spectrum_from_steering(
    noise: &NoiseSubspace,
    a_grid: &DMatrix<Complex64>,
    grid: &AngularGrid,
) -> Spectrum {
    GRID_EVALS.fetch_add(1, Ordering::Relaxed);
    let results: Vec<(f64, bool)> = (0..grid.len())
        .into_par_iter()
        .with_min_len(512)
        .map(|j| spectrum_column(noise, a_grid, j))
        .collect();
    let clamped = results.iter().any(|r| r.1);
    Spectrum {
        grid: grid.clone(),
        values: results.into_iter().map(|r| r.0).collect(),
        clamped,
    }
}

/// MUSIC pseudo-spectrum along the whole grid. Counts as one full-grid
/// evaluation for [`grid_eval_count`].
pub fn music_spectrum(
    noise: &NoiseSubspace,
    params: &ArrayParams,
    grid: &AngularGrid,
) -> Result<Spectrum> {
    if noise.n_antennas() != params.n_antennas() {
        return Err(Error::dimension(format!(
            "noise subspace has {} rows, array has {} antennas",
            noise.n_antennas(),
            params.n_antennas()
        )));
    }
    let a_grid = steering_matrix(params, grid.angles())?;
    Ok(spectrum_from_steering(noise, &a_grid, grid))
}

/// Spectrum values at arbitrary angles (off-grid evaluation). Does not
/// count as a grid evaluation.
pub fn spectrum_at(
    noise: &NoiseSubspace,
    params: &ArrayParams,
    thetas: &[f64],
) -> Result<Vec<f64>> {
    thetas
        .iter()
        .map(|&theta| {
            let a = steering_vector(params, theta)?;
            Ok(spectrum_value(noise, &a).0)
        })
        .collect()
}

/// Result of peak picking: up to `m` grid angles sorted by descending
/// spectrum value. `degraded` is set when fewer than `m` local maxima
/// existed and the output was padded with the largest remaining grid
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct Peaks {
    pub angles: Vec<f64>,
    pub indices: Vec<usize>,
    pub degraded: bool,
}

/// Local-maximum indices (boundary points count when they beat their
/// single neighbor), the `m` largest by value; padded from non-peak
/// values when the spectrum has fewer than `m` local maxima.
pub(crate) fn peak_indices(values: &[f64], m: usize) -> Result<(Vec<usize>, bool)> {
    if m == 0 {
        return Err(Error::invalid("need at least one peak"));
    }
    if m > values.len() {
        return Err(Error::dimension(format!(
            "asked for {m} peaks from {} grid points",
            values.len()
        )));
    }
    let n = values.len();
    let by_value_desc = |a: &usize, b: &usize| {
        values[*b]
            .partial_cmp(&values[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            (i == 0 || values[i] > values[i - 1]) && (i == n - 1 || values[i] > values[i + 1])
        })
        .collect();
    peaks.sort_by(by_value_desc);
    let degraded = peaks.len() < m;
    if degraded {
        peaks.truncate(peaks.len());
        let chosen: std::collections::HashSet<usize> = peaks.iter().copied().collect();
        let mut rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        rest.sort_by(by_value_desc);
        peaks.extend(rest.into_iter().take(m - peaks.len()));
    }
    peaks.truncate(m);
    Ok((peaks, degraded))
}

/// The `m` strongest spectrum peaks, sorted by descending value.
pub fn find_peaks(spectrum: &Spectrum, m: usize) -> Result<Peaks> {
    let (indices, degraded) = peak_indices(&spectrum.values, m)?;
    let angles = indices
        .iter()
        .map(|&i| spectrum.grid.angles()[i])
        .collect();
    Ok(Peaks {
        angles,
        indices,
        degraded,
    })
}

/// End-to-end MUSIC estimate: covariance, eigendecomposition, subspace
/// separation, spectrum, peak picking. Returns the `m` estimated DoAs
/// sorted ascending.
pub fn music_estimate(
    x: &SnapshotMatrix,
    m: usize,
    grid: &AngularGrid,
    params: &ArrayParams,
) -> Result<Vec<f64>> {
    let gamma = sample_covariance(x);
    let evd = hermitian_evd(&gamma)?;
    let noise = noise_subspace(&evd, m)?;
    let spectrum = music_spectrum(&noise, params, grid)?;
    let peaks = find_peaks(&spectrum, m)?;
    let mut angles = peaks.angles;
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(angles)
}
