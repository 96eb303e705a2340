//! Measurement simulation: impaired arrays, source signals, and noise.
//!
//! All randomness flows through caller-provided RNGs; the library keeps
//! no global random state. Dataset generation splits a parent RNG into
//! per-scene child seeds (drawn from the parent in scene order), so the
//! result does not depend on how scenes are parallelized.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::ArrayParams;
use crate::error::{Error, Result};

/// Complex `N x T` measurement block; rows are antennas, columns are
/// snapshots.
pub type SnapshotMatrix = DMatrix<Complex64>;

/// Ground-truth DoAs together with the measurements they generated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Source DoAs, radians, sorted ascending.
    pub thetas: Vec<f64>,
    pub snapshots: SnapshotMatrix,
}

impl Scene {
    pub fn n_sources(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_snapshots(&self) -> usize {
        self.snapshots.ncols()
    }
}

/// Simulation configuration. Angles are radians; `position_spread` and
/// positions share the meter unit of the array wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_antennas: usize,
    pub n_sources: usize,
    pub n_snapshots: usize,
    pub snr_db: f64,
    /// Source power `sigma_s^2`.
    pub source_power: f64,
    pub doa_low: f64,
    pub doa_high: f64,
    /// Uniform position perturbation half-width `eta`, meters.
    pub position_spread: f64,
    /// Variance of the circularly symmetric complex gain perturbation.
    pub gain_variance: f64,
    /// Minimum pairwise DoA separation enforced by rejection sampling;
    /// zero disables the floor.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    /// 16-antenna, 5-source, 100-snapshot scenario at 30 dB SNR with
    /// quarter-wavelength position spread (for a unit wavelength) and
    /// gain variance 0.36.
    fn default() -> Self {
        SimConfig {
            n_antennas: 16,
            n_sources: 5,
            n_snapshots: 100,
            snr_db: 30.0,
            source_power: 1.0,
            doa_low: -80f64.to_radians(),
            doa_high: 80f64.to_radians(),
            position_spread: 0.25,
            gain_variance: 0.36,
            min_separation: 2f64.to_radians(),
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_antennas < 2 {
            return Err(Error::invalid("need at least 2 antennas"));
        }
        if self.n_sources == 0 || self.n_sources >= self.n_antennas {
            return Err(Error::invalid(format!(
                "need 1 <= M < N, got M={} with N={}",
                self.n_sources, self.n_antennas
            )));
        }
        if self.n_snapshots == 0 {
            return Err(Error::invalid("need at least one snapshot"));
        }
        if !(self.source_power > 0.0) {
            return Err(Error::invalid("source power must be positive"));
        }
        if self.position_spread < 0.0 || self.gain_variance < 0.0 {
            return Err(Error::invalid("perturbation parameters must be nonnegative"));
        }
        if !(self.doa_low < self.doa_high) {
            return Err(Error::invalid("DoA bounds must satisfy low < high"));
        }
        if self.min_separation < 0.0 {
            return Err(Error::invalid("minimum separation must be nonnegative"));
        }
        Ok(())
    }

    /// Noise variance implied by the SNR: `sigma_n^2 = sigma_s^2 * 10^(-SNR/10)`.
    pub fn noise_variance(&self) -> f64 {
        self.source_power * 10f64.powf(-self.snr_db / 10.0)
    }
}

/// Sample of a circularly symmetric complex Gaussian with the given
/// variance: independent real and imaginary parts of variance `var / 2`.
fn complex_gaussian(rng: &mut impl Rng, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// Perturb a nominal array: positions get uniform offsets in
/// `[-eta, eta]`, gains get circularly symmetric complex Gaussian offsets
/// of variance `gain_var`.
pub fn sample_impaired_array(
    nominal: &ArrayParams,
    eta: f64,
    gain_var: f64,
    rng: &mut impl Rng,
) -> Result<ArrayParams> {
    if eta < 0.0 || gain_var < 0.0 {
        return Err(Error::invalid("perturbation parameters must be nonnegative"));
    }
    nominal.validate()?;
    let positions = nominal
        .positions
        .iter()
        .map(|p| {
            if eta > 0.0 {
                p + rng.gen_range(-eta..=eta)
            } else {
                *p
            }
        })
        .collect();
    let gains = nominal
        .gains
        .iter()
        .map(|g| {
            if gain_var > 0.0 {
                g + complex_gaussian(rng, gain_var)
            } else {
                *g
            }
        })
        .collect();
    ArrayParams::new(gains, positions, nominal.wavelength, nominal.direction)
}

const DOA_RETRIES: usize = 10_000;

fn draw_thetas(config: &SimConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let dist = Uniform::new(config.doa_low, config.doa_high);
    for _ in 0..DOA_RETRIES {
        let mut thetas: Vec<f64> = (0..config.n_sources).map(|_| rng.sample(dist)).collect();
        thetas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ok = thetas
            .windows(2)
            .all(|w| w[1] - w[0] > config.min_separation.max(0.0) && w[1] > w[0]);
        if ok {
            return Ok(thetas);
        }
    }
    Err(Error::DegenerateDoas {
        sources: config.n_sources,
        min_sep_deg: config.min_separation.to_degrees(),
        attempts: DOA_RETRIES,
    })
}

/// Generate one scene: DoAs, source signals, and noisy measurements
/// `X = A S + N`.
///
/// Noise samples are drawn as unit-variance deviates scaled by the noise
/// standard deviation, so scenes generated from the same RNG state at
/// different SNRs share all underlying randomness.
pub fn generate_scene(
    config: &SimConfig,
    physical: &ArrayParams,
    rng: &mut impl Rng,
) -> Result<Scene> {
    config.validate()?;
    if physical.n_antennas() != config.n_antennas {
        return Err(Error::dimension(format!(
            "config expects {} antennas, array has {}",
            config.n_antennas,
            physical.n_antennas()
        )));
    }
    let thetas = draw_thetas(config, rng)?;
    let a = crate::array::steering_matrix(physical, &thetas)?;

    let m = config.n_sources;
    let t = config.n_snapshots;
    let mut sources = DMatrix::zeros(m, t);
    for j in 0..t {
        for i in 0..m {
            sources[(i, j)] = complex_gaussian(rng, config.source_power);
        }
    }
    let noise_var = config.noise_variance();
    let mut x = a * sources;
    for j in 0..t {
        for i in 0..config.n_antennas {
            x[(i, j)] += complex_gaussian(rng, noise_var);
        }
    }
    Ok(Scene {
        thetas,
        snapshots: x,
    })
}

/// Generate `n_scenes` independent scenes sharing one physical array.
///
/// Child seeds are drawn from `rng` in scene order and each scene is
/// generated from its own ChaCha stream, so the output is identical
/// whether scenes are built serially or in parallel.
pub fn generate_dataset(
    config: &SimConfig,
    physical: &ArrayParams,
    n_scenes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Scene>> {
    if n_scenes == 0 {
        return Err(Error::invalid("need at least one scene"));
    }
    config.validate()?;
    let seeds: Vec<u64> = (0..n_scenes).map(|_| rng.gen()).collect();
    seeds
        .into_par_iter()
        .map(|seed| {
            let mut child = ChaCha8Rng::seed_from_u64(seed);
            generate_scene(config, physical, &mut child)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::DirectionFn;
    use crate::subspace::sample_covariance;
    use crate::testutil::seeded_rng;

    fn nominal16() -> ArrayParams {
        ArrayParams::nominal_ula(16, 1.0, DirectionFn::Sin).unwrap()
    }

    #[test]
    fn zero_perturbation_returns_nominal() {
        let nominal = nominal16();
        let mut rng = seeded_rng(0);
        let out = sample_impaired_array(&nominal, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(out, nominal);
    }

    #[test]
    fn position_offsets_bounded_by_eta() {
        let nominal = nominal16();
        let eta = 0.5 * 1.0 / 2.0;
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let out = sample_impaired_array(&nominal, eta, 0.36, &mut rng).unwrap();
            for (p, q) in out.positions.iter().zip(&nominal.positions) {
                assert!((p - q).abs() <= eta + 1e-15);
            }
        }
    }

    #[test]
    fn gain_perturbation_moments() {
        let nominal = ArrayParams::nominal_ula(2, 1.0, DirectionFn::Sin).unwrap();
        let gain_var = 0.36;
        let mut rng = seeded_rng(2);
        let n_draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_draws {
            let out = sample_impaired_array(&nominal, 0.0, gain_var, &mut rng).unwrap();
            let delta_re = out.gains[0].re - 1.0;
            sum += delta_re;
            sum_sq += delta_re * delta_re;
        }
        let mean = sum / n_draws as f64;
        let var = sum_sq / n_draws as f64 - mean * mean;
        assert!((var - gain_var / 2.0).abs() < 0.03 * (gain_var / 2.0), "var {var}");
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn snr_formula() {
        let config = SimConfig {
            snr_db: 30.0,
            source_power: 1.0,
            ..SimConfig::default()
        };
        assert!((config.noise_variance() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn scene_is_deterministic_given_seed() {
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 2,
            n_snapshots: 16,
            ..SimConfig::default()
        };
        let physical = ArrayParams::nominal_ula(8, 1.0, DirectionFn::Sin).unwrap();
        let a = generate_scene(&config, &physical, &mut seeded_rng(42)).unwrap();
        let b = generate_scene(&config, &physical, &mut seeded_rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thetas_sorted_separated_and_in_range() {
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 4,
            n_snapshots: 4,
            ..SimConfig::default()
        };
        let physical = ArrayParams::nominal_ula(8, 1.0, DirectionFn::Sin).unwrap();
        let mut rng = seeded_rng(7);
        for _ in 0..100 {
            let scene = generate_scene(&config, &physical, &mut rng).unwrap();
            for w in scene.thetas.windows(2) {
                assert!(w[1] - w[0] > config.min_separation);
            }
            for &t in &scene.thetas {
                assert!(t >= config.doa_low && t <= config.doa_high);
            }
        }
    }

    #[test]
    fn rejection_sampling_gives_up_on_impossible_separation() {
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 4,
            n_snapshots: 4,
            min_separation: 2.0, // wider than the whole DoA range
            ..SimConfig::default()
        };
        let physical = ArrayParams::nominal_ula(8, 1.0, DirectionFn::Sin).unwrap();
        let res = generate_scene(&config, &physical, &mut seeded_rng(0));
        assert!(matches!(res, Err(Error::DegenerateDoas { .. })));
    }

    #[test]
    fn noiseless_single_source_covariance_approaches_rank_one() {
        let config = SimConfig {
            n_antennas: 8,
            n_sources: 1,
            n_snapshots: 100_000,
            snr_db: 300.0, // effectively noiseless
            min_separation: 0.0,
            ..SimConfig::default()
        };
        let physical = ArrayParams::nominal_ula(8, 1.0, DirectionFn::Sin).unwrap();
        let scene = generate_scene(&config, &physical, &mut seeded_rng(3)).unwrap();
        let gamma = sample_covariance(&scene.snapshots);
        let a = crate::array::steering_vector(&physical, scene.thetas[0]).unwrap();
        let model = &a * a.adjoint() * Complex64::new(config.source_power, 0.0);
        let rel = (&gamma - &model).norm() / model.norm();
        assert!(rel < 0.02, "relative deviation {rel}");

        // Per-antenna signal power matches sigma_s^2 |a_i|^2.
        for i in 0..8 {
            let emp = gamma[(i, i)].re;
            let want = config.source_power * a[i].norm_sqr();
            assert!((emp - want).abs() < 0.05 * want, "antenna {i}: {emp} vs {want}");
        }
    }

    #[test]
    fn sources_uncorrelated_across_large_t() {
        let config = SimConfig {
            n_antennas: 4,
            n_sources: 2,
            n_snapshots: 100_000,
            snr_db: 300.0,
            ..SimConfig::default()
        };
        // With two unit-power sources and negligible noise, off-diagonal
        // source correlation shows up directly in the antenna covariance
        // reconstructed in the steering basis; check the empirical source
        // covariance instead by regenerating the source block.
        let mut rng = seeded_rng(9);
        let m = config.n_sources;
        let t = config.n_snapshots;
        let mut s = DMatrix::zeros(m, t);
        for j in 0..t {
            for i in 0..m {
                s[(i, j)] = complex_gaussian(&mut rng, config.source_power);
            }
        }
        let gamma_s = &s * s.adjoint() / Complex64::new(t as f64, 0.0);
        assert!(gamma_s[(0, 1)].norm() < 0.05 * config.source_power);
    }

    #[test]
    fn dataset_helpers() {
        let config = SimConfig {
            n_antennas: 6,
            n_sources: 2,
            n_snapshots: 8,
            ..SimConfig::default()
        };
        let physical = ArrayParams::nominal_ula(6, 1.0, DirectionFn::Sin).unwrap();
        let single = generate_dataset(&config, &physical, 1, &mut seeded_rng(5)).unwrap();
        assert_eq!(single.len(), 1);

        let a = generate_dataset(&config, &physical, 4, &mut seeded_rng(5)).unwrap();
        let b = generate_dataset(&config, &physical, 4, &mut seeded_rng(5)).unwrap();
        let c = generate_dataset(&config, &physical, 4, &mut seeded_rng(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
