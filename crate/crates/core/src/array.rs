//! Array parametrization, steering vectors, and their analytic partial
//! derivatives.
//!
//! An array is described by per-antenna complex gains `g`, scalar positions
//! `p` along the array axis (meters), and the carrier wavelength. The
//! steering vector toward angle `theta` is
//!
//! ```text
//!     a_i = g_i * exp(-j * (2*pi/lambda) * p_i * u(theta)) / ||g||_2
//! ```
//!
//! so it has unit Euclidean norm for any gain magnitudes. The direction
//! function `u` is configurable: `sin` (angle measured from broadside,
//! bijective on [-pi/2, pi/2]) or `cos` (angle measured from the array
//! axis). `sin` is the default because it leaves no +/-theta ambiguity
//! over the full DoA range.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Mapping from a DoA angle to the spatial frequency factor `u(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionFn {
    /// Broadside convention, `u(theta) = sin(theta)`.
    #[default]
    Sin,
    /// Axis convention, `u(theta) = cos(theta)`.
    Cos,
}

impl DirectionFn {
    #[inline]
    pub fn u(self, theta: f64) -> f64 {
        match self {
            DirectionFn::Sin => theta.sin(),
            DirectionFn::Cos => theta.cos(),
        }
    }
}

/// Physical parametrization of the array manifold: per-antenna complex
/// gains and axial positions, plus the carrier wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayParams {
    pub gains: Vec<Complex64>,
    /// Positions along the array axis, meters.
    pub positions: Vec<f64>,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    pub direction: DirectionFn,
}

impl ArrayParams {
    pub fn new(
        gains: Vec<Complex64>,
        positions: Vec<f64>,
        wavelength: f64,
        direction: DirectionFn,
    ) -> Result<Self> {
        let params = ArrayParams {
            gains,
            positions,
            wavelength,
            direction,
        };
        params.validate()?;
        Ok(params)
    }

    /// Nominal uniform linear array: antenna `i` at `i * lambda / 2` with
    /// unit gain.
    pub fn nominal_ula(n: usize, wavelength: f64, direction: DirectionFn) -> Result<Self> {
        let gains = vec![Complex64::new(1.0, 0.0); n];
        let positions = (0..n).map(|i| i as f64 * wavelength / 2.0).collect();
        ArrayParams::new(gains, positions, wavelength, direction)
    }

    pub fn n_antennas(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gains.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 antennas, got {n}")));
        }
        if self.positions.len() != n {
            return Err(Error::dimension(format!(
                "{} gains but {} positions",
                n,
                self.positions.len()
            )));
        }
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(Error::invalid(format!(
                "wavelength must be positive and finite, got {}",
                self.wavelength
            )));
        }
        if self
            .gains
            .iter()
            .any(|g| !g.re.is_finite() || !g.im.is_finite())
            || self.positions.iter().any(|p| !p.is_finite())
        {
            return Err(Error::invalid("non-finite gain or position".to_string()));
        }
        if self.gain_norm() == 0.0 {
            return Err(Error::ZeroGains);
        }
        Ok(())
    }

    /// Euclidean norm of the gain vector.
    pub fn gain_norm(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Number of real degrees of freedom: Re(g), Im(g), p per antenna.
    pub fn n_real_params(&self) -> usize {
        3 * self.n_antennas()
    }

    /// Flatten to the real parameter vector `[Re g | Im g | p]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.n_antennas();
        let mut flat = Vec::with_capacity(3 * n);
        flat.extend(self.gains.iter().map(|g| g.re));
        flat.extend(self.gains.iter().map(|g| g.im));
        flat.extend(self.positions.iter().copied());
        flat
    }

    /// Rebuild from a flat real parameter vector, keeping wavelength and
    /// direction convention.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let n = self.n_antennas();
        if flat.len() != 3 * n {
            return Err(Error::dimension(format!(
                "expected {} parameters, got {}",
                3 * n,
                flat.len()
            )));
        }
        let gains = (0..n)
            .map(|i| Complex64::new(flat[i], flat[n + i]))
            .collect();
        let positions = flat[2 * n..].to_vec();
        ArrayParams::new(gains, positions, self.wavelength, self.direction)
    }

    /// Remove the gauge freedoms of `self` relative to `reference`.
    ///
    /// The spectrum is invariant to a global position offset and to scaling
    /// all gains by any nonzero complex constant (the steering normalization
    /// absorbs the magnitude, the squared norm absorbs the phase). Parameter
    /// comparisons are only meaningful after removing both: positions are
    /// shifted so the mean offset to the reference vanishes, and gains are
    /// multiplied by the least-squares complex scalar
    /// `c = <g, g_ref> / ||g||^2`.
    pub fn gauge_align(&self, reference: &ArrayParams) -> Result<ArrayParams> {
        let n = self.n_antennas();
        if reference.n_antennas() != n {
            return Err(Error::dimension(format!(
                "cannot align {} antennas to reference with {}",
                n,
                reference.n_antennas()
            )));
        }
        let offset = self
            .positions
            .iter()
            .zip(&reference.positions)
            .map(|(p, r)| p - r)
            .sum::<f64>()
            / n as f64;
        let positions = self.positions.iter().map(|p| p - offset).collect();

        let num: Complex64 = self
            .gains
            .iter()
            .zip(&reference.gains)
            .map(|(g, r)| g.conj() * r)
            .sum();
        let den: f64 = self.gains.iter().map(|g| g.norm_sqr()).sum();
        let scale = if den > 0.0 {
            num / den
        } else {
            Complex64::new(1.0, 0.0)
        };
        let gains = self.gains.iter().map(|g| g * scale).collect();
        ArrayParams::new(gains, positions, self.wavelength, self.direction)
    }
}

/// Per-antenna absolute errors after gauge alignment: `(|p - p_ref|,
/// |g - g_ref|)` for each antenna.
pub fn param_errors(aligned: &ArrayParams, reference: &ArrayParams) -> (Vec<f64>, Vec<f64>) {
    let pos = aligned
        .positions
        .iter()
        .zip(&reference.positions)
        .map(|(p, r)| (p - r).abs())
        .collect();
    let gain = aligned
        .gains
        .iter()
        .zip(&reference.gains)
        .map(|(g, r)| (g - r).norm())
        .collect();
    (pos, gain)
}

fn check_theta(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta.abs() > FRAC_PI_2 + 1e-12 {
        return Err(Error::invalid(format!(
            "DoA angle {theta} rad outside [-pi/2, pi/2]"
        )));
    }
    Ok(())
}

/// Steering vector toward `theta` (radians), unit Euclidean norm.
pub fn steering_vector(params: &ArrayParams, theta: f64) -> Result<DVector<Complex64>> {
    check_theta(theta)?;
    let norm = params.gain_norm();
    if norm == 0.0 {
        return Err(Error::ZeroGains);
    }
    let u = params.direction.u(theta);
    let c = 2.0 * PI / params.wavelength;
    let entries: Vec<Complex64> = params
        .gains
        .iter()
        .zip(&params.positions)
        .map(|(g, p)| g * Complex64::from_polar(1.0, -c * p * u) / norm)
        .collect();
    Ok(DVector::from_vec(entries))
}

/// Steering matrix: column `i` is `steering_vector(params, thetas[i])`.
pub fn steering_matrix(params: &ArrayParams, thetas: &[f64]) -> Result<DMatrix<Complex64>> {
    if thetas.is_empty() {
        return Err(Error::invalid("steering matrix needs at least one angle"));
    }
    let n = params.n_antennas();
    let mut mat = DMatrix::zeros(n, thetas.len());
    for (j, &theta) in thetas.iter().enumerate() {
        let col = steering_vector(params, theta)?;
        mat.set_column(j, &col);
    }
    Ok(mat)
}

/// Partial derivatives of the steering vector with respect to every real
/// parameter. Row `k` holds the derivative of the whole vector with
/// respect to parameter `k` (so `d_position[(k, i)]` is the derivative of
/// entry `i` with respect to `p_k`, zero off the diagonal).
#[derive(Debug, Clone)]
pub struct SteeringJacobian {
    pub d_re_gain: DMatrix<Complex64>,
    pub d_im_gain: DMatrix<Complex64>,
    pub d_position: DMatrix<Complex64>,
}

/// Analytic Jacobian of [`steering_vector`] at `theta`.
///
/// The position partials are diagonal because the normalization does not
/// depend on `p`; the gain partials couple all entries through the
/// `1/||g||_2` factor.
pub fn steering_jacobian(params: &ArrayParams, theta: f64) -> Result<SteeringJacobian> {
    check_theta(theta)?;
    let n = params.n_antennas();
    let norm = params.gain_norm();
    if norm == 0.0 {
        return Err(Error::ZeroGains);
    }
    let u = params.direction.u(theta);
    let c = 2.0 * PI / params.wavelength;
    let norm_sq = norm * norm;

    let phases: Vec<Complex64> = params
        .positions
        .iter()
        .map(|p| Complex64::from_polar(1.0, -c * p * u))
        .collect();
    let entries: Vec<Complex64> = params
        .gains
        .iter()
        .zip(&phases)
        .map(|(g, e)| g * e / norm)
        .collect();

    let mut d_re = DMatrix::zeros(n, n);
    let mut d_im = DMatrix::zeros(n, n);
    let mut d_p = DMatrix::zeros(n, n);
    let j = Complex64::new(0.0, 1.0);
    for k in 0..n {
        let re_k = params.gains[k].re;
        let im_k = params.gains[k].im;
        for i in 0..n {
            // d a_i / d Re(g_k) = delta_ik * e_i / ||g|| - a_i * Re(g_k) / ||g||^2
            let direct = if i == k {
                phases[i] / norm
            } else {
                Complex64::new(0.0, 0.0)
            };
            d_re[(k, i)] = direct - entries[i] * (re_k / norm_sq);
            d_im[(k, i)] = direct * j - entries[i] * (im_k / norm_sq);
        }
        // d a_k / d p_k = -j * (2*pi/lambda) * u * a_k; other entries fixed.
        d_p[(k, k)] = -j * c * u * entries[k];
    }

    Ok(SteeringJacobian {
        d_re_gain: d_re,
        d_im_gain: d_im,
        d_position: d_p,
    })
}

/// Real-valued gradient of a scalar with respect to all `3N` array
/// parameters, kept in the `[Re g | Im g | p]` block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub re_gain: Vec<f64>,
    pub im_gain: Vec<f64>,
    pub position: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(n: usize) -> Self {
        ParamGradient {
            re_gain: vec![0.0; n],
            im_gain: vec![0.0; n],
            position: vec![0.0; n],
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.re_gain.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(3 * self.re_gain.len());
        flat.extend_from_slice(&self.re_gain);
        flat.extend_from_slice(&self.im_gain);
        flat.extend_from_slice(&self.position);
        flat
    }

    /// `self += scale * other`, blockwise.
    pub fn add_scaled(&mut self, other: &ParamGradient, scale: f64) {
        for (a, b) in self.re_gain.iter_mut().zip(&other.re_gain) {
            *a += scale * b;
        }
        for (a, b) in self.im_gain.iter_mut().zip(&other.im_gain) {
            *a += scale * b;
        }
        for (a, b) in self.position.iter_mut().zip(&other.position) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .re_gain
            .iter_mut()
            .chain(self.im_gain.iter_mut())
            .chain(self.position.iter_mut())
        {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re_gain
            .iter()
            .chain(self.im_gain.iter())
            .chain(self.position.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct AntennaRecord {
    re_gain: f64,
    im_gain: f64,
    position: f64,
}

#[derive(Serialize, Deserialize)]
struct ArrayParamsDoc {
    wavelength: f64,
    #[serde(default)]
    direction: DirectionFn,
    antennas: Vec<AntennaRecord>,
}

impl Serialize for ArrayParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = ArrayParamsDoc {
            wavelength: self.wavelength,
            direction: self.direction,
            antennas: self
                .gains
                .iter()
                .zip(&self.positions)
                .map(|(g, p)| AntennaRecord {
                    re_gain: g.re,
                    im_gain: g.im,
                    position: *p,
                })
                .collect(),
        };
        doc.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ArrayParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = ArrayParamsDoc::deserialize(deserializer)?;
        let gains = doc
            .antennas
            .iter()
            .map(|a| Complex64::new(a.re_gain, a.im_gain))
            .collect();
        let positions = doc.antennas.iter().map(|a| a.position).collect();
        ArrayParams::new(gains, positions, doc.wavelength, doc.direction)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_diff_vec, max_rel_err_complex, seeded_rng, random_params};
    use proptest::prelude::*;
    use rand::Rng;

    fn ula16() -> ArrayParams {
        ArrayParams::nominal_ula(16, 1.0, DirectionFn::Sin).unwrap()
    }

    #[test]
    fn zero_phase_direction_returns_normalized_gains() {
        // u(0) = 0 under the sin convention: all exponentials are 1.
        let params = ArrayParams::new(
            vec![
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(1.0, -1.0),
            ],
            vec![0.0, 0.3, 0.9],
            0.75,
            DirectionFn::Sin,
        )
        .unwrap();
        let a = steering_vector(&params, 0.0).unwrap();
        let norm = params.gain_norm();
        for (ai, gi) in a.iter().zip(&params.gains) {
            assert!((ai - gi / norm).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_vector_has_unit_norm() {
        let params = ula16();
        for &theta in &[-1.2, -0.3, 0.0, 0.7, 1.5] {
            let a = steering_vector(&params, theta).unwrap();
            assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_antenna_quarter_wave_case() {
        // g = [1, 1], p = [0, lambda/2], u = 0.5 gives a = (1/sqrt(2)) [1, -j].
        let lambda = 2.0;
        let params = ArrayParams::new(
            vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)],
            vec![0.0, lambda / 2.0],
            lambda,
            DirectionFn::Sin,
        )
        .unwrap();
        let theta = 0.5f64.asin(); // u(theta) = 0.5
        let a = steering_vector(&params, theta).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert!((a[0] - Complex64::new(s, 0.0)).norm() < 1e-12);
        assert!((a[1] - Complex64::new(0.0, -s)).norm() < 1e-12);
    }

    #[test]
    fn all_zero_gains_rejected() {
        let params = ArrayParams {
            gains: vec![Complex64::new(0.0, 0.0); 4],
            positions: vec![0.0, 0.5, 1.0, 1.5],
            wavelength: 1.0,
            direction: DirectionFn::Sin,
        };
        assert!(matches!(
            steering_vector(&params, 0.1),
            Err(Error::ZeroGains)
        ));
        assert!(matches!(
            steering_jacobian(&params, 0.1),
            Err(Error::ZeroGains)
        ));
    }

    #[test]
    fn steering_matrix_stacks_columns() {
        let params = ula16();
        let thetas = [0.2, 0.2, -0.4];
        let mat = steering_matrix(&params, &thetas).unwrap();
        assert_eq!(mat.ncols(), 3);
        for (j, &theta) in thetas.iter().enumerate() {
            let col = steering_vector(&params, theta).unwrap();
            assert_eq!(mat.column(j), col.column(0));
            assert!((mat.column(j).norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(mat.column(0), mat.column(1));
        assert!(steering_matrix(&params, &[]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        for _ in 0..100 {
            let params = random_params(&mut rng, 6);
            let theta: f64 = rng.gen_range(-1.4..1.4);
            let jac = steering_jacobian(&params, theta).unwrap();
            let flat = params.to_flat();
            let n = params.n_antennas();
            for k in 0..3 * n {
                let fd = central_diff_vec(&flat, k, 1e-6, |f| {
                    steering_vector(&params.from_flat(f).unwrap(), theta)
                        .unwrap()
                        .as_slice()
                        .to_vec()
                });
                let block = match k / n {
                    0 => jac.d_re_gain.row(k % n),
                    1 => jac.d_im_gain.row(k % n),
                    _ => jac.d_position.row(k % n),
                };
                let analytic: Vec<Complex64> = block.iter().copied().collect();
                let err = max_rel_err_complex(&analytic, &fd);
                assert!(err < 1e-5, "param {k}: rel err {err}");
            }
        }
    }

    #[test]
    fn position_partials_vanish_at_zero_u() {
        // With the sin convention u(0) = 0, so phases do not depend on p.
        let params = ula16();
        let jac = steering_jacobian(&params, 0.0).unwrap();
        assert!(jac.d_position.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn position_partials_are_diagonal() {
        let mut rng = seeded_rng(3);
        let params = random_params(&mut rng, 5);
        let jac = steering_jacobian(&params, 0.8).unwrap();
        for k in 0..5 {
            for i in 0..5 {
                if k != i {
                    assert_eq!(jac.d_position[(k, i)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = seeded_rng(11);
        let params = random_params(&mut rng, 9);
        let text = serde_json::to_string(&params).unwrap();
        let back: ArrayParams = serde_json::from_str(&text).unwrap();
        assert_eq!(params.wavelength.to_bits(), back.wavelength.to_bits());
        for (a, b) in params.gains.iter().zip(&back.gains) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        for (a, b) in params.positions.iter().zip(&back.positions) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(params.direction, back.direction);
    }

    #[test]
    fn gauge_align_recovers_shift_and_scale() {
        let mut rng = seeded_rng(23);
        let truth = random_params(&mut rng, 8);
        let scale = Complex64::from_polar(1.7, 2.1);
        let shifted = ArrayParams::new(
            truth.gains.iter().map(|g| g * scale).collect(),
            truth.positions.iter().map(|p| p + 0.37).collect(),
            truth.wavelength,
            truth.direction,
        )
        .unwrap();
        let aligned = shifted.gauge_align(&truth).unwrap();
        let (pos_err, gain_err) = param_errors(&aligned, &truth);
        assert!(pos_err.iter().all(|&e| e < 1e-12));
        assert!(gain_err.iter().all(|&e| e < 1e-12));
    }

    proptest! {
        #[test]
        fn unit_norm_for_random_arrays(seed in 0u64..500, theta in -1.5f64..1.5) {
            let mut rng = seeded_rng(seed);
            let params = random_params(&mut rng, 6);
            let a = steering_vector(&params, theta).unwrap();
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn unit_phase_covariance(seed in 0u64..200, phase in 0.0f64..6.28, theta in -1.5f64..1.5) {
            let mut rng = seeded_rng(seed);
            let params = random_params(&mut rng, 5);
            let c = Complex64::from_polar(1.0, phase);
            let scaled = ArrayParams::new(
                params.gains.iter().map(|g| g * c).collect(),
                params.positions.clone(),
                params.wavelength,
                params.direction,
            ).unwrap();
            let a = steering_vector(&params, theta).unwrap();
            let b = steering_vector(&scaled, theta).unwrap();
            for (ai, bi) in a.iter().zip(b.iter()) {
                prop_assert!((ai * c - bi).norm() < 1e-12);
            }
        }

        #[test]
        fn translation_covariance(seed in 0u64..200, delta in -2.0f64..2.0, theta in -1.5f64..1.5) {
            let mut rng = seeded_rng(seed);
            let params = random_params(&mut rng, 5);
            let moved = ArrayParams::new(
                params.gains.clone(),
                params.positions.iter().map(|p| p + delta).collect(),
                params.wavelength,
                params.direction,
            ).unwrap();
            let u = params.direction.u(theta);
            let c = Complex64::from_polar(1.0, -2.0 * PI / params.wavelength * delta * u);
            let a = steering_vector(&params, theta).unwrap();
            let b = steering_vector(&moved, theta).unwrap();
            for (ai, bi) in a.iter().zip(b.iter()) {
                prop_assert!((ai * c - bi).norm() < 1e-12);
            }
        }
    }
}
