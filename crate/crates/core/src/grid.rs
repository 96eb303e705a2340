//! Uniform angular grids for spectrum evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, uniformly spaced angles (radians) spanning
/// `[low, high]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    angles: Vec<f64>,
    step: f64,
}

impl AngularGrid {
    /// `n` evenly spaced angles from `low` to `high` inclusive.
    pub fn linspace(low: f64, high: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {n}")));
        }
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::invalid(format!(
                "grid bounds must satisfy low < high, got [{low}, {high}]"
            )));
        }
        let step = (high - low) / (n - 1) as f64;
        let angles = (0..n).map(|i| low + i as f64 * step).collect();
        Ok(AngularGrid { angles, step })
    }

    /// Default evaluation grid: 18000 points over [-90 deg, +90 deg],
    /// a step of about 0.01 deg.
    pub fn default_grid() -> Self {
        let half = std::f64::consts::FRAC_PI_2;
        AngularGrid::linspace(-half, half, 18000).expect("default grid is valid")
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn low(&self) -> f64 {
        self.angles[0]
    }

    pub fn high(&self) -> f64 {
        *self.angles.last().unwrap()
    }

    /// Index of the grid point nearest to `angle`, if `angle` lies on the
    /// grid to within a millionth of a step.
    pub fn index_of(&self, angle: f64) -> Option<usize> {
        let idx = ((angle - self.low()) / self.step).round();
        if idx < 0.0 || idx >= self.angles.len() as f64 {
            return None;
        }
        let idx = idx as usize;
        ((self.angles[idx] - angle).abs() <= self.step * 1e-6).then_some(idx)
    }
}

/// Serializable recipe for an [`AngularGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lower bound, radians.
    pub low: f64,
    /// Upper bound, radians.
    pub high: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn to_grid(&self) -> Result<AngularGrid> {
        AngularGrid::linspace(self.low, self.high, self.points)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        let half = std::f64::consts::FRAC_PI_2;
        GridSpec {
            low: -half,
            high: half,
            points: 18000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_is_uniform_and_spans_bounds() {
        let grid = AngularGrid::linspace(-1.0, 1.0, 2001).unwrap();
        assert_eq!(grid.len(), 2001);
        assert_eq!(grid.low(), -1.0);
        assert!((grid.high() - 1.0).abs() < 1e-15);
        let step = grid.step();
        for w in grid.angles().windows(2) {
            assert!(((w[1] - w[0]) - step).abs() < 1e-12);
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn default_grid_shape() {
        let grid = AngularGrid::default_grid();
        assert_eq!(grid.len(), 18000);
        let step_deg = grid.step().to_degrees();
        assert!((step_deg - 0.01).abs() < 1e-4);
    }

    #[test]
    fn index_of_finds_grid_points() {
        let grid = AngularGrid::linspace(-1.0, 1.0, 101).unwrap();
        for (i, &a) in grid.angles().iter().enumerate() {
            assert_eq!(grid.index_of(a), Some(i));
        }
        assert_eq!(grid.index_of(grid.low() + grid.step() * 0.5), None);
        assert_eq!(grid.index_of(2.0), None);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(AngularGrid::linspace(0.0, 1.0, 1).is_err());
        assert!(AngularGrid::linspace(1.0, 0.0, 10).is_err());
        assert!(AngularGrid::linspace(0.0, 0.0, 10).is_err());
    }
}
