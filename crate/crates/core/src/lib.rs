//! Direction-of-arrival estimation with the MUSIC algorithm, plus
//! gradient-based learning of antenna-array hardware impairments
//! (per-antenna complex gains and axial positions) through a
//! differentiable variant of the peak readout.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`array`] — array parametrization, steering vectors, and their
//!   analytic partial derivatives,
//! * [`sim`] — impaired-array and measurement simulation,
//! * [`subspace`] — sample covariance and signal/noise subspace separation,
//! * [`music`] — pseudo-spectrum evaluation and hard peak picking,
//! * [`diffmusic`] — softmax-relaxed, differentiable DoA estimates,
//! * [`loss`] — supervised and unsupervised calibration objectives,
//! * [`train`] — mini-batch gradient descent over the array parameters,
//! * [`io`] — dataset and checkpoint file formats.

pub mod array;
pub mod diffmusic;
pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod music;
pub mod sim;
pub mod subspace;
#[doc(hidden)]
pub mod testutil;
pub mod train;

pub use array::{ArrayParams, DirectionFn, ParamGradient, SteeringJacobian};
pub use diffmusic::{AngularMask, DiffEstimate};
pub use error::{Error, Result};
pub use grid::{AngularGrid, GridSpec};
pub use io::{Checkpoint, Dataset};
pub use loss::LossValue;
pub use music::Spectrum;
pub use sim::{Scene, SimConfig, SnapshotMatrix};
pub use subspace::{EigenDecomposition, NoiseSubspace};
pub use train::{Estimator, LossKind, OptimizerKind, TrainConfig, TrainReport};
