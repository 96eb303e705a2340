//! Mini-batch gradient descent over the array parameters, plus dataset
//! evaluation.
//!
//! Training starts from the nominal array and minimizes one of the three
//! calibration losses. Runs are deterministic given the dataset and
//! config: shuffling comes from a seeded stream and every reduction is
//! performed in scene order. A held-out validation split selects the
//! returned parameter snapshot; the untrained parameters participate as
//! the epoch-0 baseline, so a run that only hurts returns the
//! initialization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::array::ArrayParams;
use crate::error::{Error, Result};
use crate::grid::{AngularGrid, GridSpec};
use crate::loss::{
    loss_sl_p_prepared, loss_sl_theta_prepared, loss_ul_prepared, prepare_scenes, rmspe,
    LossValue, PreparedScene,
};
use crate::music::grid_eval_count;
use crate::sim::Scene;

/// Which calibration objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SlTheta,
    SlP,
    Ul,
}

/// Parameter update rule. `Adaptive` keeps first and second moment
/// estimates per parameter (step sizes stay bounded by the learning
/// rate regardless of gradient scale, which matters for the
/// spectrum-at-truth loss whose gradients span many orders of
/// magnitude).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adaptive,
}

/// DoA readout used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Music,
    DiffMusic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Step size for the gain parameters.
    pub lr_gain: f64,
    /// Step size for the position parameters (carries meters, so scale
    /// it with the wavelength).
    pub lr_pos: f64,
    /// diffMUSIC mask window.
    pub window: usize,
    /// Softmax temperature; 1 is the plain softmax.
    pub tau: f64,
    pub grid: GridSpec,
    pub seed: u64,
    /// Early stop after this many epochs without validation improvement;
    /// 0 disables early stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// Fraction of scenes held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    /// Adaptive updates, 100 epochs of batch 32, gain step 1e-3 and
    /// position step 1e-3 * lambda/2 for a unit wavelength.
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::SlP,
            epochs: 100,
            batch_size: 32,
            lr_gain: 1e-3,
            lr_pos: 1e-3 * 0.5,
            window: 8,
            tau: 1.0,
            grid: GridSpec::default(),
            seed: 1,
            patience: 0,
            optimizer: OptimizerKind::Adaptive,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr_gain > 0.0) || !(self.lr_pos > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("mask window must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of a training run. `final_params` is the snapshot with the
/// best validation metric (the initialization counts as epoch 0).
/// `epoch_seconds` is wall-clock diagnostics and is the one field that
/// is not reproducible byte-for-byte.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    /// Model-selection metric per epoch: validation RMSPE (radians) for
    /// the DoA loss, validation loss for the other two.
    pub val_metric_trace: Vec<f64>,
    /// Validation RMSPE in degrees where the loss path already pays for
    /// grid sweeps; `None` for the spectrum-at-truth loss, which never
    /// touches the grid.
    pub val_rmspe_deg_trace: Vec<Option<f64>>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
    pub final_params: ArrayParams,
    /// Process-wide full-grid spectrum evaluations observed during the
    /// run (exact when nothing else runs concurrently).
    pub grid_evals: u64,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: Vec<f64>,
    step: usize,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

const MOMENTUM_DECAY: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize, lr_gain: f64, lr_pos: f64) -> Self {
        let mut lr = vec![lr_gain; 3 * n];
        for v in lr.iter_mut().skip(2 * n) {
            *v = lr_pos;
        }
        Optimizer {
            kind,
            lr,
            step: 0,
            m1: vec![0.0; 3 * n],
            m2: vec![0.0; 3 * n],
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, &g), &lr) in params.iter_mut().zip(grad).zip(&self.lr) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum => {
                for (((p, &g), v), &lr) in
                    params.iter_mut().zip(grad).zip(&mut self.m1).zip(&self.lr)
                {
                    *v = MOMENTUM_DECAY * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adaptive => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for ((((p, &g), m), v), &lr) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.m1)
                    .zip(&mut self.m2)
                    .zip(&self.lr)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn batch_loss(
    kind: LossKind,
    batch: &[&PreparedScene],
    params: &ArrayParams,
    grid: Option<&AngularGrid>,
    m: usize,
    window: usize,
    tau: f64,
) -> Result<LossValue> {
    match kind {
        LossKind::SlTheta => {
            loss_sl_theta_prepared(batch, params, grid.expect("grid required"), window, tau)
        }
        LossKind::SlP => loss_sl_p_prepared(batch, params),
        LossKind::Ul => {
            loss_ul_prepared(batch, params, grid.expect("grid required"), m, window)
        }
    }
}

/// Mean RMSPE (radians) of prepared scenes under either estimator,
/// reusing the cached noise subspaces.
fn rmspe_prepared(
    scenes: &[&PreparedScene],
    params: &ArrayParams,
    grid: &AngularGrid,
    estimator: Estimator,
    window: usize,
    tau: f64,
) -> Result<f64> {
    let a_grid = crate::array::steering_matrix(params, grid.angles())?;
    let errors: Result<Vec<f64>> = scenes
        .par_iter()
        .map(|scene| {
            let m = scene.thetas.len();
            let spectrum = crate::music::spectrum_from_steering(&scene.noise, &a_grid, grid);
            let estimates = match estimator {
                Estimator::Music => {
                    let peaks = crate::music::find_peaks(&spectrum, m)?;
                    let mut angles = peaks.angles;
                    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    angles
                }
                Estimator::DiffMusic => {
                    crate::diffmusic::diffmusic_estimate(&spectrum, m, window, tau)?.thetas_hat
                }
            };
            rmspe(&scene.thetas, &estimates)
        })
        .collect();
    let errors = errors?;
    Ok(errors.iter().sum::<f64>() / errors.len().max(1) as f64)
}

/// Mean RMSPE over a dataset in degrees.
pub fn evaluate(
    dataset: &[Scene],
    params: &ArrayParams,
    estimator: Estimator,
    grid: &AngularGrid,
    window: usize,
    tau: f64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let m = dataset[0].n_sources();
    let prepared = prepare_scenes(dataset, m)?;
    let refs: Vec<&PreparedScene> = prepared.iter().collect();
    rmspe_prepared(&refs, params, grid, estimator, window, tau).map(|r| r.to_degrees())
}

/// Validation metric for model selection: RMSPE for the DoA loss (it is
/// the quantity being optimized), the loss itself otherwise. The
/// unsupervised loss deliberately selects on its own label-free value.
fn validation_metric(
    kind: LossKind,
    val: &[&PreparedScene],
    params: &ArrayParams,
    grid: Option<&AngularGrid>,
    m: usize,
    window: usize,
    tau: f64,
) -> Result<(f64, Option<f64>)> {
    match kind {
        LossKind::SlTheta => {
            let r = rmspe_prepared(
                val,
                params,
                grid.expect("grid required"),
                Estimator::DiffMusic,
                window,
                tau,
            )?;
            Ok((r, Some(r.to_degrees())))
        }
        LossKind::SlP => {
            let loss = loss_sl_p_prepared(val, params)?;
            Ok((loss.value, None))
        }
        LossKind::Ul => {
            let grid = grid.expect("grid required");
            let loss = loss_ul_prepared(val, params, grid, m, window)?;
            let r = rmspe_prepared(val, params, grid, Estimator::DiffMusic, window, tau)?;
            Ok((loss.value, Some(r.to_degrees())))
        }
    }
}

/// Solve the calibration problem by mini-batch gradient descent from the
/// nominal array.
pub fn train(dataset: &[Scene], nominal: &ArrayParams, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    nominal.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let m = dataset[0].n_sources();
    if m == 0 {
        return Err(Error::invalid("scenes carry no sources"));
    }
    if dataset.iter().any(|s| s.n_sources() != m) {
        return Err(Error::invalid("scenes disagree on the source count"));
    }

    let grid_evals_before = grid_eval_count();
    let needs_grid = config.loss != LossKind::SlP;
    let grid = if needs_grid {
        Some(config.grid.to_grid()?)
    } else {
        None
    };

    let prepared = prepare_scenes(dataset, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((prepared.len() as f64 * config.val_fraction).round() as usize)
        .min(prepared.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&PreparedScene> = val_idx.iter().map(|&i| &prepared[i]).collect();
    let mut train_order: Vec<usize> = train_idx.to_vec();
    // With no held-out scenes the training set doubles as validation.
    let val_set: Vec<&PreparedScene> = if val.is_empty() {
        train_order.iter().map(|&i| &prepared[i]).collect()
    } else {
        val
    };

    let mut flat = nominal.to_flat();
    let mut optimizer = Optimizer::new(
        config.optimizer,
        nominal.n_antennas(),
        config.lr_gain,
        config.lr_pos,
    );

    let (mut best_metric, _) = validation_metric(
        config.loss,
        &val_set,
        nominal,
        grid.as_ref(),
        m,
        config.window,
        config.tau,
    )?;
    let mut best_epoch = 0usize;
    let mut best_flat = flat.clone();

    let mut report = TrainReport {
        loss_trace: Vec::with_capacity(config.epochs),
        val_metric_trace: Vec::with_capacity(config.epochs),
        val_rmspe_deg_trace: Vec::with_capacity(config.epochs),
        epoch_seconds: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        final_params: nominal.clone(),
        grid_evals: 0,
    };

    for epoch in 1..=config.epochs {
        let tick = Instant::now();
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_index, chunk) in train_order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedScene> = chunk.iter().map(|&i| &prepared[i]).collect();
            let params = ArrayParams::new(
                (0..nominal.n_antennas())
                    .map(|i| {
                        num_complex::Complex64::new(flat[i], flat[nominal.n_antennas() + i])
                    })
                    .collect(),
                flat[2 * nominal.n_antennas()..].to_vec(),
                nominal.wavelength,
                nominal.direction,
            )?;
            let loss = batch_loss(
                config.loss,
                &batch,
                &params,
                grid.as_ref(),
                m,
                config.window,
                config.tau,
            )
            .map_err(|e| {
                Error::numerical(format!("epoch {epoch} batch {batch_index}: {e}"))
            })?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite loss or gradient at epoch {epoch} batch {batch_index}"
                )));
            }
            optimizer.update(&mut flat, &loss.grad.to_flat());
            epoch_loss += loss.value;
            n_batches += 1;
        }
        epoch_loss /= n_batches.max(1) as f64;

        let params = nominal.from_flat(&flat)?;
        let (metric, val_rmspe) = validation_metric(
            config.loss,
            &val_set,
            &params,
            grid.as_ref(),
            m,
            config.window,
            config.tau,
        )?;
        report.loss_trace.push(epoch_loss);
        report.val_metric_trace.push(metric);
        report.val_rmspe_deg_trace.push(val_rmspe);
        report.epoch_seconds.push(tick.elapsed().as_secs_f64());

        if metric < best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_flat = flat.clone();
        }
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            break;
        }
    }

    report.best_epoch = best_epoch;
    report.final_params = nominal.from_flat(&best_flat)?;
    report.grid_evals = grid_eval_count() - grid_evals_before;
    Ok(report)
}
