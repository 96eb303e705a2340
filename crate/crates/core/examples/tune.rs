// Scratch harness for sizing Monte-Carlo brackets and training
// hyperparameters. Not part of the deliverable surface.

use doacal_core::array::{param_errors, ArrayParams, DirectionFn};
use doacal_core::grid::{AngularGrid, GridSpec};
use doacal_core::sim::{generate_dataset, sample_impaired_array, SimConfig};
use doacal_core::train::{evaluate, train, Estimator, LossKind, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "m1".into());
    match which.as_str() {
        "m1" => m1(),
        "m5" => m5(),
        "slp" => slp(),
        "ul" => ul(),
        _ => eprintln!("unknown mode"),
    }
}

fn setup(seed: u64) -> (ArrayParams, ArrayParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nominal = ArrayParams::nominal_ula(16, 1.0, DirectionFn::Sin).unwrap();
    let physical = sample_impaired_array(&nominal, 0.25, 0.36, &mut rng).unwrap();
    (nominal, physical)
}

fn m1() {
    let (nominal, physical) = setup(100);
    let config = SimConfig {
        n_sources: 1,
        ..Default::default()
    };
    let grid = AngularGrid::default_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let t0 = Instant::now();
    let scenes = generate_dataset(&config, &physical, 1000, &mut rng).unwrap();
    println!("simulate: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let r_nom = evaluate(&scenes, &nominal, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("nominal MUSIC M=1: {r_nom:.4} deg  ({:?})", t0.elapsed());
    let r_phy = evaluate(&scenes, &physical, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("physical MUSIC M=1: {r_phy:.4} deg");
    let r_dm = evaluate(&scenes, &physical, Estimator::DiffMusic, &grid, 8, 1.0).unwrap();
    println!("physical diffMUSIC(L=8) M=1: {r_dm:.4} deg");
    for l in [2, 4, 16, 32] {
        let r = evaluate(&scenes, &physical, Estimator::DiffMusic, &grid, l, 1.0).unwrap();
        println!("physical diffMUSIC(L={l}) M=1: {r:.4} deg");
    }
}

fn m5() {
    let (nominal, physical) = setup(100);
    let config = SimConfig::default();
    let grid = AngularGrid::default_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let scenes = generate_dataset(&config, &physical, 1000, &mut rng).unwrap();

    let t0 = Instant::now();
    let r_nom = evaluate(&scenes, &nominal, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("nominal MUSIC M=5: {r_nom:.4} deg ({:?})", t0.elapsed());
    let r_phy = evaluate(&scenes, &physical, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("physical MUSIC M=5: {r_phy:.4} deg");
    for l in [2, 4, 8, 16] {
        let r = evaluate(&scenes, &physical, Estimator::DiffMusic, &grid, l, 1.0).unwrap();
        println!("physical diffMUSIC(L={l}) M=5: {r:.4} deg");
    }
}

fn slp() {
    let (nominal, physical) = setup(100);
    let config = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let n_train: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(512);
    let epochs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);
    let lr: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let train_scenes = generate_dataset(&config, &physical, n_train, &mut rng).unwrap();
    let tconf = TrainConfig {
        loss: LossKind::SlP,
        epochs,
        batch_size: 32,
        lr_gain: lr,
        lr_pos: lr * 0.5,
        seed: 7,
        ..Default::default()
    };
    let t0 = Instant::now();
    let report = train(&train_scenes, &nominal, &tconf).unwrap();
    println!(
        "train sl_p: {:?}, best epoch {}, grid evals {}",
        t0.elapsed(),
        report.best_epoch,
        report.grid_evals
    );
    println!(
        "loss first/last: {:.4e} / {:.4e}",
        report.loss_trace[0],
        report.loss_trace.last().unwrap()
    );

    let aligned = report.final_params.gauge_align(&physical).unwrap();
    let (pos_err, gain_err) = param_errors(&aligned, &physical);
    println!("pos err (x lambda): {:?}", pos_err.iter().map(|e| (e * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("gain err: {:?}", gain_err.iter().map(|e| (e * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    let grid = AngularGrid::default_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let test = generate_dataset(&config, &physical, 500, &mut rng).unwrap();
    let r_learned = evaluate(&test, &report.final_params, Estimator::DiffMusic, &grid, 8, 1.0).unwrap();
    let r_phys = evaluate(&test, &physical, Estimator::DiffMusic, &grid, 8, 1.0).unwrap();
    let r_learned_m = evaluate(&test, &report.final_params, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("learned dM: {r_learned:.4} deg, physical dM: {r_phys:.4} deg, learned M: {r_learned_m:.4} deg, ratio {:.3}", r_learned / r_phys);
}

fn ul() {
    let (nominal, physical) = setup(100);
    let config = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let n_train: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(256);
    let epochs: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);
    let window: usize = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(15);
    let points: usize = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1800);
    let train_scenes = generate_dataset(&config, &physical, n_train, &mut rng).unwrap();
    let tconf = TrainConfig {
        loss: LossKind::Ul,
        epochs,
        batch_size: 32,
        lr_gain: 1e-3,
        lr_pos: 5e-4,
        window,
        grid: GridSpec {
            points,
            ..Default::default()
        },
        seed: 7,
        ..Default::default()
    };
    let t0 = Instant::now();
    let report = train(&train_scenes, &nominal, &tconf).unwrap();
    println!(
        "train ul: {:?}, best epoch {}, loss {:.4} -> {:.4}",
        t0.elapsed(),
        report.best_epoch,
        report.loss_trace[0],
        report.loss_trace.last().unwrap()
    );
    let aligned = report.final_params.gauge_align(&physical).unwrap();
    let (pos_err, gain_err) = param_errors(&aligned, &physical);
    println!("max pos err: {:.4}, max gain err: {:.4}",
        pos_err.iter().cloned().fold(0.0, f64::max),
        gain_err.iter().cloned().fold(0.0, f64::max));

    let grid = AngularGrid::default_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let test = generate_dataset(&config, &physical, 500, &mut rng).unwrap();
    let r_nom = evaluate(&test, &nominal, Estimator::Music, &grid, 1, 1.0).unwrap();
    let r_ul = evaluate(&test, &report.final_params, Estimator::Music, &grid, 1, 1.0).unwrap();
    println!("nominal M: {r_nom:.4} deg, UL-trained M: {r_ul:.4} deg, ratio {:.3}", r_ul / r_nom);
}
