//! Short training run of the conditional denoiser on box-world data, then a
//! paired comparison: Heun samples conditioned on the radar stack vs the
//! same samples with the condition zeroed, scored by Chamfer distance
//! against the ground-truth cloud.
//!
//! ```bash
//! cargo run --release --example train_boxworld
//! ```
//!
//! Takes a minute or two; pass a step count to override the default 600.

use mmwave_sr::diffusion::{heun_sample, make_schedule};
use mmwave_sr::geom::{AngularFov, ImageGeometry};
use mmwave_sr::metrics::chamfer;
use mmwave_sr::model::{measure_data_std, train, ModelConfig, ToyDenoiser, TrainConfig, TrainSample};
use mmwave_sr::projection::{backproject, denormalize, interpret_sample, SAMPLE_INVALID_BELOW};
use mmwave_sr::rng::SeededRng;
use mmwave_sr::synth::{generate_dataset, BoxWorldParams};
use std::f64::consts::PI;

fn main() {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    let fov = AngularFov::new(-PI / 2.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, 0.5, 12.0).unwrap();
    let lidar_geom = ImageGeometry::new(128, 32, fov).unwrap();
    let radar_geom = ImageGeometry::new(16, 16, fov).unwrap();

    let pairs =
        generate_dataset(&lidar_geom, &radar_geom, 16, &BoxWorldParams::default(), 30, 1).unwrap();
    let holdout =
        generate_dataset(&lidar_geom, &radar_geom, 16, &BoxWorldParams::default(), 5, 2).unwrap();
    let dataset: Vec<TrainSample> = pairs
        .iter()
        .map(|p| TrainSample {
            x0: p.x0.values.clone(),
            cond: p.cond.clone(),
            mask: p.x0.valid.clone(),
        })
        .collect();

    let mut cfg = ModelConfig::desk_scale();
    cfg.data_std = measure_data_std(&dataset);
    let mut model = ToyDenoiser::new(cfg, &mut SeededRng::new(3)).unwrap();
    println!(
        "training {} parameters on {} scenes for {steps} steps...",
        model.param_count(),
        dataset.len()
    );
    let tc = TrainConfig {
        steps,
        seed: 4,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &dataset, &tc).unwrap();
    let first = &report.loss_curve[..20.min(report.loss_curve.len())];
    let last = &report.loss_curve[report.loss_curve.len().saturating_sub(20)..];
    let avg = |w: &[(usize, f64)]| w.iter().map(|(_, l)| l).sum::<f64>() / w.len() as f64;
    println!(
        "loss: {:.4} (first 20 steps) -> {:.4} (last 20 steps)",
        avg(first),
        avg(last)
    );

    let schedule = make_schedule(0.002, 80.0, 7.0, 32).unwrap();
    let shape = (lidar_geom.height, lidar_geom.width);
    println!("scene  CD conditioned  CD zeroed");
    let root = SeededRng::new(5);
    for (k, pair) in holdout.iter().enumerate() {
        let cd = |cond| -> f64 {
            let mut rng = root.child(k as u64);
            let raw = heun_sample(&model, &schedule, shape, cond, &mut rng).unwrap();
            let pred = interpret_sample(lidar_geom, &raw, SAMPLE_INVALID_BELOW).unwrap();
            let cloud = backproject(&denormalize(&pred), "world");
            chamfer(&cloud, &pair.scene.lidar).unwrap()
        };
        println!(
            "{k:<6} {:<15.3} {:.3}",
            cd(Some(&pair.cond)),
            cd(None)
        );
    }
}
