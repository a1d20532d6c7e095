//! Dataset conditioning on a synthetic scene: shared-FOV crop, RANSAC
//! ground/ceiling removal with the Z-flip pass, and radar-guided DBSCAN
//! filtering of the LiDAR supervision.
//!
//! ```bash
//! cargo run --release --example preprocess_pipeline
//! ```

use mmwave_sr::geom::{AngularFov, ImageGeometry};
use mmwave_sr::preprocess::{
    radar_guided_filter, remove_ground_and_ceiling, shared_fov_crop, GroundRemovalParams,
};
use mmwave_sr::rng::SeededRng;
use mmwave_sr::synth::{generate_scene, BoxWorldParams};
use std::f64::consts::PI;

fn main() {
    let fov = AngularFov::new(-PI / 2.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, 0.5, 12.0).unwrap();
    let lidar_geom = ImageGeometry::new(128, 32, fov).unwrap();
    let mut rng = SeededRng::new(21);
    let scene = generate_scene(&lidar_geom, &BoxWorldParams::default(), &mut rng);
    println!(
        "scene: {} LiDAR points, {} radar points ({} ghosts)",
        scene.lidar.len(),
        scene.radar.len(),
        scene.radar_ghosts
    );

    let lidar = shared_fov_crop(&scene.lidar, &fov);
    let radar = shared_fov_crop(&scene.radar, &fov);
    println!(
        "after shared-FOV crop: {} LiDAR, {} radar",
        lidar.len(),
        radar.len()
    );

    let out = remove_ground_and_ceiling(&lidar, &GroundRemovalParams::default(), &mut rng).unwrap();
    println!(
        "ground/ceiling removal: -{} (first pass) -{} (flipped pass), {} planes, {} points left",
        out.removed_first_pass,
        out.removed_second_pass,
        out.planes.len(),
        out.cloud.len()
    );
    for (i, plane) in out.planes.iter().enumerate() {
        println!(
            "  plane {i}: normal ({:+.3}, {:+.3}, {:+.3}), offset {:+.3} m",
            plane.normal.x, plane.normal.y, plane.normal.z, plane.offset
        );
    }

    let filtered = radar_guided_filter(&out.cloud, &radar, 0.5, 5).unwrap();
    println!(
        "radar-guided filter: kept {}/{} LiDAR points (radar-supported clusters only)",
        filtered.len(),
        out.cloud.len()
    );
}
