//! Point cloud -> range image -> point cloud round trip.
//!
//! ```bash
//! cargo run --release --example project_roundtrip
//! ```

use mmwave_sr::geom::{AngularFov, ImageGeometry, Point3, PointCloud};
use mmwave_sr::projection::{backproject, project};
use mmwave_sr::rng::SeededRng;
use std::f64::consts::PI;

fn main() {
    let fov = AngularFov::new(-PI / 2.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, 0.5, 12.0).unwrap();
    let geom = ImageGeometry::new(512, 128, fov).unwrap();

    let mut rng = SeededRng::new(7);
    let points: Vec<Point3> = (0..5000)
        .map(|_| {
            let theta = rng.uniform(fov.theta_min, fov.theta_max);
            let phi = rng.uniform(fov.phi_min, fov.phi_max);
            let r = rng.uniform(fov.r_min, fov.r_max);
            Point3::new(
                r * phi.sin() * theta.cos(),
                r * phi.sin() * theta.sin(),
                r * phi.cos(),
            )
        })
        .collect();
    let cloud = PointCloud::new(points, "sensor");

    let (image, stats) = project(&cloud, &geom).unwrap();
    println!(
        "projected {} points into {}x{} image: {} valid pixels, {} collisions, {} dropped",
        cloud.len(),
        geom.height,
        geom.width,
        image.valid_count(),
        stats.collisions,
        stats.dropped
    );

    let back = backproject(&image, "sensor");
    let max_angle_err = back
        .points
        .iter()
        .map(|q| {
            cloud
                .points
                .iter()
                .map(|p| (q.azimuth() - p.azimuth()).abs() + (q.elevation() - p.elevation()).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max);
    println!(
        "back-projected {} points; worst angular deviation {:.5} rad \
         (bin sizes: {:.5} x {:.5} rad)",
        back.len(),
        max_angle_err,
        geom.theta_bin(),
        geom.phi_bin()
    );
}
