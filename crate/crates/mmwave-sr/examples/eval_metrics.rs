//! Point-cloud evaluation metrics on controlled perturbations: Chamfer
//! distance, modified Hausdorff distance, F-score, and the CDF table used
//! for distance-distribution plots.
//!
//! ```bash
//! cargo run --release --example eval_metrics
//! ```

use mmwave_sr::geom::{Point3, PointCloud};
use mmwave_sr::metrics::{cdf_export, evaluate, nn_distances};
use mmwave_sr::rng::SeededRng;

fn main() {
    let mut rng = SeededRng::new(41);
    let truth = PointCloud::new(
        (0..2000)
            .map(|_| {
                Point3::new(
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-1.0, 2.0),
                )
            })
            .collect(),
        "world",
    );

    println!("truth: {} points; predictions at increasing noise:", truth.len());
    println!("noise(m)  CD(m)     MHD(m)    P(%)    R(%)    F(%)");
    for noise in [0.0, 0.05, 0.15, 0.5] {
        let pred = PointCloud::new(
            truth
                .points
                .iter()
                .map(|p| {
                    Point3::new(
                        p.x + noise * rng.normal(),
                        p.y + noise * rng.normal(),
                        p.z + noise * rng.normal(),
                    )
                })
                .collect(),
            "world",
        );
        let rep = evaluate(&pred, &truth, 0.25).unwrap();
        println!(
            "{noise:<9} {:<9.4} {:<9.4} {:<7.1} {:<7.1} {:<7.1}",
            rep.cd, rep.mhd, rep.precision, rep.recall, rep.fscore
        );
    }

    // CDF of nearest-neighbor distances for the noisiest prediction.
    let pred = PointCloud::new(
        truth
            .points
            .iter()
            .map(|p| Point3::new(p.x + 0.2 * rng.normal(), p.y, p.z))
            .collect(),
        "world",
    );
    let d = nn_distances(&pred, &truth).unwrap();
    let rows = cdf_export(&d).unwrap();
    println!("\ndistance CDF (prediction -> truth), every 400th row:");
    println!("distance(m)  fraction");
    for (dist, frac) in rows.iter().step_by(400) {
        println!("{dist:<12.4} {frac:.3}");
    }
}
