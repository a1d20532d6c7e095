//! Seeded box-world scene generator: paired dense LiDAR / sparse noisy radar
//! clouds for training and evaluation without real sensors.
//!
//! A scene is a rectangular room around the sensor with a few axis-aligned
//! boxes and sometimes a bench-like slab in front. The "LiDAR" cloud is
//! ray-cast at one ray per LiDAR pixel center, so its range image is dense.
//! The "radar" cloud is a random subsample of the LiDAR hits with Gaussian
//! range jitter along each ray plus a fraction of ghost points placed
//! uniformly inside the FOV — the sparse, cluttered signal the pipeline is
//! supposed to repair.

use crate::geom::{ImageGeometry, Point3, PointCloud};
use crate::projection::{normalize, normalize_stack, project, slice_multichannel, NormalizedImage};
use crate::rng::SeededRng;
use crate::Result;
use ndarray::Array3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Distance along `dir` (unit) from the origin to where the ray *exits*
    /// this box, assuming the origin is inside.
    fn exit_distance(&self, dir: [f64; 3]) -> f64 {
        let mut t = f64::INFINITY;
        for ((&d, &lo), &hi) in dir.iter().zip(&self.min).zip(&self.max) {
            if d > 1e-12 {
                t = t.min(hi / d);
            } else if d < -1e-12 {
                t = t.min(lo / d);
            }
        }
        t
    }

    /// Distance along `dir` from the origin to where the ray *enters* this
    /// box, if it does (slab method).
    fn enter_distance(&self, dir: [f64; 3]) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for ((&d, &mn), &mx) in dir.iter().zip(&self.min).zip(&self.max) {
            if d.abs() < 1e-12 {
                if 0.0 < mn || 0.0 > mx {
                    return None;
                }
                continue;
            }
            let t0 = mn / d;
            let t1 = mx / d;
            let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

/// Scene composition parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoxWorldParams {
    /// Fraction of LiDAR hits kept as radar returns (exact count:
    /// `floor(ratio * n)`).
    pub radar_keep_ratio: f64,
    /// Std dev of radar range jitter along the ray, meters.
    pub range_jitter: f64,
    /// Ghost points added per kept radar return (exact count:
    /// `floor(rate * kept)`).
    pub ghost_rate: f64,
    pub boxes_min: usize,
    pub boxes_max: usize,
}

impl Default for BoxWorldParams {
    fn default() -> Self {
        BoxWorldParams {
            radar_keep_ratio: 0.08,
            range_jitter: 0.1,
            ghost_rate: 0.05,
            boxes_min: 2,
            boxes_max: 4,
        }
    }
}

/// One generated scene with its ground-truth geometry.
#[derive(Debug, Clone)]
pub struct BoxWorldScene {
    pub lidar: PointCloud,
    pub radar: PointCloud,
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    /// Radar returns originating from real surfaces.
    pub radar_real: usize,
    /// Trailing ghost points in `radar`.
    pub radar_ghosts: usize,
}

fn direction(theta: f64, phi: f64) -> [f64; 3] {
    [phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()]
}

/// Ray-casts one scene. The sensor sits at the origin of the `world` frame,
/// 1.2 m above the floor.
pub fn generate_scene(
    lidar_geom: &ImageGeometry,
    params: &BoxWorldParams,
    rng: &mut SeededRng,
) -> BoxWorldScene {
    let fov = &lidar_geom.fov;
    let room = Aabb {
        min: [-1.0, -rng.uniform(3.0, 6.0), -1.2],
        max: [rng.uniform(3.5, 9.0), rng.uniform(3.0, 6.0), 1.8],
    };
    let n_boxes = params.boxes_min + rng.index(params.boxes_max - params.boxes_min + 1);
    let mut boxes = Vec::with_capacity(n_boxes + 1);
    for _ in 0..n_boxes {
        let cx = rng.uniform(1.5, (room.max[0] - 0.5).max(2.0));
        let cy = rng.uniform(room.min[1] + 0.5, room.max[1] - 0.5);
        let sx = rng.uniform(0.3, 1.2);
        let sy = rng.uniform(0.3, 1.2);
        let height = rng.uniform(0.5, 2.2);
        boxes.push(Aabb {
            min: [cx - sx / 2.0, cy - sy / 2.0, room.min[2]],
            max: [cx + sx / 2.0, cy + sy / 2.0, room.min[2] + height],
        });
    }
    if rng.bernoulli(0.5) {
        // Bench: a thin floating slab, top 0.8 m above the floor.
        let cx = rng.uniform(1.5, 4.0);
        let cy = rng.uniform(-2.0, 2.0);
        boxes.push(Aabb {
            min: [cx - 0.8, cy - 0.25, room.min[2] + 0.65],
            max: [cx + 0.8, cy + 0.25, room.min[2] + 0.8],
        });
    }

    // Dense LiDAR: one ray per pixel center.
    let mut lidar_points = Vec::with_capacity(lidar_geom.height * lidar_geom.width);
    for row in 0..lidar_geom.height {
        for col in 0..lidar_geom.width {
            let theta = fov.theta_min + (col as f64 + 0.5) * lidar_geom.theta_bin();
            let phi = fov.phi_min + (row as f64 + 0.5) * lidar_geom.phi_bin();
            let dir = direction(theta, phi);
            let mut t = room.exit_distance(dir);
            for b in &boxes {
                if let Some(enter) = b.enter_distance(dir) {
                    t = t.min(enter);
                }
            }
            if t >= fov.r_min && t < fov.r_max {
                lidar_points.push(Point3::new(dir[0] * t, dir[1] * t, dir[2] * t));
            }
        }
    }

    // Sparse radar: exact-count subsample with range jitter, then ghosts.
    let n_keep = (params.radar_keep_ratio * lidar_points.len() as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..lidar_points.len()).collect();
    for i in (1..indices.len()).rev() {
        indices.swap(i, rng.index(i + 1));
    }
    indices.truncate(n_keep);
    indices.sort_unstable();
    let mut radar_points = Vec::with_capacity(n_keep);
    for &i in &indices {
        let p = lidar_points[i];
        let r = p.range();
        let jittered = (r + params.range_jitter * rng.normal()).max(1e-3);
        let scale = jittered / r;
        radar_points.push(Point3::new(p.x * scale, p.y * scale, p.z * scale));
    }
    let n_ghosts = (params.ghost_rate * n_keep as f64).floor() as usize;
    for _ in 0..n_ghosts {
        let theta = rng.uniform(fov.theta_min, fov.theta_max);
        let phi = rng.uniform(fov.phi_min, fov.phi_max);
        let r = rng.uniform(fov.r_min, fov.r_max);
        let dir = direction(theta, phi);
        radar_points.push(Point3::new(dir[0] * r, dir[1] * r, dir[2] * r));
    }

    BoxWorldScene {
        lidar: PointCloud::new(lidar_points, "world"),
        radar: PointCloud::new(radar_points, "world"),
        room,
        boxes,
        radar_real: n_keep,
        radar_ghosts: n_ghosts,
    }
}

/// A scene projected into its training pair.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub scene: BoxWorldScene,
    /// Normalized LiDAR range image (the diffusion target).
    pub x0: NormalizedImage,
    /// Normalized radar multi-channel stack (the condition tensor).
    pub cond: Array3<f64>,
}

/// Generates `n_scenes` scenes deterministically from `seed` (one child RNG
/// stream per scene) and projects each into its `(x0, cond)` pair.
pub fn generate_dataset(
    lidar_geom: &ImageGeometry,
    radar_geom: &ImageGeometry,
    channels: usize,
    params: &BoxWorldParams,
    n_scenes: usize,
    seed: u64,
) -> Result<Vec<ScenePair>> {
    let root = SeededRng::new(seed);
    let mut out = Vec::with_capacity(n_scenes);
    for k in 0..n_scenes {
        let mut rng = root.child(k as u64);
        let scene = generate_scene(lidar_geom, params, &mut rng);
        out.push(pair_from_scene(scene, lidar_geom, radar_geom, channels)?);
    }
    Ok(out)
}

/// Projects one scene into its training pair.
pub fn pair_from_scene(
    scene: BoxWorldScene,
    lidar_geom: &ImageGeometry,
    radar_geom: &ImageGeometry,
    channels: usize,
) -> Result<ScenePair> {
    let (lidar_img, _) = project(&scene.lidar, lidar_geom)?;
    let (radar_multi, _) = slice_multichannel(&scene.radar, radar_geom, channels)?;
    Ok(ScenePair {
        x0: normalize(&lidar_img),
        cond: normalize_stack(&radar_multi),
        scene,
    })
}
