//! Dataset conditioning: shared-FOV cropping, ground/ceiling removal, and
//! radar-guided filtering of the LiDAR supervision.
//!
//! Floors and ceilings reflect mmWave poorly, so they are stripped from the
//! LiDAR clouds before training: a RANSAC fit removes the dominant
//! near-horizontal plane, then the Z axis is flipped and the fit runs again,
//! catching the ceiling with the same machinery. Objects the radar cannot see
//! at all are removed by clustering the combined radar+LiDAR cloud with
//! DBSCAN and keeping only LiDAR clusters that contain at least one radar
//! return.

use crate::geom::{AngularFov, Point3, PointCloud};
use crate::rng::SeededRng;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;

/// Keeps exactly the points inside `fov` (closed minima, open maxima).
/// Idempotent; order preserved.
pub fn shared_fov_crop(cloud: &PointCloud, fov: &AngularFov) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .copied()
        .filter(|p| fov.contains(p))
        .collect();
    PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
    }
}

/// Plane `n · p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: &Point3) -> f64 {
        (self.normal.dot(&p.to_vector()) + self.offset).abs()
    }
}

/// RANSAC horizontal-plane removal parameters.
#[derive(Debug, Clone, Copy)]
pub struct GroundRemovalParams {
    /// RANSAC iterations per pass.
    pub iterations: usize,
    /// Inlier distance threshold, meters.
    pub dist_tol: f64,
    /// Maximum angle between the plane normal and ±Z, degrees.
    pub angle_tol_deg: f64,
    /// Minimum plane support as a fraction of the input cloud size.
    pub min_inlier_frac: f64,
}

impl Default for GroundRemovalParams {
    fn default() -> Self {
        GroundRemovalParams {
            iterations: 200,
            dist_tol: 0.1,
            angle_tol_deg: 15.0,
            min_inlier_frac: 0.05,
        }
    }
}

/// Result of [`remove_ground_and_ceiling`].
#[derive(Debug, Clone)]
pub struct GroundRemovalOutcome {
    /// Residual cloud, original point order preserved.
    pub cloud: PointCloud,
    /// Points removed by the first (ground) pass.
    pub removed_first_pass: usize,
    /// Points removed by the flipped (ceiling) pass.
    pub removed_second_pass: usize,
    /// Planes removed, in the original (unflipped) frame.
    pub planes: Vec<PlaneModel>,
    /// Set when the cloud had fewer than 3 points and was returned unchanged.
    pub too_few_points: bool,
}

/// Removes the dominant near-horizontal plane, flips Z, and removes again.
///
/// Expects a gravity-aligned frame (Z up). A pass only removes anything when
/// the best plane has at least `min_inlier_frac` of the *input* cloud as
/// inliers, so residual clutter does not get eaten by spurious fits. No point
/// farther than `dist_tol` from a fitted plane is ever removed.
pub fn remove_ground_and_ceiling(
    cloud: &PointCloud,
    params: &GroundRemovalParams,
    rng: &mut SeededRng,
) -> Result<GroundRemovalOutcome> {
    cloud.check_finite()?;
    if params.dist_tol <= 0.0 || params.iterations == 0 {
        return Err(Error::config(
            "ground removal requires dist_tol > 0 and iterations >= 1",
        ));
    }
    if cloud.len() < 3 {
        return Ok(GroundRemovalOutcome {
            cloud: cloud.clone(),
            removed_first_pass: 0,
            removed_second_pass: 0,
            planes: Vec::new(),
            too_few_points: true,
        });
    }
    let min_inliers = ((cloud.len() as f64 * params.min_inlier_frac).ceil() as usize).max(3);

    let mut points = cloud.points.clone();
    let mut removed = [0usize; 2];
    let mut planes = Vec::new();
    for (pass, removed_slot) in removed.iter_mut().enumerate() {
        let flipped: Vec<Point3> = if pass == 0 {
            points.clone()
        } else {
            points.iter().map(|p| Point3::new(p.x, p.y, -p.z)).collect()
        };
        if let Some((plane, inliers)) = fit_horizontal_plane(&flipped, params, min_inliers, rng) {
            let before = points.len();
            points = points
                .iter()
                .zip(&inliers)
                .filter(|(_, &inl)| !inl)
                .map(|(p, _)| *p)
                .collect();
            *removed_slot = before - points.len();
            planes.push(if pass == 0 {
                plane
            } else {
                // Report the plane in the original frame.
                PlaneModel {
                    normal: Vector3::new(plane.normal.x, plane.normal.y, -plane.normal.z),
                    offset: plane.offset,
                }
            });
        }
    }
    Ok(GroundRemovalOutcome {
        cloud: PointCloud {
            points,
            frame_id: cloud.frame_id.clone(),
        },
        removed_first_pass: removed[0],
        removed_second_pass: removed[1],
        planes,
        too_few_points: false,
    })
}

/// Best near-horizontal plane by RANSAC with a least-squares refit.
/// Returns the plane and its inlier mask, or None below `min_inliers`.
fn fit_horizontal_plane(
    points: &[Point3],
    params: &GroundRemovalParams,
    min_inliers: usize,
    rng: &mut SeededRng,
) -> Option<(PlaneModel, Vec<bool>)> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let cos_tol = params.angle_tol_deg.to_radians().cos();
    let mut best: Option<(PlaneModel, usize)> = None;
    for _ in 0..params.iterations {
        let (i, j, k) = (rng.index(n), rng.index(n), rng.index(n));
        if i == j || j == k || i == k {
            continue;
        }
        let a = points[i].to_vector();
        let normal = (points[j].to_vector() - a).cross(&(points[k].to_vector() - a));
        let norm = normal.norm();
        if norm < 1e-12 {
            continue;
        }
        let normal = normal / norm;
        if normal.z.abs() < cos_tol {
            continue;
        }
        let plane = PlaneModel {
            normal,
            offset: -normal.dot(&a),
        };
        let count = points
            .iter()
            .filter(|p| plane.distance(p) <= params.dist_tol)
            .count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((plane, count));
        }
    }
    let (candidate, count) = best?;
    if count < min_inliers {
        return None;
    }
    // Least-squares refit on the candidate's inliers; keep the candidate if
    // the refit drifts out of the horizontal cone.
    let inlier_pts: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| candidate.distance(p) <= params.dist_tol)
        .map(|p| p.to_vector())
        .collect();
    let plane = refit_plane(&inlier_pts)
        .filter(|pl| pl.normal.z.abs() >= cos_tol)
        .unwrap_or(candidate);
    let mask: Vec<bool> = points
        .iter()
        .map(|p| plane.distance(p) <= params.dist_tol)
        .collect();
    let final_count = mask.iter().filter(|&&m| m).count();
    if final_count < min_inliers {
        return None;
    }
    Some((plane, mask))
}

/// Total least squares plane through a point set (smallest covariance
/// eigenvector as normal).
fn refit_plane(points: &[Vector3<f64>]) -> Option<PlaneModel> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let (mut min_idx, mut min_val) = (0usize, f64::INFINITY);
    for i in 0..3 {
        if eig.eigenvalues[i] < min_val {
            min_val = eig.eigenvalues[i];
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    let norm = normal.norm();
    if norm < 1e-12 {
        return None;
    }
    let normal = normal / norm;
    Some(PlaneModel {
        normal,
        offset: -normal.dot(&centroid),
    })
}

/// Per-point DBSCAN label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Noise,
    Cluster(usize),
}

/// DBSCAN output: one label per input point; cluster ids form a contiguous
/// `0..cluster_count` set in order of cluster creation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub labels: Vec<PointLabel>,
    pub cluster_count: usize,
}

impl ClusterLabels {
    pub fn cluster_of(&self, i: usize) -> Option<usize> {
        match self.labels[i] {
            PointLabel::Cluster(k) => Some(k),
            PointLabel::Noise => None,
        }
    }
}

/// Uniform grid over 3-D space with cell edge `eps`; neighbor queries only
/// need the 27 surrounding cells.
struct GridIndex {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    eps: f64,
}

impl GridIndex {
    fn build(points: &[Point3], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        GridIndex { cells, eps }
    }

    fn key(p: &Point3, eps: f64) -> (i64, i64, i64) {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    }

    /// Indices within `eps` of `p` (inclusive), in ascending index order.
    fn neighbors(&self, points: &[Point3], p: &Point3) -> Vec<usize> {
        let (cx, cy, cz) = Self::key(p, self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(bucket.iter().copied().filter(|&i| {
                            points[i].dist(p) <= self.eps
                        }));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN over Euclidean 3-space.
///
/// A point is *core* when its closed `eps`-neighborhood (itself included)
/// holds at least `min_pts` points. Clusters are created in ascending index
/// order of their first discovered core point and expanded fully before the
/// scan continues, so a border point reachable from several clusters joins
/// the first one that reaches it.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    if eps <= 0.0 {
        return Err(Error::config("dbscan requires eps > 0"));
    }
    if min_pts == 0 {
        return Err(Error::config("dbscan requires min_pts >= 1"));
    }
    cloud.check_finite()?;
    let points = &cloud.points;
    let n = points.len();
    let mut labels = vec![PointLabel::Noise; n];
    let mut visited = vec![false; n];
    if n == 0 {
        return Ok(ClusterLabels {
            labels,
            cluster_count: 0,
        });
    }
    let index = GridIndex::build(points, eps);
    let mut cluster = 0usize;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let neigh = index.neighbors(points, &points[i]);
        if neigh.len() < min_pts {
            continue; // stays Noise unless claimed later as a border point
        }
        labels[i] = PointLabel::Cluster(cluster);
        let mut queue: std::collections::VecDeque<usize> = neigh.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == PointLabel::Noise {
                labels[j] = PointLabel::Cluster(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let jn = index.neighbors(points, &points[j]);
            if jn.len() >= min_pts {
                queue.extend(jn);
            }
        }
        cluster += 1;
    }
    Ok(ClusterLabels {
        labels,
        cluster_count: cluster,
    })
}

/// Filters LiDAR supervision by radar visibility: DBSCAN clusters the
/// concatenated LiDAR+radar cloud and keeps only the LiDAR points whose
/// cluster contains at least one radar return. Output is a subset of the
/// input LiDAR cloud in original order.
pub fn radar_guided_filter(
    lidar: &PointCloud,
    radar: &PointCloud,
    eps: f64,
    min_pts: usize,
) -> Result<PointCloud> {
    lidar.check_frame(&radar.frame_id)?;
    let mut combined = lidar.points.clone();
    combined.extend_from_slice(&radar.points);
    let combined = PointCloud {
        points: combined,
        frame_id: lidar.frame_id.clone(),
    };
    let clusters = dbscan(&combined, eps, min_pts)?;
    let mut radar_supported = vec![false; clusters.cluster_count];
    for r in lidar.len()..combined.len() {
        if let Some(k) = clusters.cluster_of(r) {
            radar_supported[k] = true;
        }
    }
    let points = lidar
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| clusters.cluster_of(*i).is_some_and(|k| radar_supported[k]))
        .map(|(_, p)| *p)
        .collect();
    Ok(PointCloud {
        points,
        frame_id: lidar.frame_id.clone(),
    })
}

/// DBSCAN defaults for indoor LiDAR density.
pub const DEFAULT_DBSCAN_EPS: f64 = 0.5;
pub const DEFAULT_DBSCAN_MIN_PTS: usize = 5;

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::f64::consts::PI;

    fn fov() -> AngularFov {
        AngularFov::new(-PI / 2.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, 0.5, 10.0).unwrap()
    }

    #[test]
    fn crop_drops_out_of_range() {
        let cloud = PointCloud::new(
            vec![Point3::new(20.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)],
            "t",
        );
        let out = shared_fov_crop(&cloud, &fov());
        assert_eq!(out.points, vec![Point3::new(3.0, 0.0, 0.0)]);
    }

    #[test]
    fn crop_keeps_closed_lower_angle_bound() {
        // theta_min = -pi/2 maps to (0, -r, 0) exactly: atan2(-3, 0) is
        // exactly -pi/2 in IEEE arithmetic, so the boundary case is testable.
        let f = fov();
        let on_theta_min = Point3::new(0.0, -3.0, 0.0);
        assert_eq!(on_theta_min.azimuth(), f.theta_min);
        let kept = shared_fov_crop(&PointCloud::new(vec![on_theta_min], "t"), &f);
        assert_eq!(kept.len(), 1, "closed lower azimuth bound must keep the point");
        // Upper bounds are open: range exactly r_max is outside.
        let on_r_max = Point3::new(f.r_max, 0.0, 0.0);
        let kept = shared_fov_crop(&PointCloud::new(vec![on_r_max], "t"), &f);
        assert_eq!(kept.len(), 0, "open upper range bound must drop the point");
    }

    #[test]
    fn crop_matches_predicate_oracle() {
        let mut rng = SeededRng::new(3);
        let f = fov();
        let points: Vec<Point3> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.uniform(-12.0, 12.0),
                    rng.uniform(-12.0, 12.0),
                    rng.uniform(-12.0, 12.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points.clone(), "t");
        let out = shared_fov_crop(&cloud, &f);
        let expected: Vec<Point3> = points
            .iter()
            .copied()
            .filter(|p| {
                let r = p.range();
                r > 0.0
                    && r >= f.r_min
                    && r < f.r_max
                    && p.azimuth() >= f.theta_min
                    && p.azimuth() < f.theta_max
                    && p.elevation() >= f.phi_min
                    && p.elevation() < f.phi_max
            })
            .collect();
        assert_eq!(out.points, expected);
    }

    #[test]
    fn crop_is_idempotent() {
        let mut rng = SeededRng::new(5);
        let points: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    rng.uniform(-12.0, 12.0),
                    rng.uniform(-12.0, 12.0),
                    rng.uniform(-12.0, 12.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points, "t");
        let once = shared_fov_crop(&cloud, &fov());
        let twice = shared_fov_crop(&once, &fov());
        assert_eq!(once, twice);
    }

    /// Floor plane plus a volumetric box above it, with known membership.
    fn floor_and_box(rng: &mut SeededRng) -> (PointCloud, usize, usize) {
        let mut points = Vec::new();
        for _ in 0..1000 {
            points.push(Point3::new(
                rng.uniform(-5.0, 5.0),
                rng.uniform(-5.0, 5.0),
                0.0,
            ));
        }
        for _ in 0..200 {
            points.push(Point3::new(
                rng.uniform(1.0, 2.0),
                rng.uniform(-0.5, 0.5),
                rng.uniform(0.5, 1.5),
            ));
        }
        (PointCloud::new(points, "t"), 1000, 200)
    }

    #[test]
    fn floor_removed_box_untouched() {
        let mut rng = SeededRng::new(8);
        let (cloud, n_floor, n_box) = floor_and_box(&mut rng);
        let out =
            remove_ground_and_ceiling(&cloud, &GroundRemovalParams::default(), &mut rng).unwrap();
        assert!(!out.too_few_points);
        // All survivors must be box points (z >= 0.5), and at least 99% of
        // the floor must be gone.
        assert!(out.cloud.points.iter().all(|p| p.z >= 0.5));
        assert_eq!(out.cloud.len(), n_box, "box points were removed");
        assert!(out.removed_first_pass as f64 >= 0.99 * n_floor as f64);
        let _ = cloud;
    }

    #[test]
    fn too_few_points_returns_unchanged() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)], "t");
        let mut rng = SeededRng::new(1);
        let out =
            remove_ground_and_ceiling(&cloud, &GroundRemovalParams::default(), &mut rng).unwrap();
        assert!(out.too_few_points);
        assert_eq!(out.cloud, cloud);
    }

    #[test]
    fn no_plane_support_leaves_cloud_unchanged() {
        // Uniform volumetric noise: no horizontal slab reaches 5% support.
        let mut rng = SeededRng::new(10);
        let points: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(0.0, 20.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(points, "t");
        let out =
            remove_ground_and_ceiling(&cloud, &GroundRemovalParams::default(), &mut rng).unwrap();
        assert_eq!(out.cloud.len(), cloud.len());
        assert!(out.planes.is_empty());
    }

    #[test]
    fn floor_and_ceiling_both_removed_via_flip() {
        let mut rng = SeededRng::new(12);
        let mut points = Vec::new();
        for _ in 0..800 {
            points.push(Point3::new(
                rng.uniform(-5.0, 5.0),
                rng.uniform(-5.0, 5.0),
                0.0,
            ));
        }
        for _ in 0..700 {
            points.push(Point3::new(
                rng.uniform(-5.0, 5.0),
                rng.uniform(-5.0, 5.0),
                3.0,
            ));
        }
        for _ in 0..150 {
            points.push(Point3::new(
                rng.uniform(1.0, 2.0),
                rng.uniform(-0.5, 0.5),
                rng.uniform(0.8, 2.2),
            ));
        }
        let cloud = PointCloud::new(points, "t");
        let out =
            remove_ground_and_ceiling(&cloud, &GroundRemovalParams::default(), &mut rng).unwrap();
        assert_eq!(out.cloud.len(), 150);
        assert!(out.cloud.points.iter().all(|p| p.z > 0.5 && p.z < 2.5));
        assert_eq!(out.planes.len(), 2);
    }

    #[test]
    fn removed_points_are_within_dist_tol_of_planes() {
        let mut rng = SeededRng::new(14);
        let (cloud, _, _) = floor_and_box(&mut rng);
        let params = GroundRemovalParams::default();
        let out = remove_ground_and_ceiling(&cloud, &params, &mut rng).unwrap();
        let kept: BTreeSet<usize> = {
            // Recover kept indices by matching points in order.
            let mut kept = BTreeSet::new();
            let mut it = out.cloud.points.iter().peekable();
            for (i, p) in cloud.points.iter().enumerate() {
                if it.peek() == Some(&p) {
                    kept.insert(i);
                    it.next();
                }
            }
            kept
        };
        for (i, p) in cloud.points.iter().enumerate() {
            if !kept.contains(&i) {
                let near_some_plane = out
                    .planes
                    .iter()
                    .any(|pl| pl.distance(p) <= params.dist_tol + 1e-12);
                assert!(near_some_plane, "point {i} removed but far from planes");
            }
        }
    }

    // --- DBSCAN oracle -----------------------------------------------------
    //
    // Independent formulation: core points are found by brute force, core
    // components by union-find, cluster ids by ascending minimal core index,
    // and border points join the smallest-id cluster with a core within eps.

    fn oracle_dbscan(points: &[Point3], eps: f64, min_pts: usize) -> ClusterLabels {
        let n = points.len();
        let neigh: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| points[i].dist(&points[j]) <= eps)
                    .collect()
            })
            .collect();
        let core: Vec<bool> = neigh.iter().map(|ns| ns.len() >= min_pts).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let r = find(parent, parent[x]);
                parent[x] = r;
            }
            parent[x]
        }
        for i in 0..n {
            if !core[i] {
                continue;
            }
            for &j in &neigh[i] {
                if core[j] {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        // Components in ascending order of minimal core index.
        let mut comp_id: HashMap<usize, usize> = HashMap::new();
        let mut labels = vec![PointLabel::Noise; n];
        let mut next = 0usize;
        for i in 0..n {
            if core[i] {
                let root = find(&mut parent, i);
                let id = *comp_id.entry(root).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                });
                labels[i] = PointLabel::Cluster(id);
            }
        }
        for i in 0..n {
            if core[i] {
                continue;
            }
            let joined = neigh[i]
                .iter()
                .filter(|&&j| core[j])
                .filter_map(|&j| match labels[j] {
                    PointLabel::Cluster(k) => Some(k),
                    PointLabel::Noise => None,
                })
                .min();
            if let Some(k) = joined {
                labels[i] = PointLabel::Cluster(k);
            }
        }
        ClusterLabels {
            labels,
            cluster_count: next,
        }
    }

    #[test]
    fn two_far_clusters() {
        let mut rng = SeededRng::new(20);
        let mut points = Vec::new();
        for _ in 0..40 {
            points.push(Point3::new(
                rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2),
            ));
        }
        for _ in 0..40 {
            points.push(Point3::new(
                10.0 + rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2),
            ));
        }
        let cloud = PointCloud::new(points.clone(), "t");
        let got = dbscan(&cloud, 0.5, 5).unwrap();
        assert_eq!(got.cluster_count, 2);
        assert!(got.labels.iter().all(|l| *l != PointLabel::Noise));
        assert_eq!(got, oracle_dbscan(&points, 0.5, 5));
    }

    #[test]
    fn isolated_point_is_noise() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)], "t");
        let got = dbscan(&cloud, 0.5, 2).unwrap();
        assert_eq!(got.labels, vec![PointLabel::Noise]);
        assert_eq!(got.cluster_count, 0);
    }

    #[test]
    fn empty_cloud_empty_labels() {
        let got = dbscan(&PointCloud::empty("t"), 0.5, 5).unwrap();
        assert!(got.labels.is_empty());
        assert_eq!(got.cluster_count, 0);
    }

    #[test]
    fn dbscan_matches_oracle_on_random_instances() {
        let mut rng = SeededRng::new(33);
        for trial in 0..30 {
            let n = 20 + rng.index(180);
            let points: Vec<Point3> = (0..n)
                .map(|_| {
                    Point3::new(
                        rng.uniform(-3.0, 3.0),
                        rng.uniform(-3.0, 3.0),
                        rng.uniform(-3.0, 3.0),
                    )
                })
                .collect();
            let cloud = PointCloud::new(points.clone(), "t");
            let eps = rng.uniform(0.3, 1.2);
            let min_pts = 2 + rng.index(5);
            let got = dbscan(&cloud, eps, min_pts).unwrap();
            let want = oracle_dbscan(&points, eps, min_pts);
            // Core structure and counts must match; border tie-breaks agree
            // because both sides use first-reaching-cluster semantics.
            assert_eq!(got.cluster_count, want.cluster_count, "trial {trial}");
            assert_eq!(got.labels, want.labels, "trial {trial}");
        }
    }

    #[test]
    fn dbscan_partition_is_permutation_consistent() {
        // Well-separated blobs: no point can border two clusters, so the
        // partition (as a set of point-sets) is permutation invariant.
        let mut rng = SeededRng::new(44);
        let mut points = Vec::new();
        for b in 0..4 {
            let cx = b as f64 * 8.0;
            for _ in 0..30 {
                points.push(Point3::new(
                    cx + rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                ));
            }
        }
        let forward = dbscan(&PointCloud::new(points.clone(), "t"), 0.7, 4).unwrap();
        let mut permuted = points.clone();
        permuted.reverse();
        let backward = dbscan(&PointCloud::new(permuted, "t"), 0.7, 4).unwrap();
        let as_sets = |labels: &ClusterLabels, pts: &[Point3]| -> BTreeSet<Vec<String>> {
            let mut groups: HashMap<usize, Vec<String>> = HashMap::new();
            for (i, l) in labels.labels.iter().enumerate() {
                if let PointLabel::Cluster(k) = l {
                    groups
                        .entry(*k)
                        .or_default()
                        .push(format!("{:.6},{:.6},{:.6}", pts[i].x, pts[i].y, pts[i].z));
                }
            }
            groups
                .into_values()
                .map(|mut v| {
                    v.sort();
                    v
                })
                .collect()
        };
        let rev_points: Vec<Point3> = points.iter().rev().copied().collect();
        assert_eq!(
            as_sets(&forward, &points),
            as_sets(&backward, &rev_points)
        );
    }

    // --- radar-guided filtering ---------------------------------------------

    #[test]
    fn supported_cluster_kept_entirely() {
        let mut rng = SeededRng::new(50);
        let lidar_pts: Vec<Point3> = (0..50)
            .map(|_| {
                Point3::new(
                    2.0 + rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                )
            })
            .collect();
        let lidar = PointCloud::new(lidar_pts.clone(), "world");
        let radar = PointCloud::new(vec![Point3::new(2.0, 0.0, 0.0)], "world");
        let out = radar_guided_filter(&lidar, &radar, 0.5, 5).unwrap();
        assert_eq!(out.points, lidar_pts);
    }

    #[test]
    fn unsupported_cluster_dropped() {
        let mut rng = SeededRng::new(51);
        let lidar_pts: Vec<Point3> = (0..50)
            .map(|_| {
                Point3::new(
                    2.0 + rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                )
            })
            .collect();
        let lidar = PointCloud::new(lidar_pts, "world");
        let radar = PointCloud::new(vec![Point3::new(12.0, 0.0, 0.0)], "world");
        let out = radar_guided_filter(&lidar, &radar, 0.5, 5).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn mixed_fixture_keeps_exactly_supported_clusters() {
        let mut rng = SeededRng::new(52);
        let blob = |cx: f64, n: usize, rng: &mut SeededRng| -> Vec<Point3> {
            (0..n)
                .map(|_| {
                    Point3::new(
                        cx + rng.uniform(-0.3, 0.3),
                        rng.uniform(-0.3, 0.3),
                        rng.uniform(-0.3, 0.3),
                    )
                })
                .collect()
        };
        let a = blob(0.0, 40, &mut rng);
        let b = blob(8.0, 40, &mut rng);
        let c = blob(16.0, 40, &mut rng);
        let mut lidar_pts = a.clone();
        lidar_pts.extend(&b);
        lidar_pts.extend(&c);
        let lidar = PointCloud::new(lidar_pts, "world");
        // Radar sees blobs a and c only, plus a radar-only blob that must
        // not leak into the output.
        let mut radar_pts = vec![Point3::new(0.1, 0.0, 0.0), Point3::new(16.1, 0.0, 0.0)];
        radar_pts.extend(blob(30.0, 10, &mut rng));
        let radar = PointCloud::new(radar_pts, "world");
        let out = radar_guided_filter(&lidar, &radar, 0.5, 5).unwrap();
        let mut expected = a;
        expected.extend(&c);
        assert_eq!(out.points, expected);
    }

    #[test]
    fn filter_output_is_subset_of_input() {
        let mut rng = SeededRng::new(53);
        let lidar_pts: Vec<Point3> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                )
            })
            .collect();
        let radar_pts: Vec<Point3> = (0..20)
            .map(|_| {
                Point3::new(
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                    rng.uniform(-5.0, 5.0),
                )
            })
            .collect();
        let lidar = PointCloud::new(lidar_pts.clone(), "world");
        let radar = PointCloud::new(radar_pts, "world");
        let out = radar_guided_filter(&lidar, &radar, 0.8, 4).unwrap();
        let mut it = lidar_pts.iter();
        for p in &out.points {
            assert!(it.any(|q| q == p), "output contains a fabricated point");
        }
    }

    #[test]
    fn filter_rejects_frame_mismatch() {
        let lidar = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], "lidar");
        let radar = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], "radar");
        assert!(radar_guided_filter(&lidar, &radar, 0.5, 2).is_err());
    }
}
