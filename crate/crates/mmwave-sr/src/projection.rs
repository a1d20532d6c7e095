//! Point cloud ↔ range image conversion and radial slicing.
//!
//! A range image is a lossy but near-invertible proxy for a point cloud: an
//! `height × width` grid over an angular FOV whose pixels store the radial
//! distance of the nearest surface. Radar's penetration ability puts several
//! returns on one ray, so radar clouds are additionally *sliced* along range
//! into a multi-channel image, one channel per radial slab, preserving points
//! a single-channel projection would occlude.
//!
//! Conventions: azimuth `theta = atan2(y, x)` in `(-pi, pi]`, elevation
//! `phi = arccos(z / r)` in `[0, pi]` from +Z, pixel binning by `floor`,
//! FOV intervals closed at minima and open at maxima. On pixel collisions the
//! smallest range wins (first-return semantics).

use crate::geom::{AngularFov, ImageGeometry, Point3, PointCloud};
use crate::{Error, Result};
use ndarray::Array2;

/// Grid of range values over an [`ImageGeometry`] with a validity mask.
///
/// `ranges[(row, col)]` is meaningful only where `valid[(row, col)]`; invalid
/// cells hold 0.0 in memory and `-1.0` in the serialized form.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub geometry: ImageGeometry,
    pub ranges: Array2<f64>,
    pub valid: Array2<bool>,
}

impl RangeImage {
    /// All-invalid image.
    pub fn empty(geometry: ImageGeometry) -> Self {
        let shape = (geometry.height, geometry.width);
        RangeImage {
            geometry,
            ranges: Array2::zeros(shape),
            valid: Array2::from_elem(shape, false),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Sets one pixel, keeping the smaller range if the pixel is occupied.
    /// Returns true when the write collided with an existing value.
    fn insert_nearest(&mut self, row: usize, col: usize, range: f64) -> bool {
        let idx = (row, col);
        if self.valid[idx] {
            if range < self.ranges[idx] {
                self.ranges[idx] = range;
            }
            true
        } else {
            self.valid[idx] = true;
            self.ranges[idx] = range;
            false
        }
    }
}

/// Bookkeeping from a projection pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    /// Points outside the FOV (angles, range, or the degenerate origin).
    pub dropped: usize,
    /// Points that landed on an already-occupied pixel.
    pub collisions: usize,
    /// Points that fell inside the FOV.
    pub in_fov: usize,
}

/// Pixel coordinates of an in-FOV point, by floor binning.
fn pixel_of(p: &Point3, geom: &ImageGeometry) -> (usize, usize) {
    let fov = &geom.fov;
    let col = ((p.azimuth() - fov.theta_min) / fov.theta_range() * geom.width as f64).floor()
        as usize;
    let row = ((p.elevation() - fov.phi_min) / fov.phi_range() * geom.height as f64).floor()
        as usize;
    // Boundary rounding can land exactly on width/height; clamp keeps the
    // half-open convention intact.
    (row.min(geom.height - 1), col.min(geom.width - 1))
}

/// Projects a cloud into a range image. Out-of-FOV points are dropped and
/// counted; pixel collisions keep the smallest range.
pub fn project(cloud: &PointCloud, geom: &ImageGeometry) -> Result<(RangeImage, ProjectionStats)> {
    cloud.check_finite()?;
    let mut img = RangeImage::empty(*geom);
    let mut stats = ProjectionStats::default();
    for p in &cloud.points {
        if !geom.fov.contains(p) {
            stats.dropped += 1;
            continue;
        }
        stats.in_fov += 1;
        let (row, col) = pixel_of(p, geom);
        if img.insert_nearest(row, col, p.range()) {
            stats.collisions += 1;
        }
    }
    Ok((img, stats))
}

/// Back-projects a range image: one point per valid pixel, placed on the
/// pixel's bin-center ray at the stored range.
pub fn backproject(img: &RangeImage, frame_id: impl Into<crate::geom::FrameId>) -> PointCloud {
    let geom = &img.geometry;
    let fov = &geom.fov;
    let mut points = Vec::with_capacity(img.valid_count());
    for row in 0..geom.height {
        for col in 0..geom.width {
            if !img.valid[(row, col)] {
                continue;
            }
            let r = img.ranges[(row, col)];
            let theta = fov.theta_min + (col as f64 + 0.5) * geom.theta_bin();
            let phi = fov.phi_min + (row as f64 + 0.5) * geom.phi_bin();
            points.push(Point3::new(
                r * phi.sin() * theta.cos(),
                r * phi.sin() * theta.sin(),
                r * phi.cos(),
            ));
        }
    }
    PointCloud::new(points, frame_id)
}

/// Stack of range images restricted to consecutive radial slabs.
///
/// `slice_bounds` has `channels + 1` ascending entries spanning
/// `[fov.r_min, fov.r_max]`; channel `k` holds ranges in
/// `[slice_bounds[k], slice_bounds[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelRangeImage {
    pub channels: Vec<RangeImage>,
    pub slice_bounds: Vec<f64>,
}

impl MultiChannelRangeImage {
    pub fn geometry(&self) -> &ImageGeometry {
        &self.channels[0].geometry
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn valid_count(&self) -> usize {
        self.channels.iter().map(|c| c.valid_count()).sum()
    }
}

/// Radial slice placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceSpacing {
    /// Equal-width slabs over `[r_min, r_max]` (default).
    #[default]
    Uniform,
    /// Log-spaced slabs; requires `r_min > 0`.
    Logarithmic,
}

/// Slice boundaries for `channels` slabs over the FOV's radial extent.
pub fn slice_bounds(fov: &AngularFov, channels: usize, spacing: SliceSpacing) -> Result<Vec<f64>> {
    if channels == 0 {
        return Err(Error::config("channel count must be >= 1"));
    }
    let c = channels as f64;
    let mut bounds = Vec::with_capacity(channels + 1);
    match spacing {
        SliceSpacing::Uniform => {
            for i in 0..=channels {
                let t = i as f64 / c;
                bounds.push(fov.r_min + t * (fov.r_max - fov.r_min));
            }
        }
        SliceSpacing::Logarithmic => {
            if fov.r_min <= 0.0 {
                return Err(Error::config("log-spaced slicing requires r_min > 0"));
            }
            let (lo, hi) = (fov.r_min.ln(), fov.r_max.ln());
            for i in 0..=channels {
                let t = i as f64 / c;
                bounds.push((lo + t * (hi - lo)).exp());
            }
        }
    }
    // Pin the endpoints exactly; interpolation rounding must not leak points.
    bounds[0] = fov.r_min;
    bounds[channels] = fov.r_max;
    Ok(bounds)
}

/// Projects each point only into the channel containing its range.
/// Nearest-wins applies within each channel independently, so co-directional
/// points in different slabs all survive.
pub fn slice_multichannel(
    cloud: &PointCloud,
    geom: &ImageGeometry,
    channels: usize,
) -> Result<(MultiChannelRangeImage, ProjectionStats)> {
    slice_multichannel_spaced(cloud, geom, channels, SliceSpacing::Uniform)
}

/// [`slice_multichannel`] with explicit slab spacing.
pub fn slice_multichannel_spaced(
    cloud: &PointCloud,
    geom: &ImageGeometry,
    channels: usize,
    spacing: SliceSpacing,
) -> Result<(MultiChannelRangeImage, ProjectionStats)> {
    cloud.check_finite()?;
    let bounds = slice_bounds(&geom.fov, channels, spacing)?;
    let mut imgs: Vec<RangeImage> = (0..channels).map(|_| RangeImage::empty(*geom)).collect();
    let mut stats = ProjectionStats::default();
    for p in &cloud.points {
        if !geom.fov.contains(p) {
            stats.dropped += 1;
            continue;
        }
        stats.in_fov += 1;
        let r = p.range();
        let k = (bounds.partition_point(|b| *b <= r) - 1).min(channels - 1);
        let (row, col) = pixel_of(p, geom);
        if imgs[k].insert_nearest(row, col, r) {
            stats.collisions += 1;
        }
    }
    Ok((
        MultiChannelRangeImage {
            channels: imgs,
            slice_bounds: bounds,
        },
        stats,
    ))
}

/// Fraction of in-FOV points that survive projection into `channels` slabs:
/// `valid pixels across channels / in-FOV point count`. Returns 1.0 for a
/// cloud with no in-FOV points (nothing to lose).
pub fn retention_ratio(cloud: &PointCloud, geom: &ImageGeometry, channels: usize) -> Result<f64> {
    let (multi, stats) = slice_multichannel(cloud, geom, channels)?;
    if stats.in_fov == 0 {
        return Ok(1.0);
    }
    Ok(multi.valid_count() as f64 / stats.in_fov as f64)
}

/// Range image mapped affinely to `[-1, 1]`, the domain the diffusion model
/// operates on. Invalid pixels carry the fill value.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub geometry: ImageGeometry,
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
}

/// Fill value written at invalid pixels by [`normalize`].
pub const NORMALIZED_FILL: f64 = -1.0;

/// Affine map `[r_min, r_max] -> [-1, 1]`; invalid pixels get `fill`.
pub fn normalize_with_fill(img: &RangeImage, fill: f64) -> NormalizedImage {
    let fov = &img.geometry.fov;
    let half_span = (fov.r_max - fov.r_min) / 2.0;
    let mid = (fov.r_max + fov.r_min) / 2.0;
    let values = ndarray::Zip::from(&img.ranges)
        .and(&img.valid)
        .map_collect(|&r, &v| if v { (r - mid) / half_span } else { fill });
    NormalizedImage {
        geometry: img.geometry,
        values,
        valid: img.valid.clone(),
    }
}

/// [`normalize_with_fill`] with the default fill of `-1`.
pub fn normalize(img: &RangeImage) -> NormalizedImage {
    normalize_with_fill(img, NORMALIZED_FILL)
}

/// Inverse of [`normalize`] on valid pixels.
pub fn denormalize(n: &NormalizedImage) -> RangeImage {
    let fov = &n.geometry.fov;
    let half_span = (fov.r_max - fov.r_min) / 2.0;
    let mid = (fov.r_max + fov.r_min) / 2.0;
    let ranges = ndarray::Zip::from(&n.values)
        .and(&n.valid)
        .map_collect(|&v, &ok| if ok { mid + v * half_span } else { 0.0 });
    RangeImage {
        geometry: n.geometry,
        ranges,
        valid: n.valid.clone(),
    }
}

/// Interprets a raw sampled tensor as a normalized image: values are clamped
/// to `[-1, 1]` and pixels at or below `invalid_below` are marked empty
/// (a sampled value near the fill means "no surface on this ray").
pub fn interpret_sample(
    geometry: ImageGeometry,
    raw: &Array2<f64>,
    invalid_below: f64,
) -> Result<NormalizedImage> {
    if raw.dim() != (geometry.height, geometry.width) {
        return Err(Error::ShapeMismatch {
            context: "interpret_sample".into(),
            expected: format!("{}x{}", geometry.height, geometry.width),
            actual: format!("{}x{}", raw.dim().0, raw.dim().1),
        });
    }
    let values = raw.mapv(|v| v.clamp(-1.0, 1.0));
    let valid = values.mapv(|v| v > invalid_below);
    let values = ndarray::Zip::from(&values)
        .and(&valid)
        .map_collect(|&v, &ok| if ok { v } else { NORMALIZED_FILL });
    Ok(NormalizedImage {
        geometry,
        values,
        valid,
    })
}

/// Stacks a multi-channel image into the normalized `(C, H, W)` condition
/// tensor consumed by the denoiser (invalid pixels at the fill value).
pub fn normalize_stack(multi: &MultiChannelRangeImage) -> ndarray::Array3<f64> {
    let geom = multi.geometry();
    let mut out = ndarray::Array3::from_elem(
        (multi.channel_count(), geom.height, geom.width),
        NORMALIZED_FILL,
    );
    for (k, ch) in multi.channels.iter().enumerate() {
        let n = normalize(ch);
        out.index_axis_mut(ndarray::Axis(0), k).assign(&n.values);
    }
    out
}

/// Validity threshold when interpreting sampled tensors: values at or below
/// this are treated as "no return on this ray".
pub const SAMPLE_INVALID_BELOW: f64 = -0.98;

/// LiDAR-side default geometry (128 rows x 512 columns).
pub fn default_lidar_geometry(fov: AngularFov) -> ImageGeometry {
    ImageGeometry::new(512, 128, fov).expect("static dims")
}

/// Radar-side default geometry (64 x 64).
pub fn default_radar_geometry(fov: AngularFov) -> ImageGeometry {
    ImageGeometry::new(64, 64, fov).expect("static dims")
}

/// Default radar channel count.
pub const DEFAULT_CHANNELS: usize = 16;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::FrameId;
    use crate::rng::SeededRng;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn full_sphere_geom(width: usize, height: usize, r_max: f64) -> ImageGeometry {
        let fov = AngularFov::new(-PI, PI, 0.0, PI, 0.001, r_max).unwrap();
        ImageGeometry::new(width, height, fov).unwrap()
    }

    fn spherical_point(theta: f64, phi: f64, r: f64) -> Point3 {
        Point3::new(
            r * phi.sin() * theta.cos(),
            r * phi.sin() * theta.sin(),
            r * phi.cos(),
        )
    }

    fn random_in_fov_cloud(geom: &ImageGeometry, n: usize, rng: &mut SeededRng) -> PointCloud {
        let fov = &geom.fov;
        let points = (0..n)
            .map(|_| {
                spherical_point(
                    rng.uniform(fov.theta_min, fov.theta_max - 1e-9),
                    rng.uniform(fov.phi_min, fov.phi_max - 1e-9),
                    rng.uniform(fov.r_min.max(1e-3), fov.r_max - 1e-9),
                )
            })
            .collect();
        PointCloud::new(points, "test")
    }

    #[test]
    fn unit_y_point_hits_known_pixel() {
        // Scalar evaluation of the projection formula: theta = pi/2 maps to
        // column floor(0.75 * 512) = 384, phi = pi/2 to row floor(0.5 * 128) = 64.
        let geom = full_sphere_geom(512, 128, 10.0);
        let cloud = PointCloud::new(vec![Point3::new(0.0, 1.0, 0.0)], "test");
        let (img, stats) = project(&cloud, &geom).unwrap();
        assert_eq!(stats.in_fov, 1);
        assert_eq!(stats.dropped, 0);
        assert!(img.valid[(64, 384)]);
        assert_eq!(img.ranges[(64, 384)], 1.0);
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn empty_cloud_projects_to_all_invalid() {
        let geom = full_sphere_geom(32, 16, 10.0);
        let (img, stats) = project(&PointCloud::empty("test"), &geom).unwrap();
        assert_eq!(img.valid_count(), 0);
        assert_eq!(stats.in_fov, 0);
    }

    #[test]
    fn collision_keeps_nearest() {
        let geom = full_sphere_geom(32, 16, 10.0);
        let dir = (PI / 3.0, PI / 2.2);
        let cloud = PointCloud::new(
            vec![
                spherical_point(dir.0, dir.1, 5.0),
                spherical_point(dir.0, dir.1, 3.0),
            ],
            "test",
        );
        let (img, stats) = project(&cloud, &geom).unwrap();
        assert_eq!(img.valid_count(), 1);
        assert_eq!(stats.collisions, 1);
        let (row, col) = pixel_of(&cloud.points[0], &geom);
        assert!((img.ranges[(row, col)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_fov_points_are_counted() {
        let geom = full_sphere_geom(32, 16, 10.0);
        let cloud = PointCloud::new(
            vec![
                Point3::new(11.0, 0.0, 0.0), // beyond r_max
                Point3::new(2.0, 0.0, 0.0),
            ],
            "test",
        );
        let (_, stats) = project(&cloud, &geom).unwrap();
        assert_eq!(stats.dropped, 1);
        assert_eq!(stats.in_fov, 1);
    }

    #[test]
    fn backproject_all_invalid_is_empty() {
        let geom = full_sphere_geom(32, 16, 10.0);
        let cloud = backproject(&RangeImage::empty(geom), "out");
        assert!(cloud.is_empty());
        assert_eq!(cloud.frame_id, FrameId::new("out"));
    }

    #[test]
    fn backproject_single_pixel_inverts_projection() {
        let geom = full_sphere_geom(512, 128, 10.0);
        let mut img = RangeImage::empty(geom);
        img.valid[(64, 384)] = true;
        img.ranges[(64, 384)] = 1.0;
        let cloud = backproject(&img, "test");
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        // Within half an angular bin of (0, 1, 0).
        assert!((p.azimuth() - PI / 2.0).abs() <= geom.theta_bin() / 2.0 + 1e-12);
        assert!((p.elevation() - PI / 2.0).abs() <= geom.phi_bin() / 2.0 + 1e-12);
        assert!((p.range() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_within_half_bin_and_exact_range() {
        let geom = full_sphere_geom(128, 32, 10.0);
        let mut rng = SeededRng::new(31);
        let cloud = random_in_fov_cloud(&geom, 500, &mut rng);
        let (img, stats) = project(&cloud, &geom).unwrap();
        assert_eq!(stats.dropped, 0);
        let back = backproject(&img, "test");
        assert_eq!(back.len(), img.valid_count());

        // Every back-projected point sits at its bin center, so it is within
        // half a bin (per axis) of the surviving input point on that pixel,
        // with the exact stored range.
        let half_theta = geom.theta_bin() / 2.0 + 1e-12;
        let half_phi = geom.phi_bin() / 2.0 + 1e-12;
        for q in &back.points {
            let survivor = cloud
                .points
                .iter()
                .filter(|p| pixel_of(p, &geom) == pixel_of(q, &geom))
                .min_by(|a, b| a.range().partial_cmp(&b.range()).unwrap())
                .expect("pixel came from some input point");
            assert!((q.azimuth() - survivor.azimuth()).abs() <= half_theta);
            assert!((q.elevation() - survivor.elevation()).abs() <= half_phi);
            // Range carries no quantization; only Cartesian trig rounding.
            let rel = (q.range() - survivor.range()).abs() / survivor.range();
            assert!(rel <= 1e-12, "range not preserved: rel err {rel:.3e}");
        }
    }

    #[test]
    fn two_channel_slicing_separates_by_range() {
        let fov = AngularFov::new(-PI, PI, 0.0, PI, 0.0, 10.0).unwrap();
        let geom = ImageGeometry::new(32, 16, fov).unwrap();
        let cloud = PointCloud::new(
            vec![
                spherical_point(0.3, 1.2, 3.0),
                spherical_point(-1.0, 2.0, 7.0),
            ],
            "test",
        );
        let (multi, _) = slice_multichannel(&cloud, &geom, 2).unwrap();
        assert_eq!(multi.slice_bounds, vec![0.0, 5.0, 10.0]);
        assert_eq!(multi.channels[0].valid_count(), 1);
        assert_eq!(multi.channels[1].valid_count(), 1);
        // Channel 0 holds the 3 m return, channel 1 the 7 m return.
        assert!(multi.channels[0].ranges.iter().any(|&r| (r - 3.0).abs() < 1e-9));
        assert!(multi.channels[1].ranges.iter().any(|&r| (r - 7.0).abs() < 1e-9));
    }

    #[test]
    fn single_channel_equals_plain_projection() {
        let geom = full_sphere_geom(64, 32, 10.0);
        let mut rng = SeededRng::new(5);
        let cloud = random_in_fov_cloud(&geom, 300, &mut rng);
        let (img, s1) = project(&cloud, &geom).unwrap();
        let (multi, s2) = slice_multichannel(&cloud, &geom, 1).unwrap();
        assert_eq!(multi.channels.len(), 1);
        assert_eq!(multi.channels[0], img);
        assert_eq!(s1, s2);
    }

    #[test]
    fn co_directional_points_survive_with_enough_channels() {
        let geom = full_sphere_geom(32, 16, 10.0);
        let dir = (0.5, 1.4);
        let cloud = PointCloud::new(
            vec![
                spherical_point(dir.0, dir.1, 3.0),
                spherical_point(dir.0, dir.1, 7.0),
            ],
            "test",
        );
        let (two, _) = slice_multichannel(&cloud, &geom, 2).unwrap();
        assert_eq!(two.valid_count(), 2);
        let (one, _) = slice_multichannel(&cloud, &geom, 1).unwrap();
        assert_eq!(one.valid_count(), 1);
        // Only the nearer return survives single-channel projection.
        let (row, col) = pixel_of(&cloud.points[0], &geom);
        assert!((one.channels[0].ranges[(row, col)] - 3.0).abs() < 1e-12);
        // Retention ratio: 1.0 with two channels, 0.5 with one.
        assert_eq!(retention_ratio(&cloud, &geom, 2).unwrap(), 1.0);
        assert_eq!(retention_ratio(&cloud, &geom, 1).unwrap(), 0.5);
    }

    #[test]
    fn zero_channels_is_a_config_error() {
        let geom = full_sphere_geom(32, 16, 10.0);
        assert!(slice_multichannel(&PointCloud::empty("t"), &geom, 0).is_err());
    }

    #[test]
    fn slice_partition_covers_every_in_fov_point_once() {
        let geom = full_sphere_geom(64, 32, 10.0);
        let mut rng = SeededRng::new(77);
        let cloud = random_in_fov_cloud(&geom, 400, &mut rng);
        for channels in [1usize, 3, 16] {
            let (multi, stats) = slice_multichannel(&cloud, &geom, channels).unwrap();
            // Union of surviving points never exceeds the input, and every
            // valid pixel's range sits inside its slab.
            assert!(multi.valid_count() <= stats.in_fov);
            for (k, ch) in multi.channels.iter().enumerate() {
                let (lo, hi) = (multi.slice_bounds[k], multi.slice_bounds[k + 1]);
                for (idx, &ok) in ch.valid.indexed_iter() {
                    if ok {
                        let r = ch.ranges[idx];
                        assert!(r >= lo && r < hi, "range {r} outside slab [{lo}, {hi})");
                    }
                }
            }
        }
    }

    #[test]
    fn retention_is_at_least_single_channel_retention() {
        let geom = full_sphere_geom(16, 8, 10.0);
        let mut rng = SeededRng::new(123);
        for _ in 0..100 {
            let n = 50 + rng.index(100);
            let cloud = random_in_fov_cloud(&geom, n, &mut rng);
            let r1 = retention_ratio(&cloud, &geom, 1).unwrap();
            for c in [2usize, 4, 16, 32] {
                let rc = retention_ratio(&cloud, &geom, c).unwrap();
                assert!(rc >= r1 - 1e-15, "retention({c}) = {rc} < retention(1) = {r1}");
            }
        }
    }

    #[test]
    fn log_spacing_requires_positive_r_min() {
        let fov = AngularFov::new(-PI, PI, 0.0, PI, 0.0, 10.0).unwrap();
        assert!(slice_bounds(&fov, 4, SliceSpacing::Logarithmic).is_err());
        let fov = AngularFov::new(-PI, PI, 0.0, PI, 0.5, 10.0).unwrap();
        let b = slice_bounds(&fov, 4, SliceSpacing::Logarithmic).unwrap();
        assert_eq!(b[0], 0.5);
        assert_eq!(b[4], 10.0);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let geom = full_sphere_geom(4, 2, 10.0);
        let r_min = geom.fov.r_min;
        let r_max = geom.fov.r_max;
        let mut img = RangeImage::empty(geom);
        img.valid[(0, 0)] = true;
        img.ranges[(0, 0)] = r_max;
        img.valid[(0, 1)] = true;
        img.ranges[(0, 1)] = (r_min + r_max) / 2.0;
        let n = normalize(&img);
        assert!((n.values[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(n.values[(0, 1)].abs() < 1e-12);
        // Invalid pixels carry the fill.
        assert_eq!(n.values[(1, 3)], NORMALIZED_FILL);
    }

    #[test]
    fn interpret_sample_masks_fill_level_pixels() {
        let geom = full_sphere_geom(4, 2, 10.0);
        let raw = ndarray::arr2(&[[-1.0, -0.99, 0.3, 1.7], [-0.5, -1.2, 0.0, -0.97]]);
        let n = interpret_sample(geom, &raw, -0.98).unwrap();
        assert!(!n.valid[(0, 0)]);
        assert!(!n.valid[(0, 1)]);
        assert!(n.valid[(0, 2)]);
        assert!(n.valid[(0, 3)]);
        assert_eq!(n.values[(0, 3)], 1.0); // clamped
        assert!(!n.valid[(1, 1)]); // below -1 clamps to -1, then masked
        assert!(n.valid[(1, 3)]); // -0.97 is above the threshold
    }

    proptest! {
        #[test]
        fn normalize_round_trip(seed in 0u64..1000) {
            let geom = full_sphere_geom(16, 8, 12.0);
            let mut rng = SeededRng::new(seed);
            let cloud = random_in_fov_cloud(&geom, 100, &mut rng);
            let (img, _) = project(&cloud, &geom).unwrap();
            let back = denormalize(&normalize(&img));
            prop_assert_eq!(&back.valid, &img.valid);
            for (idx, &ok) in img.valid.indexed_iter() {
                if ok {
                    let (a, b) = (img.ranges[idx], back.ranges[idx]);
                    prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
                }
            }
        }

        #[test]
        fn projection_is_deterministic(seed in 0u64..200) {
            let geom = full_sphere_geom(32, 16, 10.0);
            let mut rng = SeededRng::new(seed);
            let cloud = random_in_fov_cloud(&geom, 120, &mut rng);
            let (a, sa) = project(&cloud, &geom).unwrap();
            let (b, sb) = project(&cloud, &geom).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(sa, sb);
        }
    }
}
