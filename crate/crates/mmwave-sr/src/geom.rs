//! Core geometry: points, clouds, rigid transforms, and fields of view.
//!
//! Everything downstream (projection, preprocessing, metrics) speaks
//! [`PointCloud`]. Clouds carry a symbolic frame id; operations that assume a
//! particular frame check it and fail loudly on mismatch instead of silently
//! mixing coordinate systems.

use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// A finite 3-D point in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Euclidean norm (range from the sensor origin).
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Azimuth angle `atan2(y, x)` in `(-pi, pi]`.
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Elevation angle `arccos(z / r)` in `[0, pi]`, measured from +Z.
    /// Undefined (NaN) at the origin.
    pub fn elevation(&self) -> f64 {
        (self.z / self.range()).acos()
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub(crate) fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub(crate) fn from_vector(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }
}

/// Symbolic coordinate-frame name, compared for equality at module boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameId(pub String);

impl FrameId {
    pub fn new(name: impl Into<String>) -> Self {
        FrameId(name.into())
    }
}

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameId {
    fn from(s: &str) -> Self {
        FrameId(s.to_owned())
    }
}

/// An ordered list of finite 3-D points in a named sensor frame.
///
/// Order is preserved by every transform and filter in the crate, which keeps
/// per-point bookkeeping (labels, masks) index-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: FrameId,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: impl Into<FrameId>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn empty(frame_id: impl Into<FrameId>) -> Self {
        PointCloud::new(Vec::new(), frame_id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors if any point has a NaN/Inf component.
    pub fn check_finite(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("point cloud `{}`", self.frame_id),
                    offset: Some(i),
                });
            }
        }
        Ok(())
    }

    /// Errors unless the cloud is in `expected`.
    pub fn check_frame(&self, expected: &FrameId) -> Result<()> {
        if &self.frame_id != expected {
            return Err(Error::FrameMismatch {
                expected: expected.0.clone(),
                actual: self.frame_id.0.clone(),
            });
        }
        Ok(())
    }
}

/// Rigid-body transform: `p' = R p + t` with `R` orthonormal, `det R = +1`.
///
/// Optionally carries source/target frame names; when present,
/// [`apply_transform`] enforces that the input cloud is in the source frame
/// and stamps the output with the target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    from_frame: Option<FrameId>,
    to_frame: Option<FrameId>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidTransform {
    /// Frame-agnostic transform. Errors if `rotation` is not orthonormal with
    /// determinant +1 (tolerance 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_orthonormal(&rotation)?;
        Ok(RigidTransform {
            rotation,
            translation,
            from_frame: None,
            to_frame: None,
        })
    }

    /// Transform mapping points from `from` into `to`.
    pub fn between(
        from: impl Into<FrameId>,
        to: impl Into<FrameId>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let mut t = Self::new(rotation, translation)?;
        t.from_frame = Some(from.into());
        t.to_frame = Some(to.into());
        Ok(t)
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from_frame: None,
            to_frame: None,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Inverse transform: `p = R^T (p' - t)`. Frames swap roles.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from_frame: self.to_frame.clone(),
            to_frame: self.from_frame.clone(),
        }
    }

    /// Composition `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            from_frame: other.from_frame.clone(),
            to_frame: self.to_frame.clone(),
        }
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }
}

fn check_orthonormal(r: &Matrix3<f64>) -> Result<()> {
    let gram = r.transpose() * r;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::config(format!(
            "rotation is not orthonormal: |R^T R - I| = {dev:.3e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::config(format!(
            "rotation determinant is {det:.12}, expected +1"
        )));
    }
    Ok(())
}

/// Applies a rigid transform to every point of `cloud`, preserving order.
///
/// When the transform carries frame names, the cloud must be in the source
/// frame and the output is stamped with the target frame; a frame mismatch is
/// an error rather than a silent pass-through.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> Result<PointCloud> {
    if let Some(from) = &t.from_frame {
        cloud.check_frame(from)?;
    }
    let points = cloud.points.iter().map(|&p| t.apply_point(p)).collect();
    let frame_id = t.to_frame.clone().unwrap_or_else(|| cloud.frame_id.clone());
    Ok(PointCloud { points, frame_id })
}

/// Angular + radial field of view.
///
/// `theta` is azimuth, `phi` is elevation from +Z. All intervals are closed
/// at the minimum and open at the maximum, matching floor-based pixel
/// binning: a point exactly on `theta_min` is inside, one exactly on
/// `theta_max` is not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularFov {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl AngularFov {
    // Negated comparisons are load-bearing: NaN bounds must fail validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(
        theta_min: f64,
        theta_max: f64,
        phi_min: f64,
        phi_max: f64,
        r_min: f64,
        r_max: f64,
    ) -> Result<Self> {
        if !(theta_min < theta_max) {
            return Err(Error::config("FOV requires theta_min < theta_max"));
        }
        if !(phi_min < phi_max) {
            return Err(Error::config("FOV requires phi_min < phi_max"));
        }
        if !(0.0 <= r_min && r_min < r_max) {
            return Err(Error::config("FOV requires 0 <= r_min < r_max"));
        }
        Ok(AngularFov {
            theta_min,
            theta_max,
            phi_min,
            phi_max,
            r_min,
            r_max,
        })
    }

    /// Azimuth extent `theta_max - theta_min`.
    pub fn theta_range(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    /// Elevation extent `phi_max - phi_min`.
    pub fn phi_range(&self) -> f64 {
        self.phi_max - self.phi_min
    }

    /// FOV membership test: closed at minima, open at maxima.
    ///
    /// Points at the exact origin have undefined angles and are outside.
    pub fn contains(&self, p: &Point3) -> bool {
        let r = p.range();
        if !(r >= self.r_min && r < self.r_max) || r == 0.0 {
            return false;
        }
        let theta = p.azimuth();
        let phi = p.elevation();
        theta >= self.theta_min
            && theta < self.theta_max
            && phi >= self.phi_min
            && phi < self.phi_max
    }
}

/// Pixel grid laid over an [`AngularFov`]: `height` elevation rows by
/// `width` azimuth columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry {
    pub width: usize,
    pub height: usize,
    pub fov: AngularFov,
}

impl ImageGeometry {
    pub fn new(width: usize, height: usize, fov: AngularFov) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image geometry requires width, height >= 1"));
        }
        Ok(ImageGeometry { width, height, fov })
    }

    /// Azimuth bin width in radians.
    pub fn theta_bin(&self) -> f64 {
        self.fov.theta_range() / self.width as f64
    }

    /// Elevation bin width in radians.
    pub fn phi_bin(&self) -> f64 {
        self.fov.phi_range() / self.height as f64
    }
}
