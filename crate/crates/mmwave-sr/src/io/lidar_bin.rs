//! Packed LiDAR `.bin` records: little-endian `f32` quadruples
//! `x, y, z, intensity`. Intensity is discarded on read (the pipeline is
//! geometry-only) and written as 0.

use crate::geom::{FrameId, Point3, PointCloud};
use crate::{Error, Result};
use std::path::Path;

/// Reads a `.bin` cloud. The byte count must be a multiple of 16; any
/// non-finite coordinate is an error carrying the offending byte offset.
pub fn read_lidar_bin(path: &Path, frame_id: impl Into<FrameId>) -> Result<PointCloud> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_lidar_bin(&bytes, path, frame_id)
}

fn parse_lidar_bin(bytes: &[u8], path: &Path, frame_id: impl Into<FrameId>) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!(
                "byte count {} is not a multiple of the 16-byte point stride",
                bytes.len()
            ),
            offset: Some(bytes.len() - bytes.len() % 16),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (i, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(1), f(2));
        if !p.is_finite() {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: "non-finite coordinate".into(),
                offset: Some(i * 16),
            });
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, frame_id))
}

/// Writes a cloud as `.bin` records with zero intensity.
pub fn write_lidar_bin(cloud: &PointCloud, path: &Path) -> Result<()> {
    cloud.check_finite()?;
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
