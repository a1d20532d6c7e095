//! Binary range-image and power-map formats (little-endian throughout).
//!
//! Range image (`.ri`):
//!
//! ```text
//! offset  size  field
//! 0       4     magic b"RIMG"
//! 4       4     version (u32) = 1
//! 8       4     image height l_h (u32)
//! 12      4     image width  l_w (u32)
//! 16      4     channel count C (u32)
//! 20      48    FOV: theta_min, theta_max, phi_min, phi_max, r_min, r_max (6 x f64)
//! 68      ...   C planes of l_h*l_w f32 ranges, row-major; invalid = -1.0
//! ```
//!
//! Channel `k` holds ranges in the k-th of C equal radial slabs over
//! `[r_min, r_max]`; only uniformly sliced images are serializable and the
//! slab bounds are reconstructed on read. Single-channel images are C = 1.
//!
//! Power map (`.pm`): same layout with magic b"RPOW", dims
//! `n_range, n_az, n_el` (3 x u32), the extent
//! `r_start, r_step, az_start, az_step, el_start, el_step` (6 x f64), and
//! f32 cells in `(range, azimuth, elevation)` row-major order.

use crate::cfar::{MapExtent, PowerMap};
use crate::geom::{AngularFov, ImageGeometry};
use crate::projection::{slice_bounds, MultiChannelRangeImage, RangeImage, SliceSpacing};
use crate::{Error, Result};
use ndarray::Array3;
use std::io::Write;
use std::path::Path;

const RANGE_IMAGE_MAGIC: &[u8; 4] = b"RIMG";
const POWER_MAP_MAGIC: &[u8; 4] = b"RPOW";
const FORMAT_VERSION: u32 = 1;

/// Sentinel stored for invalid pixels in the serialized form.
pub const INVALID_RANGE: f32 = -1.0;

struct Writer<W: Write> {
    inner: W,
    context: String,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io(self.context.clone(), e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_owned(),
                message: format!("truncated while reading {what}"),
                offset: Some(self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_owned(),
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
                offset: Some(self.pos),
            });
        }
        Ok(())
    }
}

fn uniform_bounds_match(bounds: &[f64], fov: &AngularFov) -> bool {
    let channels = bounds.len() - 1;
    match slice_bounds(fov, channels, SliceSpacing::Uniform) {
        Ok(uniform) => bounds
            .iter()
            .zip(&uniform)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs())),
        Err(_) => false,
    }
}

/// Serializes a multi-channel range image. Only uniform radial slabs are
/// representable in the format; anything else is a configuration error.
pub fn write_range_image(multi: &MultiChannelRangeImage, path: &Path) -> Result<()> {
    let geom = multi.geometry();
    if !uniform_bounds_match(&multi.slice_bounds, &geom.fov) {
        return Err(Error::config(
            "range-image format stores uniform radial slabs only",
        ));
    }
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = Writer {
        inner: std::io::BufWriter::new(file),
        context: format!("writing {}", path.display()),
    };
    w.bytes(RANGE_IMAGE_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(geom.height as u32)?;
    w.u32(geom.width as u32)?;
    w.u32(multi.channel_count() as u32)?;
    let fov = &geom.fov;
    for v in [
        fov.theta_min,
        fov.theta_max,
        fov.phi_min,
        fov.phi_max,
        fov.r_min,
        fov.r_max,
    ] {
        w.f64(v)?;
    }
    for ch in &multi.channels {
        for row in 0..geom.height {
            for col in 0..geom.width {
                let v = if ch.valid[(row, col)] {
                    ch.ranges[(row, col)] as f32
                } else {
                    INVALID_RANGE
                };
                w.f32(v)?;
            }
        }
    }
    Ok(())
}

/// Convenience wrapper for single-channel images.
pub fn write_single_range_image(img: &RangeImage, path: &Path) -> Result<()> {
    let bounds = vec![img.geometry.fov.r_min, img.geometry.fov.r_max];
    write_range_image(
        &MultiChannelRangeImage {
            channels: vec![img.clone()],
            slice_bounds: bounds,
        },
        path,
    )
}

/// Reads a `.ri` file back; slab bounds are reconstructed as uniform.
pub fn read_range_image(path: &Path) -> Result<MultiChannelRangeImage> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != RANGE_IMAGE_MAGIC {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "bad magic, expected RIMG".into(),
            offset: Some(0),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unsupported version {version}"),
            offset: Some(4),
        });
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let channels = r.u32("channels")? as usize;
    let theta_min = r.f64("theta_min")?;
    let theta_max = r.f64("theta_max")?;
    let phi_min = r.f64("phi_min")?;
    let phi_max = r.f64("phi_max")?;
    let r_min = r.f64("r_min")?;
    let r_max = r.f64("r_max")?;
    let fov = AngularFov::new(theta_min, theta_max, phi_min, phi_max, r_min, r_max)?;
    let geometry = ImageGeometry::new(width, height, fov)?;
    if channels == 0 {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "channel count must be >= 1".into(),
            offset: Some(16),
        });
    }
    let mut chs = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mut img = RangeImage::empty(geometry);
        for row in 0..height {
            for col in 0..width {
                let v = r.f32("range cell")?;
                if v != INVALID_RANGE {
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            path: path.to_owned(),
                            message: "non-finite range value".into(),
                            offset: Some(r.pos - 4),
                        });
                    }
                    img.valid[(row, col)] = true;
                    img.ranges[(row, col)] = v as f64;
                }
            }
        }
        chs.push(img);
    }
    r.done()?;
    Ok(MultiChannelRangeImage {
        channels: chs,
        slice_bounds: slice_bounds(&fov, channels, SliceSpacing::Uniform)?,
    })
}

/// Serializes a power map (`.pm`).
pub fn write_power_map(map: &PowerMap, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = Writer {
        inner: std::io::BufWriter::new(file),
        context: format!("writing {}", path.display()),
    };
    let (n_range, n_az, n_el) = map.dims();
    w.bytes(POWER_MAP_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(n_range as u32)?;
    w.u32(n_az as u32)?;
    w.u32(n_el as u32)?;
    let e = &map.extent;
    for v in [e.r_start, e.r_step, e.az_start, e.az_step, e.el_start, e.el_step] {
        w.f64(v)?;
    }
    for i in 0..n_range {
        for j in 0..n_az {
            for k in 0..n_el {
                w.f32(map.cells[(i, j, k)] as f32)?;
            }
        }
    }
    Ok(())
}

/// Reads a `.pm` power map.
pub fn read_power_map(path: &Path) -> Result<PowerMap> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != POWER_MAP_MAGIC {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "bad magic, expected RPOW".into(),
            offset: Some(0),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unsupported version {version}"),
            offset: Some(4),
        });
    }
    let n_range = r.u32("n_range")? as usize;
    let n_az = r.u32("n_az")? as usize;
    let n_el = r.u32("n_el")? as usize;
    let extent = MapExtent {
        r_start: r.f64("r_start")?,
        r_step: r.f64("r_step")?,
        az_start: r.f64("az_start")?,
        az_step: r.f64("az_step")?,
        el_start: r.f64("el_start")?,
        el_step: r.f64("el_step")?,
    };
    let mut cells = Array3::zeros((n_range, n_az, n_el));
    for i in 0..n_range {
        for j in 0..n_az {
            for k in 0..n_el {
                let v = r.f32("power cell")?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Parse {
                        path: path.to_owned(),
                        message: "power cells must be finite and non-negative".into(),
                        offset: Some(r.pos - 4),
                    });
                }
                cells[(i, j, k)] = v as f64;
            }
        }
    }
    r.done()?;
    PowerMap::new(cells, extent)
}
