//! ASCII PLY point-cloud export/import (x, y, z float properties only).

use crate::geom::{FrameId, Point3, PointCloud};
use crate::{Error, Result};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Writes an ASCII PLY with float x/y/z vertex properties. Values are
/// written at f32 precision.
pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    cloud.check_finite()?;
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    writeln!(w, "ply").map_err(io_err)?;
    writeln!(w, "format ascii 1.0").map_err(io_err)?;
    writeln!(w, "element vertex {}", cloud.len()).map_err(io_err)?;
    writeln!(w, "property float x").map_err(io_err)?;
    writeln!(w, "property float y").map_err(io_err)?;
    writeln!(w, "property float z").map_err(io_err)?;
    writeln!(w, "end_header").map_err(io_err)?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).map_err(io_err)?;
    }
    Ok(())
}

/// Reads an ASCII PLY written by [`write_ply`] (or compatible: comments are
/// skipped; exactly the three float x/y/z properties are accepted).
pub fn read_ply(path: &Path, frame_id: impl Into<FrameId>) -> Result<PointCloud> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |message: String| Error::Parse {
        path: path.to_owned(),
        message,
        offset: None,
    };
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?
            .ok_or_else(|| parse_err(format!("unexpected end of file, expected {what}")))
    };

    if next_line("magic")?.trim() != "ply" {
        return Err(parse_err("missing `ply` magic".into()));
    }
    if next_line("format")?.trim() != "format ascii 1.0" {
        return Err(parse_err("only `format ascii 1.0` is supported".into()));
    }
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let line = next_line("header")?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if line.starts_with("comment") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad vertex count `{rest}`")))?,
            );
        } else if let Some(rest) = line.strip_prefix("property ") {
            properties.push(rest.trim().to_owned());
        } else if line.starts_with("element") {
            return Err(parse_err(format!("unsupported element `{line}`")));
        } else {
            return Err(parse_err(format!("unrecognized header line `{line}`")));
        }
    }
    let n = vertex_count.ok_or_else(|| parse_err("missing `element vertex`".into()))?;
    if properties != ["float x", "float y", "float z"] {
        return Err(parse_err(format!(
            "expected float x/y/z properties, got {properties:?}"
        )));
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let line = next_line("vertex row")
            .map_err(|_| parse_err(format!("vertex count says {n}, file ends at row {i}")))?;
        let mut it = line.split_whitespace();
        let mut coord = |axis: &str| -> Result<f64> {
            it.next()
                .ok_or_else(|| parse_err(format!("row {i}: missing {axis}")))?
                .parse::<f64>()
                .map_err(|_| parse_err(format!("row {i}: bad {axis} value")))
        };
        let p = Point3::new(coord("x")?, coord("y")?, coord("z")?);
        if !p.is_finite() {
            return Err(parse_err(format!("row {i}: non-finite coordinate")));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, frame_id))
}
