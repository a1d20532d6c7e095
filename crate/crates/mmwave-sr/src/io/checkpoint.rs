//! Versioned binary checkpoints: the model configuration followed by named
//! tensors stored as little-endian f32.
//!
//! ```text
//! offset  size  field
//! 0       4     magic b"MWCK"
//! 4       4     version (u32) = 1
//! 8       32    config: target_h, target_w, cond_channels, cond_h, cond_w,
//!               base_channels, cond_features, emb_dim (8 x u32)
//! 40      8     config: data_std (f64)
//! 48      4     tensor count (u32)
//! ...           per tensor: name_len (u32), name (utf8), ndim (u32),
//!               dims (ndim x u32), values (f32 x prod(dims))
//! ```
//!
//! Parameters train in f64 and are rounded to f32 on save; loading restores
//! the f32 values exactly.

use crate::model::{ModelConfig, ToyDenoiser};
use crate::rng::SeededRng;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"MWCK";
const VERSION: u32 = 1;

/// Writes the model's configuration and every parameter tensor.
pub fn save_checkpoint(model: &mut ToyDenoiser, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, Vec<u32>, Vec<f32>)> = Vec::new();
    model.visit_params(&mut |name, p, _| {
        let dims: Vec<u32> = p.shape().iter().map(|&d| d as u32).collect();
        let values: Vec<f32> = p.iter().map(|&v| v as f32).collect();
        tensors.push((name, dims, values));
    });
    let cfg = model.config;

    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    for v in [
        cfg.target_h,
        cfg.target_w,
        cfg.cond_channels,
        cfg.cond_h,
        cfg.cond_w,
        cfg.base_channels,
        cfg.cond_features,
        cfg.emb_dim,
    ] {
        w.write_all(&(v as u32).to_le_bytes()).map_err(io_err)?;
    }
    w.write_all(&cfg.data_std.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for (name, dims, values) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(dims.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for d in dims {
            w.write_all(&d.to_le_bytes()).map_err(io_err)?;
        }
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
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
    fn u(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reconstructs a model from a checkpoint. Tensor names and shapes must
/// match the architecture implied by the stored configuration exactly.
pub fn load_checkpoint(path: &Path) -> Result<ToyDenoiser> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: "bad magic, expected MWCK".into(),
            offset: Some(0),
        });
    }
    let version = c.u("version")?;
    if version != VERSION as usize {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unsupported version {version}"),
            offset: Some(4),
        });
    }
    let config = ModelConfig {
        target_h: c.u("target_h")?,
        target_w: c.u("target_w")?,
        cond_channels: c.u("cond_channels")?,
        cond_h: c.u("cond_h")?,
        cond_w: c.u("cond_w")?,
        base_channels: c.u("base_channels")?,
        cond_features: c.u("cond_features")?,
        emb_dim: c.u("emb_dim")?,
        data_std: c.f64("data_std")?,
    };
    let tensor_count = c.u("tensor count")?;
    let mut stored: std::collections::HashMap<String, (Vec<usize>, Vec<f64>)> =
        std::collections::HashMap::new();
    for _ in 0..tensor_count {
        let name_len = c.u("name length")?;
        let name_pos = c.pos;
        let name = String::from_utf8(c.take(name_len, "tensor name")?.to_vec()).map_err(|_| {
            Error::Parse {
                path: path.to_owned(),
                message: "tensor name is not UTF-8".into(),
                offset: Some(name_pos),
            }
        })?;
        let ndim = c.u("ndim")?;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(c.u("dim")?);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = c.take(4, "tensor value")?;
            values.push(f32::from_le_bytes(raw.try_into().unwrap()) as f64);
        }
        stored.insert(name, (dims, values));
    }
    if c.pos != bytes.len() {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("{} trailing bytes", bytes.len() - c.pos),
            offset: Some(c.pos),
        });
    }

    // Build the architecture and fill it from the stored tensors.
    let mut model = ToyDenoiser::new(config, &mut SeededRng::new(0))?;
    let mut missing = Vec::new();
    let mut used = std::collections::HashSet::new();
    let mut fill_error: Option<Error> = None;
    model.visit_params(&mut |name, mut p, _| {
        if fill_error.is_some() {
            return;
        }
        match stored.get(&name) {
            Some((dims, values)) => {
                used.insert(name.clone());
                let expect: Vec<usize> = p.shape().to_vec();
                if dims != &expect {
                    fill_error = Some(Error::Parse {
                        path: path.to_owned(),
                        message: format!("tensor {name}: shape {dims:?}, expected {expect:?}"),
                        offset: None,
                    });
                    return;
                }
                for (slot, v) in p.iter_mut().zip(values.iter()) {
                    *slot = *v;
                }
            }
            None => missing.push(name),
        }
    });
    if let Some(e) = fill_error {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("missing tensors: {missing:?}"),
            offset: None,
        });
    }
    if used.len() != stored.len() {
        let extra: Vec<&String> = stored.keys().filter(|k| !used.contains(*k)).collect();
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unknown tensors: {extra:?}"),
            offset: None,
        });
    }
    Ok(model)
}
