//! Binary model checkpoints.
//!
//! Layout, all integers `u32` little-endian, floats `f64` little-endian:
//!
//! ```text
//! magic        8 bytes  "ASCLMDL1"
//! input_dim    u32
//! n_hidden     u32, then n_hidden widths (u32 each)
//! num_classes  u32
//! projection   u8 (0 identity, 1 linear, 2 two_layer), u32 mid, u32 out
//! n_params     u32
//! per param    u32 rank, rank x u32 dims, then the values in row-major order
//! ```
//!
//! Parameters follow [`ModelSpec::param_shapes`] order.

use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelSpec, Projection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ASCLMDL1";

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let spec = model.spec();
    w.write_all(MAGIC)?;
    let put = |w: &mut W, v: usize| w.write_all(&(v as u32).to_le_bytes());
    put(&mut w, spec.input_dim)?;
    put(&mut w, spec.hidden.len())?;
    for &h in &spec.hidden {
        put(&mut w, h)?;
    }
    put(&mut w, spec.num_classes)?;
    let (tag, mid, out) = match spec.projection {
        Projection::Identity => (0u8, 0, 0),
        Projection::Linear { out } => (1, 0, out),
        Projection::TwoLayer { mid, out } => (2, mid, out),
    };
    w.write_all(&[tag])?;
    put(&mut w, mid)?;
    put(&mut w, out)?;
    put(&mut w, model.params().len())?;
    for p in model.params() {
        put(&mut w, p.rank())?;
        for &d in p.shape() {
            put(&mut w, d)?;
        }
        for v in p.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn fail(&self, at: usize, message: String) -> Error {
        Error::Format {
            offset: at as u64,
            message,
        }
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(c.fail(0, "not a model checkpoint (bad magic)".into()));
    }
    let input_dim = c.u32("input_dim")?;
    let n_hidden = c.u32("hidden layer count")?;
    if n_hidden > 1 << 16 {
        return Err(c.fail(c.pos - 4, format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden)
        .map(|_| c.u32("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = c.u32("num_classes")?;
    let tag_at = c.pos;
    let tag = c.take(1, "projection tag")?[0];
    let mid = c.u32("projection mid width")?;
    let out = c.u32("projection out width")?;
    let projection = match tag {
        0 => Projection::Identity,
        1 => Projection::Linear { out },
        2 => Projection::TwoLayer { mid, out },
        t => return Err(c.fail(tag_at, format!("unknown projection tag {t}"))),
    };
    let spec = ModelSpec {
        input_dim,
        hidden,
        num_classes,
        projection,
    };
    spec.validate()
        .map_err(|e| c.fail(8, format!("invalid model spec: {e}")))?;
    let shapes = spec.param_shapes();
    let count_at = c.pos;
    let n_params = c.u32("parameter count")?;
    if n_params != shapes.len() {
        return Err(c.fail(
            count_at,
            format!("spec needs {} parameter arrays, header says {n_params}", shapes.len()),
        ));
    }
    let mut params = Vec::with_capacity(n_params);
    for (i, want) in shapes.iter().enumerate() {
        let shape_at = c.pos;
        let rank = c.u32("parameter rank")?;
        let shape = (0..rank)
            .map(|_| c.u32("parameter dim"))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(c.fail(
                shape_at,
                format!("parameter {i} has shape {shape:?}, spec expects {want:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let bytes = c.take(n * 8, "parameter values")?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(c.fail(c.pos, "trailing bytes after last parameter".into()));
    }
    Model::from_params(spec, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(std::fs::File::open(path)?)
}
