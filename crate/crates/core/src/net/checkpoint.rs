//! Binary checkpoint format.
//!
//! ```text
//! "ADVAUG01"
//! u32 layer count
//! per layer: u8 kind, u32 dim count, u32 dims[], f32 params (weights then bias)
//! u32 CRC32 of every preceding byte
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerSpec, Network, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVAUG01";

pub fn write_network<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + net.param_count() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let spec = layer.spec();
        buf.push(spec.kind_id());
        let dims = spec.dims();
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in layer.params() {
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptFile("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_network<R: Read>(mut r: R) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(Error::CorruptFile("checkpoint too short".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptFile("bad checkpoint magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptFile("checkpoint CRC mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let n_layers = cur.u32()? as usize;
    let mut parts = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = cur.u8()?;
        let n_dims = cur.u32()? as usize;
        if n_dims > 8 {
            return Err(Error::CorruptFile(format!("layer with {n_dims} dims")));
        }
        let dims = (0..n_dims).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let spec = LayerSpec::from_parts(kind, &dims).map_err(|e| Error::CorruptFile(e.to_string()))?;
        let mut params = Vec::new();
        for shape in spec.param_shapes() {
            let n: usize = shape.iter().product();
            if n > body.len() {
                return Err(Error::CorruptFile("parameter payload larger than file".into()));
            }
            let data = (0..n).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptFile("non-finite parameter".into()));
            }
            params.push(Tensor::new(shape, data)?);
        }
        parts.push((spec, params));
    }
    if cur.pos != body.len() {
        return Err(Error::CorruptFile("trailing bytes after the last layer".into()));
    }
    Network::from_parts(parts).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_network(net, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_network(fs::File::open(path)?)
}
