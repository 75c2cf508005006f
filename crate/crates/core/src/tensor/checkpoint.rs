//! `DRNW` parameter files.
//!
//! Layout (little endian): magic `DRNW`, u32 version, u32 tensor count, then
//! per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DRNW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<checkpoint stream>".into(),
        source: e,
    }
}

pub fn write_checkpoint<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len())
            .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(nb);
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Config(format!("tensor {name} has rank {}", t.rank())))?;
        buf.push(rank);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(
                "checkpoint",
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::corrupt("checkpoint", format!("bad magic {magic:?}")));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::corrupt("checkpoint", format!("unsupported version {version}")));
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::corrupt("checkpoint", "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::corrupt("checkpoint", format!("{name}: dims overflow")))?;
        let bytes = c.take(n.checked_mul(4).unwrap_or(usize::MAX), "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::corrupt(
            "checkpoint",
            format!("{} trailing bytes", buf.len() - c.pos),
        ));
    }
    Ok(out)
}
