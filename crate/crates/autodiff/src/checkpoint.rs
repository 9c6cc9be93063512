//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `GSLB`, `u32` version, `u8` float width,
//! `u32` parameter count, then per parameter `u32` name length, UTF-8 name,
//! `u32` rank, `u64` dims, row-major values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSLB";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_params<F: Float, W: Write>(params: &ParamSet<F>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + params.num_values() * F::WIDTH as usize);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(F::WIDTH);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_params<F: Float, R: Read>(mut r: R) -> Result<ParamSet<F>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let width = cur.take(1)?[0];
    if width != F::WIDTH {
        return Err(AutodiffError::Checkpoint(format!(
            "stored float width {width} bytes, expected {}",
            F::WIDTH
        )));
    }
    let count = cur.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| AutodiffError::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let w = F::WIDTH as usize;
        let raw = cur.take(n * w)?;
        let data = raw.chunks_exact(w).map(F::read_le).collect();
        params.insert(&name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_params<F: Float>(params: &ParamSet<F>, path: &Path) -> Result<()> {
    write_params(params, BufWriter::new(File::create(path)?))
}

pub fn load_params<F: Float>(path: &Path) -> Result<ParamSet<F>> {
    read_params(BufReader::new(File::open(path)?))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AutodiffError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
