//! Tensor file format (MXT1), bit-exact:
//!
//! ```text
//! magic   4 bytes  "MXT1"
//! rank    u32 LE
//! dims    rank x u32 LE
//! data    product(dims) x f32 LE, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"MXT1";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("bad magic: expected \"MXT1\"")]
    BadMagic,
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unreasonable tensor header ({0} elements)")]
    TooLarge(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<(), TensorIoError> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor_file<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<(), TensorIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor, TensorIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| TensorIoError::Truncated("magic"))?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorIoError::BadMagic);
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| TensorIoError::Truncated("rank"))?;
    let rank = u32::from_le_bytes(buf4) as usize;
    if rank > 16 {
        return Err(TensorIoError::TooLarge(rank as u64));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut total: u64 = 1;
    for _ in 0..rank {
        r.read_exact(&mut buf4)
            .map_err(|_| TensorIoError::Truncated("dims"))?;
        let d = u32::from_le_bytes(buf4) as u64;
        total = total.saturating_mul(d.max(1));
        dims.push(d as usize);
    }
    if total > (1 << 31) {
        return Err(TensorIoError::TooLarge(total));
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf4)
            .map_err(|_| TensorIoError::Truncated("data"))?;
        data.push(f32::from_le_bytes(buf4));
    }
    Ok(Tensor::new(dims, data).expect("lengths match by construction"))
}

pub fn read_tensor_file<P: AsRef<Path>>(path: P) -> Result<Tensor, TensorIoError> {
    read_tensor(BufReader::new(File::open(path)?))
}
