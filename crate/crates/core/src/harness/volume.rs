//! Minimal raw volume files.
//!
//! Layout: the 8-byte magic `RF3DVOL1`, one dtype byte (0 = f32, 1 = u8
//! labels), one rank byte, `rank` little-endian u64 extents, then the
//! elements in row-major little-endian order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RF3DVOL1";
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Contents of a volume file.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Intensities(Tensor<f32>),
    Labels { shape: Vec<usize>, data: Vec<u8> },
}

impl Volume {
    pub fn shape(&self) -> &[usize] {
        match self {
            Volume::Intensities(t) => t.shape(),
            Volume::Labels { shape, .. } => shape,
        }
    }
}

fn header(dtype: u8, shape: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * shape.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    out.push(shape.len() as u8);
    for &s in shape {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out
}

pub fn encode(v: &Volume) -> Vec<u8> {
    match v {
        Volume::Intensities(t) => {
            let mut out = header(DTYPE_F32, t.shape());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        Volume::Labels { shape, data } => {
            let mut out = header(DTYPE_U8, shape);
            out.extend_from_slice(data);
            out
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    let bad = |m: String| Error::Volume(m);
    if bytes.len() < 10 || &bytes[..8] != MAGIC {
        return Err(bad("missing volume magic".into()));
    }
    let (dtype, rank) = (bytes[8], bytes[9] as usize);
    let body = 10 + 8 * rank;
    if bytes.len() < body {
        return Err(bad("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[10..body]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |a, &s| a.checked_mul(s))
        .ok_or_else(|| bad(format!("extents {:?} overflow", shape)))?;
    let data = &bytes[body..];
    match dtype {
        DTYPE_F32 => {
            if Some(data.len()) != n.checked_mul(4) {
                return Err(bad(format!("expected {} f32 elements, found {} bytes", n, data.len())));
            }
            let v = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok(Volume::Intensities(Tensor::new(shape, v)?))
        }
        DTYPE_U8 => {
            if data.len() != n {
                return Err(bad(format!("expected {} label bytes, found {}", n, data.len())));
            }
            Ok(Volume::Labels {
                shape,
                data: data.to_vec(),
            })
        }
        d => Err(bad(format!("unknown dtype tag {d}"))),
    }
}

pub fn write(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    std::fs::write(path, encode(v))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume> {
    decode(&std::fs::read(path)?)
}
