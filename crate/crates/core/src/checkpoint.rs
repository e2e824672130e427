//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        8 bytes  "GNPPNET1"
//! version      u32      1
//! arch_len     u32
//! arch         arch_len bytes, UTF-8 architecture string
//! param_count  u32
//! per parameter:
//!   shape      4 x u32  (n, c, h, w)
//!   data       n*c*h*w x f32
//! input shape  4 x u32  (1, c, h, w)
//! seed         u64
//! epoch        u32
//! ```

use std::fs;
use std::path::Path;

use crate::arch::parse_arch;
use crate::error::{Error, Result};
use crate::network::{build_network, Network, Placement};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: &[u8; 8] = b"GNPPNET1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_text: String,
    pub params: Vec<Tensor4<f32>>,
    pub input_shape: Shape4,
    pub seed: u64,
    pub epoch: u32,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, epoch: u32) -> Self {
        Checkpoint {
            arch_text: net.arch().source_text.clone(),
            params: net.params().into_iter().map(|p| p.cast()).collect(),
            input_shape: net.input_shape(),
            seed: net.seed(),
            epoch,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((self.arch_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.arch_text.as_bytes());
        out.extend((self.params.len() as u32).to_le_bytes());
        let put_shape = |out: &mut Vec<u8>, s: Shape4| {
            for d in [s.n, s.c, s.h, s.w] {
                out.extend((d as u32).to_le_bytes());
            }
        };
        for p in &self.params {
            put_shape(&mut out, p.shape());
            for v in p.data() {
                out.extend(v.to_le_bytes());
            }
        }
        put_shape(&mut out, self.input_shape);
        out.extend(self.seed.to_le_bytes());
        out.extend(self.epoch.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected \"GNPPNET1\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let arch_len = r.u32()? as usize;
        let arch_text = String::from_utf8(r.take(arch_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("architecture text is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let shape = r.shape()?;
            let len = shape
                .checked_len()
                .ok_or_else(|| Error::Checkpoint(format!("parameter shape {shape} overflows")))?;
            let raw = r.take(
                len.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("parameter too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(Tensor4::from_vec(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        let input_shape = r.shape()?;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let epoch = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            arch_text,
            params,
            input_shape,
            seed,
            epoch,
        })
    }

    pub fn into_network<T: Scalar>(self) -> Result<Network<T>> {
        let arch = parse_arch(&self.arch_text)?;
        let mut net = build_network::<T>(&arch, self.input_shape, self.seed, Placement::Relaxed)?;
        net.set_params(self.params.iter().map(|p| p.cast()).collect())?;
        Ok(net)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn shape(&mut self) -> Result<Shape4> {
        Ok(Shape4::new(
            self.u32()? as usize,
            self.u32()? as usize,
            self.u32()? as usize,
            self.u32()? as usize,
        ))
    }
}

pub fn checkpoint_save<T: Scalar>(net: &Network<T>, epoch: u32, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, Checkpoint::from_network(net, epoch).to_bytes())?;
    Ok(())
}

pub fn checkpoint_load<T: Scalar>(path: impl AsRef<Path>) -> Result<(Network<T>, Checkpoint)> {
    let ckpt = Checkpoint::from_bytes(&fs::read(path)?)?;
    let net = ckpt.clone().into_network()?;
    Ok((net, ckpt))
}
