//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "SPLB"            4 bytes magic
//! version           u32 (= 1)
//! epochs            u64
//! seed              u64
//! regime            u32 length + UTF-8 bytes
//! input rank        u32, then rank × u32 dims
//! layer count       u32
//! per layer         u8 tag (0 dense, 1 conv), u8 has_bias,
//!                   dense: u32 out, u32 in
//!                   conv:  u32 out_ch, u32 in_ch, u32 k
//! parameters        per layer: weights then bias, f64
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConvLayer, DenseLayer, Layer, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPLB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: u64,
    pub regime: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: TrainMeta,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.buf.len() {
            return Err(Error::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()? as usize;
        if v == 0 || v > 1 << 24 {
            return Err(Error::Malformed(format!("dimension {v}")));
        }
        Ok(v)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn encode_checkpoint(net: &Network, meta: &TrainMeta) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u64(meta.epochs);
    w.u64(meta.seed);
    w.u32(meta.regime.len());
    w.0.extend_from_slice(meta.regime.as_bytes());
    w.u32(net.input_shape().len());
    for &d in net.input_shape() {
        w.u32(d);
    }
    w.u32(net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                w.u8(0);
                w.u8(d.has_bias as u8);
                w.u32(d.out_dim);
                w.u32(d.in_dim);
            }
            Layer::Conv(c) => {
                w.u8(1);
                w.u8(c.has_bias as u8);
                w.u32(c.out_ch);
                w.u32(c.in_ch);
                w.u32(c.k);
            }
        }
    }
    for layer in net.layers() {
        w.f64s(layer.weights());
        w.f64s(layer.bias());
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let epochs = r.u64()?;
    let seed = r.u64()?;
    let rlen = r.u32()? as usize;
    let regime = String::from_utf8(r.take(rlen)?.to_vec()).map_err(|_| Error::Malformed("regime is not UTF-8".into()))?;
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 3 {
        return Err(Error::Malformed(format!("input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let nlayers = r.u32()? as usize;
    if nlayers == 0 || nlayers > 1024 {
        return Err(Error::Malformed(format!("layer count {nlayers}")));
    }
    let mut layers = Vec::with_capacity(nlayers);
    for _ in 0..nlayers {
        let tag = r.u8()?;
        let has_bias = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Malformed(format!("bias flag {b}"))),
        };
        layers.push(match tag {
            0 => {
                let (out_dim, in_dim) = (r.dim()?, r.dim()?);
                Layer::Dense(DenseLayer { out_dim, in_dim, weight: Vec::new(), bias: Vec::new(), has_bias })
            }
            1 => {
                let (out_ch, in_ch, k) = (r.dim()?, r.dim()?, r.dim()?);
                Layer::Conv(ConvLayer { out_ch, in_ch, k, kernels: Vec::new(), bias: Vec::new(), has_bias })
            }
            t => return Err(Error::Malformed(format!("layer tag {t}"))),
        });
    }
    for layer in &mut layers {
        match layer {
            Layer::Dense(d) => {
                d.weight = r.f64s(d.out_dim * d.in_dim)?;
                d.bias = r.f64s(d.out_dim)?;
            }
            Layer::Conv(c) => {
                c.kernels = r.f64s(c.out_ch * c.in_ch * c.k * c.k)?;
                c.bias = r.f64s(c.out_ch)?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let network = Network::new(input_shape, layers).map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(Checkpoint { network, meta: TrainMeta { epochs, regime, seed } })
}

pub fn save_checkpoint(net: &Network, meta: &TrainMeta, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
