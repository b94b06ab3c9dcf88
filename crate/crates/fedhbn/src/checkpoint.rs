//! Versioned binary checkpoints.
//!
//! ```text
//! "FHBN"  u32 version  u32 round  str norm
//! u32 count, then per parameter:  str name  u32 ndim  u64 dims…  f32 data…
//! u32 count, then per hybrid layer:  u64 count  u32 channels  f64 sum…  f64 sumsq…
//! u32 count, then per hybrid layer:  u32 channels  f64 mean…  f64 var…
//! u32 count, then per buffer:  str name  u32 channels  f64 mean…  f64 var…
//! ```
//!
//! Integers and floats are little-endian; `str` is a u32 byte length followed
//! by UTF-8. Hybrid factors α are client-local and never written.

use std::fs;
use std::path::Path;

use fedhbn_core::federation::GlobalModel;
use fedhbn_core::nn::{ModelParams, NamedTensor};
use fedhbn_core::norm::{ChannelStats, Moments, NormKind};
use fedhbn_core::Tensor;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"FHBN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u32,
    pub norm: NormKind,
    pub weights: ModelParams,
    /// Pooled sufficient statistics of the last statistics round.
    pub stats: Vec<ChannelStats>,
    /// Global `(μ_g, σ²_g)` per hybrid layer.
    pub global: Vec<Moments>,
    pub buffers: Vec<(String, Moments)>,
}

impl Checkpoint {
    pub fn from_global(norm: NormKind, global: &GlobalModel, stats: Vec<ChannelStats>) -> Self {
        Self {
            round: global.round,
            norm,
            weights: global.weights.clone(),
            stats,
            global: global.stats.clone(),
            buffers: global.buffers.clone(),
        }
    }

    pub fn to_global(&self) -> GlobalModel {
        GlobalModel {
            weights: self.weights.clone(),
            stats: self.global.clone(),
            buffers: self.buffers.clone(),
            round: self.round,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section length fits in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn moments(&mut self, m: &Moments) {
        self.len(m.channels());
        self.f64s(&m.mean);
        self.f64s(&m.var);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
    fn moments(&mut self) -> Result<Moments> {
        let c = self.len()?;
        let mean = self.f64s(c)?;
        let var = self.f64s(c)?;
        Ok(Moments::new(mean, var)?)
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(ck.round);
    w.str(ck.norm.as_str());
    w.len(ck.weights.len());
    for p in &ck.weights {
        w.str(&p.name);
        w.len(p.tensor.ndim());
        for &d in p.tensor.shape() {
            w.u64(d as u64);
        }
        for v in p.tensor.data() {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.len(ck.stats.len());
    for s in &ck.stats {
        w.u64(s.count);
        w.len(s.channels());
        w.f64s(&s.sum);
        w.f64s(&s.sumsq);
    }
    w.len(ck.global.len());
    for m in &ck.global {
        w.moments(m);
    }
    w.len(ck.buffers.len());
    for (name, m) in &ck.buffers {
        w.str(name);
        w.moments(m);
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let round = r.u32()?;
    let norm: NormKind = r.str()?.parse()?;
    let mut weights = Vec::new();
    for _ in 0..r.len()? {
        let name = r.str()?;
        let ndim = r.len()?;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        weights.push(NamedTensor {
            name,
            tensor: Tensor::new(&shape, data)?,
        });
    }
    let mut stats = Vec::new();
    for _ in 0..r.len()? {
        let count = r.u64()?;
        let c = r.len()?;
        stats.push(ChannelStats {
            count,
            sum: r.f64s(c)?,
            sumsq: r.f64s(c)?,
        });
    }
    let global = (0..r.len()?)
        .map(|_| r.moments())
        .collect::<Result<Vec<_>>>()?;
    let mut buffers = Vec::new();
    for _ in 0..r.len()? {
        let name = r.str()?;
        buffers.push((name, r.moments()?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        round,
        norm,
        weights,
        stats,
        global,
        buffers,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ck)).at(path)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).at(path)?)
}
