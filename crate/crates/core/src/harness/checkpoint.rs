//! Single-file binary checkpoints.
//!
//! ```text
//! "HFSC" | u32 version | u64 step | u64 optimizer step
//! | u32 len | config JSON
//! | u32 count | count × (u32 len | name | u32 rank | rank × u32 dim | f32 data…)
//! ```
//!
//! All integers and floats are little-endian. Optimizer moments are stored
//! as tensors named `adam.m/<param>` and `adam.v/<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{OptimState, ParamSet, Tensor};

use super::config::ExperimentConfig;

pub const MAGIC: &[u8; 4] = b"HFSC";
pub const VERSION: u32 = 1;

const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: u64,
    pub params: ParamSet<f32>,
    pub optim: OptimState<f32>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        put_u32(buf, d)?;
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&self.optim.step.to_le_bytes());
        let json = serde_json::to_vec(&self.config)?;
        put_u32(&mut buf, json.len())?;
        buf.extend_from_slice(&json);
        put_u32(&mut buf, self.params.len() + 2 * self.optim.moments.len())?;
        for (name, t) in self.params.iter() {
            put_tensor(&mut buf, name, t)?;
        }
        for (name, (m, v)) in &self.optim.moments {
            put_tensor(&mut buf, &format!("{MOMENT_M}{name}"), m)?;
            put_tensor(&mut buf, &format!("{MOMENT_V}{name}"), v)?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let step = r.u64()?;
        let optim_step = r.u64()?;
        let len = r.u32()? as usize;
        let config: ExperimentConfig = serde_json::from_slice(r.take(len)?)?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        let mut ms = BTreeMap::new();
        let mut vs = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&shape, data)?;
            if let Some(p) = name.strip_prefix(MOMENT_M) {
                ms.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(MOMENT_V) {
                vs.insert(p.to_string(), t);
            } else {
                params.insert(name, t)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut moments = BTreeMap::new();
        for (name, m) in ms {
            let v = vs
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("second moment of `{name}` missing")))?;
            moments.insert(name, (m, v));
        }
        if let Some(name) = vs.keys().next() {
            return Err(Error::Format(format!("first moment of `{name}` missing")));
        }
        Ok(Self {
            config,
            step,
            params,
            optim: OptimState {
                step: optim_step,
                moments,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
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
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}
