//! `SNKT1` parameter checkpoints.
//!
//! All integers are little-endian `u32`:
//!
//! ```text
//! "SNKT1"                      5-byte magic
//! meta_len, meta[meta_len]     UTF-8 "key=value\n" lines
//! count                        number of tensors
//! repeated count times:
//!   name_len, name[name_len]   UTF-8 parameter name
//!   rank, dims[rank]
//!   data[prod(dims)]           f32 little-endian
//! ```
//!
//! Float payloads are copied bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StereoNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SNKT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("name is not UTF-8"))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad("field exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>) -> Self {
        Self {
            metadata: BTreeMap::new(),
            tensors: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every tensor of `store` from the checkpoint; names and shapes
    /// must match exactly.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        for p in store.iter_mut() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| bad(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(bad(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(bad(format!("metadata entry {k:?} cannot be encoded")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        put_u32(&mut out, meta.len())?;
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing SNKT1 magic"));
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let meta = r.string()?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("metadata line without '='"))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("shape overflows"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| bad("shape overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?));
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

impl StereoNet<f32> {
    /// Parameters plus the architecture keys needed to rebuild the network.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.params);
        let c = &self.config;
        for (k, v) in [
            ("k", c.k.to_string()),
            ("max_disparity", c.max_disparity.to_string()),
            ("channels", c.channels.to_string()),
            ("refiner_channels", c.refiner_channels.to_string()),
            ("mode", c.mode.to_string()),
        ] {
            ck.metadata.insert(k.into(), v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |key: &str| -> Result<&str> {
            ck.metadata
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| bad(format!("metadata key {key} missing")))
        };
        let num = |key: &str| -> Result<usize> {
            let v = field(key)?;
            v.parse().map_err(|_| bad(format!("metadata {key}={v} is not an integer")))
        };
        let config = ModelConfig {
            k: num("k")?,
            max_disparity: num("max_disparity")?,
            channels: num("channels")?,
            refiner_channels: num("refiner_channels")?,
            mode: field("mode")?.parse()?,
        };
        let mut net = StereoNet::new(config, 0)?;
        ck.load_into(&mut net.params)?;
        Ok(net)
    }
}
