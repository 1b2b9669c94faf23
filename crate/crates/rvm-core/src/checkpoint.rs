//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "RVMC" (4 bytes)
//! u32     format version (currently 1)
//! u64     training step
//! u32     manifest entry count
//! entry*  u16 name_len | name utf-8 | u8 dtype | u8 ndim | u64×ndim dims
//! data*   raw scalars per entry, manifest order
//! ```
//!
//! dtype 0 is f32 (raw IEEE bits), dtype 1 is u64. Model weights appear
//! under their registry names; optimizer moments live under the reserved
//! `__opt.m.*` / `__opt.v.*` names and the generator state under
//! `__rng_state`. Serialization is bit-exact: save → load → save yields
//! identical bytes.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::optim::Moments;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RVMC";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U64: u8 = 1;

const RNG_STATE_NAME: &str = "__rng_state";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub step: u64,
    pub weights: ModelWeights<Tensor<f32>>,
    /// Optimizer moments in registry order.
    pub moments: Vec<Moments>,
    pub rng_state: [u64; 4],
}

enum Payload {
    F32(Vec<f32>),
    U64(Vec<u64>),
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    payload: Payload,
}

fn push_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

impl Checkpoint {
    pub fn new(step: u64, weights: ModelWeights<Tensor<f32>>, moments: Vec<Moments>, rng_state: [u64; 4]) -> Self {
        Checkpoint {
            step,
            weights,
            moments,
            rng_state,
        }
    }

    fn entries(&self) -> Vec<Entry> {
        let mut entries = Vec::new();
        self.weights.visit(&mut |name, t| {
            entries.push(Entry {
                name,
                shape: t.shape().to_vec(),
                payload: Payload::F32(t.data().to_vec()),
            });
        });
        let mut names = Vec::new();
        self.weights.visit(&mut |name, _| names.push(name));
        assert_eq!(
            names.len(),
            self.moments.len(),
            "moments do not match the weight registry"
        );
        for (name, mom) in names.iter().zip(&self.moments) {
            entries.push(Entry {
                name: format!("__opt.m.{name}"),
                shape: vec![mom.m.len()],
                payload: Payload::F32(mom.m.clone()),
            });
            entries.push(Entry {
                name: format!("__opt.v.{name}"),
                shape: vec![mom.v.len()],
                payload: Payload::F32(mom.v.clone()),
            });
        }
        entries.push(Entry {
            name: RNG_STATE_NAME.to_string(),
            shape: vec![4],
            payload: Payload::U64(self.rng_state.to_vec()),
        });
        entries
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.entries();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, VERSION);
        push_u64(&mut buf, self.step);
        push_u32(&mut buf, entries.len() as u32);
        for e in &entries {
            let name = e.name.as_bytes();
            push_u16(&mut buf, name.len() as u16);
            buf.extend_from_slice(name);
            buf.push(match e.payload {
                Payload::F32(_) => DTYPE_F32,
                Payload::U64(_) => DTYPE_U64,
            });
            buf.push(e.shape.len() as u8);
            for &d in &e.shape {
                push_u64(&mut buf, d as u64);
            }
        }
        for e in &entries {
            match &e.payload {
                Payload::F32(v) => {
                    for &x in v {
                        buf.extend_from_slice(&x.to_bits().to_le_bytes());
                    }
                }
                Payload::U64(v) => {
                    for &x in v {
                        push_u64(&mut buf, x);
                    }
                }
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], cfg: &ModelConfig) -> Result<Self> {
        let raw = RawCheckpoint::parse(bytes)?;
        if raw.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                raw.version
            )));
        }
        let mut by_name: HashMap<String, Entry> = raw
            .entries
            .into_iter()
            .map(|e| (e.name.clone(), e))
            .collect();

        let mut take_f32 = |name: &str, shape: Option<&[usize]>| -> Result<Vec<f32>> {
            let e = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if let Some(expect) = shape {
                if e.shape != expect {
                    return Err(Error::Checkpoint(format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        e.shape, expect
                    )));
                }
            }
            match e.payload {
                Payload::F32(v) => Ok(v),
                Payload::U64(_) => Err(Error::Checkpoint(format!("tensor '{name}' is not f32"))),
            }
        };

        // Rebuild the weight skeleton from config, then fill by name.
        let mut weights = ModelWeights::<Tensor<f32>>::init(cfg, 0);
        let mut fill_err = None;
        weights.visit_mut(&mut |name, t| {
            if fill_err.is_some() {
                return;
            }
            match take_f32(&name, Some(t.shape())) {
                Ok(v) => t.data_mut().copy_from_slice(&v),
                Err(e) => fill_err = Some(e),
            }
        });
        if let Some(e) = fill_err {
            return Err(e);
        }

        let mut names = Vec::new();
        weights.visit(&mut |name, _| names.push(name));
        let mut moments = Vec::with_capacity(names.len());
        for name in &names {
            let m = take_f32(&format!("__opt.m.{name}"), None)?;
            let v = take_f32(&format!("__opt.v.{name}"), None)?;
            moments.push(Moments { m, v });
        }

        let rng_entry = by_name
            .remove(RNG_STATE_NAME)
            .ok_or_else(|| Error::Checkpoint("missing __rng_state".into()))?;
        let rng_state = match rng_entry.payload {
            Payload::U64(v) if v.len() == 4 => [v[0], v[1], v[2], v[3]],
            _ => return Err(Error::Checkpoint("malformed __rng_state".into())),
        };

        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor '{extra}'")));
        }

        Ok(Checkpoint {
            step: raw.step,
            weights,
            moments,
            rng_state,
        })
    }

    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, cfg)
    }
}

/// Manifest-level view, independent of any model config (for inspection).
pub struct RawCheckpoint {
    pub version: u32,
    pub step: u64,
    entries: Vec<Entry>,
}

impl RawCheckpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let mut pos = 4;
        let read_u16 = |bytes: &[u8], pos: &mut usize| -> Result<u16> {
            if *pos + 2 > bytes.len() {
                return Err(bad("truncated"));
            }
            let v = u16::from_le_bytes([bytes[*pos], bytes[*pos + 1]]);
            *pos += 2;
            Ok(v)
        };
        let read_u32 = |bytes: &[u8], pos: &mut usize| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(bad("truncated"));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let read_u64 = |bytes: &[u8], pos: &mut usize| -> Result<u64> {
            if *pos + 8 > bytes.len() {
                return Err(bad("truncated"));
            }
            let v = u64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(v)
        };

        let version = read_u32(bytes, &mut pos)?;
        let step = read_u64(bytes, &mut pos)?;
        let count = read_u32(bytes, &mut pos)? as usize;
        let mut metas = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(bytes, &mut pos)? as usize;
            if pos + name_len > bytes.len() {
                return Err(bad("truncated name"));
            }
            let name = std::str::from_utf8(&bytes[pos..pos + name_len])
                .map_err(|_| bad("non-utf8 name"))?
                .to_string();
            pos += name_len;
            if pos + 2 > bytes.len() {
                return Err(bad("truncated entry header"));
            }
            let dtype = bytes[pos];
            let ndim = bytes[pos + 1] as usize;
            pos += 2;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(bytes, &mut pos)? as usize);
            }
            metas.push((name, dtype, shape));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, dtype, shape) in metas {
            let numel: usize = shape.iter().product();
            let payload = match dtype {
                DTYPE_F32 => {
                    if pos + numel * 4 > bytes.len() {
                        return Err(bad("truncated f32 data"));
                    }
                    let mut v = Vec::with_capacity(numel);
                    for i in 0..numel {
                        let bits =
                            u32::from_le_bytes(bytes[pos + i * 4..pos + i * 4 + 4].try_into().unwrap());
                        v.push(f32::from_bits(bits));
                    }
                    pos += numel * 4;
                    Payload::F32(v)
                }
                DTYPE_U64 => {
                    if pos + numel * 8 > bytes.len() {
                        return Err(bad("truncated u64 data"));
                    }
                    let mut v = Vec::with_capacity(numel);
                    for i in 0..numel {
                        v.push(u64::from_le_bytes(
                            bytes[pos + i * 8..pos + i * 8 + 8].try_into().unwrap(),
                        ));
                    }
                    pos += numel * 8;
                    Payload::U64(v)
                }
                other => return Err(bad(&format!("unknown dtype tag {other}"))),
            };
            entries.push(Entry {
                name,
                shape,
                payload,
            });
        }
        Ok(RawCheckpoint {
            version,
            step,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::parse(&bytes)
    }

    /// (name, dtype name, shape) triples in manifest order.
    pub fn manifest(&self) -> Vec<(String, &'static str, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| {
                let dtype = match e.payload {
                    Payload::F32(_) => "f32",
                    Payload::U64(_) => "u64",
                };
                (e.name.clone(), dtype, e.shape.clone())
            })
            .collect()
    }
}
