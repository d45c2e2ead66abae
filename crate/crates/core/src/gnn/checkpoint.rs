use std::fs;
use std::path::Path;

use super::{Dims, NetworkParams};
use crate::{Error, Result};

pub const ENSEMBLE_SIZE: usize = 5;
const MODEL_MAGIC: &[u8; 4] = b"GTGM";
const ENSEMBLE_MAGIC: &[u8; 4] = b"GTGE";
const VERSION: u32 = 1;

/// A named, shaped block of `f32` values as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Five independently trained scorers and the seeds they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<NetworkParams<f32>>,
    pub seeds: Vec<u64>,
}

impl Ensemble {
    pub fn new(members: Vec<NetworkParams<f32>>, seeds: Vec<u64>) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE || seeds.len() != ENSEMBLE_SIZE {
            return Err(Error::Shape(format!(
                "ensemble needs {ENSEMBLE_SIZE} members and seeds, got {} and {}",
                members.len(),
                seeds.len()
            )));
        }
        Ok(Ensemble { members, seeds })
    }
}

fn named_tensors(p: &NetworkParams<f32>) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = p
        .slots()
        .into_iter()
        .map(|s| (s.name, Tensor { shape: s.shape, data: s.data.to_vec() }))
        .collect();
    out.push(("config.bn_momentum".into(), Tensor { shape: vec![1], data: vec![p.bn_momentum] }));
    out.push(("config.bn_eps".into(), Tensor { shape: vec![1], data: vec![p.bn_eps] }));
    out
}

fn encode_model(p: &NetworkParams<f32>, out: &mut Vec<u8>) {
    let tensors = named_tensors(p);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(chunk)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_model(r: &mut Reader<'_>) -> Result<NetworkParams<f32>> {
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let count = r.u32()? as usize;
    let mut stored = std::collections::HashMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format(format!("tensor name at byte {} is not UTF-8", r.pos)))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        stored.insert(name, Tensor { shape, data });
    }
    let shape_of = |name: &str| {
        stored
            .get(name)
            .map(|t| t.shape.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))
    };
    let (w1, p1, p2) = (shape_of("enc.W1")?, shape_of("pred.W1")?, shape_of("pred.W2")?);
    if w1.len() != 2 || p1.len() != 2 || p2.len() != 2 {
        return Err(Error::Format("weight tensors must be rank 2".into()));
    }
    let dims = Dims {
        d_in: w1[1],
        d_h: w1[0],
        pred_hidden: [p1[0], p2[0]],
    };
    let mut params = NetworkParams::<f32>::zeros(dims);
    for slot in params.slots_mut() {
        let t = stored
            .get(&slot.name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {}", slot.name)))?;
        if t.shape != slot.shape {
            return Err(Error::Format(format!("tensor {} has shape {:?}, expected {:?}", slot.name, t.shape, slot.shape)));
        }
        slot.data.copy_from_slice(&t.data);
    }
    let scalar = |name: &str| -> Result<f32> {
        match stored.get(name) {
            Some(t) if t.data.len() == 1 => Ok(t.data[0]),
            Some(_) => Err(Error::Format(format!("tensor {name} must hold one value"))),
            None => Err(Error::Format(format!("checkpoint is missing tensor {name}"))),
        }
    };
    params.bn_momentum = scalar("config.bn_momentum")?;
    params.bn_eps = scalar("config.bn_eps")?;
    Ok(params)
}

/// The exact bytes [`save_checkpoint`] writes.
pub fn checkpoint_bytes(p: &NetworkParams<f32>) -> Vec<u8> {
    let mut bytes = Vec::new();
    encode_model(p, &mut bytes);
    bytes
}

pub fn save_checkpoint(p: &NetworkParams<f32>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let p = decode_model(&mut r).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes after checkpoint", path.display())));
    }
    Ok(p)
}

/// Header, five length-prefixed member checkpoints, then the seed list.
pub fn save_ensemble(e: &Ensemble, path: &Path) -> Result<()> {
    let e = Ensemble::new(e.members.clone(), e.seeds.clone())?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(ENSEMBLE_MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(ENSEMBLE_SIZE as u32).to_le_bytes());
    for m in &e.members {
        let mut section = Vec::new();
        encode_model(m, &mut section);
        bytes.extend_from_slice(&(section.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&section);
    }
    bytes.extend_from_slice(&(e.seeds.len() as u32).to_le_bytes());
    for s in &e.seeds {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let wrap = |e: Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4).map_err(wrap)? != ENSEMBLE_MAGIC {
        return Err(wrap(Error::Format("not an ensemble file (bad magic)".into())));
    }
    let version = r.u32().map_err(wrap)?;
    if version != VERSION {
        return Err(wrap(Error::Format(format!("ensemble version {version}, expected {VERSION}"))));
    }
    let count = r.u32().map_err(wrap)? as usize;
    if count != ENSEMBLE_SIZE {
        return Err(wrap(Error::Format(format!("ensemble has {count} members, expected {ENSEMBLE_SIZE}"))));
    }
    let mut members = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u64().map_err(wrap)? as usize;
        let section = r.take(len).map_err(wrap)?;
        let mut sr = Reader { bytes: section, pos: 0 };
        let m = decode_model(&mut sr).map_err(|e| wrap(Error::Format(format!("member {i}: {e}"))))?;
        members.push(m);
    }
    let n_seeds = r.u32().map_err(wrap)? as usize;
    let seeds = (0..n_seeds).map(|_| r.u64()).collect::<Result<Vec<_>>>().map_err(wrap)?;
    if r.pos != bytes.len() {
        return Err(wrap(Error::Format("trailing bytes after ensemble".into())));
    }
    Ensemble::new(members, seeds).map_err(wrap)
}
