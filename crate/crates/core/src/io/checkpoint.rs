//! Versioned binary container for training state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "SPLATCKP"
//! version      u32
//! stage        u32 length + UTF-8 bytes
//! count        u32       number of sections
//! table        count × { name: u32 length + UTF-8, kind: u8, length: u64 }
//! payloads     concatenated in table order
//! ```
//!
//! Kind 0 is an f32 tensor (length is a multiple of 4), kind 1 is a UTF-8
//! JSON document, kind 2 is raw bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::rng::RngState;

pub const MAGIC: &[u8; 8] = b"SPLATCKP";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 0;
const KIND_JSON: u8 = 1;
const KIND_BYTES: u8 = 2;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub stage: String,
    pub tensors: BTreeMap<String, Vec<f32>>,
    pub json: BTreeMap<String, serde_json::Value>,
    pub bytes: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            ..Default::default()
        }
    }

    pub fn put_tensor(&mut self, name: &str, data: &[f32]) {
        self.tensors.insert(name.to_string(), data.to_vec());
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        self.tensors
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor section `{name}`")))
    }

    /// A tensor that must hold exactly `len` values.
    pub fn tensor_len(&self, name: &str, len: usize) -> Result<Vec<f32>> {
        let t = self.tensor(name)?;
        if t.len() != len {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {} values, expected {len}",
                t.len()
            )));
        }
        Ok(t.to_vec())
    }

    pub fn put_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.json
            .insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        let v = self
            .json
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing JSON section `{name}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("section `{name}` is malformed: {e}")))
    }

    /// Index list stored as u32 little-endian bytes.
    pub fn put_indices(&mut self, name: &str, idx: &[usize]) {
        self.bytes.insert(
            name.to_string(),
            idx.iter().flat_map(|&i| (i as u32).to_le_bytes()).collect(),
        );
    }

    pub fn indices(&self, name: &str) -> Result<Vec<usize>> {
        let b = self.raw(name)?;
        if b.len() % 4 != 0 {
            return Err(Error::Checkpoint(format!(
                "index section `{name}` has {} bytes",
                b.len()
            )));
        }
        Ok(b.chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    /// f64 values stored as little-endian bytes.
    pub fn put_f64s(&mut self, name: &str, v: &[f64]) {
        self.bytes.insert(
            name.to_string(),
            v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        );
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let b = self.raw(name)?;
        if b.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "f64 section `{name}` has {} bytes",
                b.len()
            )));
        }
        Ok(b.chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn raw(&self, name: &str) -> Result<&[u8]> {
        self.bytes
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Checkpoint(format!("missing byte section `{name}`")))
    }

    pub fn put_rng(&mut self, name: &str, state: &RngState) {
        let mut b = Vec::with_capacity(56);
        b.extend_from_slice(&state.seed);
        b.extend_from_slice(&state.stream.to_le_bytes());
        b.extend_from_slice(&state.word_pos.to_le_bytes());
        self.bytes.insert(name.to_string(), b);
    }

    pub fn rng(&self, name: &str) -> Result<RngState> {
        let b = self
            .bytes
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing generator state `{name}`")))?;
        if b.len() != 56 {
            return Err(Error::Checkpoint(format!(
                "generator state `{name}` has {} bytes, expected 56",
                b.len()
            )));
        }
        Ok(RngState {
            seed: b[..32].try_into().unwrap(),
            stream: u64::from_le_bytes(b[32..40].try_into().unwrap()),
            word_pos: u128::from_le_bytes(b[40..56].try_into().unwrap()),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections: Vec<(&str, u8, Vec<u8>)> = Vec::new();
        for (name, t) in &self.tensors {
            let mut p = Vec::with_capacity(t.len() * 4);
            for v in t {
                p.extend_from_slice(&v.to_le_bytes());
            }
            sections.push((name, KIND_TENSOR, p));
        }
        for (name, v) in &self.json {
            sections.push((name, KIND_JSON, serde_json::to_vec(v)?));
        }
        for (name, b) in &self.bytes {
            sections.push((name, KIND_BYTES, b.clone()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.stage);
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, kind, payload) in &sections {
            put_str(&mut out, name);
            out.push(*kind);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        }
        for (_, _, payload) in &sections {
            out.extend_from_slice(payload);
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let stage = r.string()?;
        let count = r.u32()? as usize;
        // Each table entry takes at least 13 bytes.
        if count > data.len() / 13 {
            return Err(Error::Checkpoint(format!(
                "section count {count} exceeds the file size"
            )));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let kind = r.take(1)?[0];
            let len = r.u64()?;
            table.push((name, kind, len));
        }
        let mut ck = Checkpoint::new(&stage);
        for (name, kind, len) in table {
            let len =
                usize::try_from(len).map_err(|_| Error::Checkpoint("section too large".into()))?;
            let payload = r.take(len)?;
            let duplicate = match kind {
                KIND_TENSOR => {
                    if len % 4 != 0 {
                        return Err(Error::Checkpoint(format!(
                            "tensor `{name}` length {len} is not a multiple of 4"
                        )));
                    }
                    let t = payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    ck.tensors.insert(name.clone(), t).is_some()
                }
                KIND_JSON => {
                    let v = serde_json::from_slice(payload).map_err(|e| {
                        Error::Checkpoint(format!("section `{name}` is not valid JSON: {e}"))
                    })?;
                    ck.json.insert(name.clone(), v).is_some()
                }
                KIND_BYTES => ck.bytes.insert(name.clone(), payload.to_vec()).is_some(),
                other => {
                    return Err(Error::Checkpoint(format!(
                        "section `{name}` has unknown kind {other}"
                    )))
                }
            };
            if duplicate {
                return Err(Error::Checkpoint(format!("section `{name}` appears twice")));
            }
        }
        if r.pos != data.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last section",
                data.len() - r.pos
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| {
            Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Self::from_bytes(&data)
    }

    /// Fails unless the checkpoint was written by one of `stages`.
    pub fn expect_stage(&self, stages: &[&str]) -> Result<()> {
        if stages.contains(&self.stage.as_str()) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint holds stage `{}`, expected one of {:?}",
                self.stage, stages
            )))
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "file truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))
    }
}
