//! Binary model snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FUSENET\0"  u32 version  u32 len + JSON header
//! repeated:     u32 len + path  u8 precision  u32 rank  u64 dims[rank]  payload
//! u32 CRC32 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneKind;
use crate::error::{bail, Error, Result};
use crate::model::{FusionModel, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Element, Precision, Tensor};

pub const MAGIC: &[u8; 8] = b"FUSENET\0";
pub const VERSION: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// 1-based epoch the weights were taken after.
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    concat_order: Vec<BackboneKind>,
    epoch: usize,
    val_accuracy: Option<f64>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => bail!(Checkpoint, "truncated while reading {what}"),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    match u32::try_from(v) {
        Ok(v) => {
            out.extend_from_slice(&v.to_le_bytes());
            Ok(())
        }
        Err(_) => bail!(Checkpoint, "{what} of {v} does not fit the format"),
    }
}

impl<T: Element> Checkpoint<T> {
    pub fn from_model(model: &FusionModel<T>, meta: CheckpointMeta) -> Self {
        Self {
            config: model.config().clone(),
            meta,
            params: model.params().clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            concat_order: self.config.concat_order(),
            epoch: self.meta.epoch,
            val_accuracy: self.meta.val_accuracy,
            seed: self.meta.seed,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_u32(&mut out, json.len(), "header length")?;
        out.extend_from_slice(&json);
        for (name, p) in self.params.iter() {
            push_u32(&mut out, name.len(), "path length")?;
            out.extend_from_slice(name.as_bytes());
            out.push(T::PRECISION.tag());
            push_u32(&mut out, p.value.rank(), "rank")?;
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses and verifies a snapshot. Values stored in the other precision
    /// are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            bail!(Checkpoint, "not a checkpoint: bad magic");
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32("version")?;
        if version != VERSION {
            bail!(Checkpoint, "unsupported checkpoint version {version}, expected {VERSION}");
        }
        if bytes.len() < r.pos + 4 {
            bail!(Checkpoint, "truncated before checksum");
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_end]) != stored {
            bail!(Checkpoint, "checksum mismatch; the file is corrupt");
        }
        let r_body = &bytes[..body_end];
        r.bytes = r_body;

        let len = r.u32("header length")? as usize;
        let header: Header = match serde_json::from_slice(r.take(len, "header")?) {
            Ok(h) => h,
            Err(e) => bail!(Checkpoint, "bad header: {e}"),
        };
        if header.concat_order != header.config.concat_order() {
            bail!(Checkpoint, "recorded concatenation order disagrees with the configuration");
        }

        let mut params = ParamStore::new();
        while r.pos < r_body.len() {
            let len = r.u32("path length")? as usize;
            let name = match std::str::from_utf8(r.take(len, "path")?) {
                Ok(s) => s.to_string(),
                Err(_) => bail!(Checkpoint, "parameter path is not UTF-8"),
            };
            let tag = r.take(1, "precision tag")?[0];
            let Some(precision) = Precision::from_tag(tag) else {
                bail!(Checkpoint, "{name}: unknown precision tag {tag}");
            };
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("dims")? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} overflows")))?;
            let width = precision.byte_width();
            let payload = r.take(count.saturating_mul(width), "tensor payload")?;
            let data: Vec<T> = match precision {
                p if p == T::PRECISION => payload.chunks_exact(width).map(T::read_le).collect(),
                Precision::Single => payload
                    .chunks_exact(4)
                    .map(|c| T::from_f64(f32::read_le(c).as_f64()))
                    .collect(),
                Precision::Double => payload.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
            };
            let value = match Tensor::new(shape, data) {
                Ok(t) => t,
                Err(e) => bail!(Checkpoint, "{name}: {e}"),
            };
            if params.insert(name.clone(), value).is_err() {
                bail!(Checkpoint, "parameter {name} stored twice");
            }
        }
        // Validates keys and shapes against the configuration.
        let model = FusionModel::from_params(header.config.clone(), params)?;
        Ok(Self {
            config: header.config,
            meta: CheckpointMeta {
                epoch: header.epoch,
                val_accuracy: header.val_accuracy,
                seed: header.seed,
            },
            params: model.into_params(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn into_model(self) -> Result<FusionModel<T>> {
        FusionModel::from_params(self.config, self.params)
    }

    /// Copies the stored weights into `model`, which must have the same layout.
    pub fn restore_into(&self, model: &mut FusionModel<T>) -> Result<()> {
        for (name, p) in model.params().iter() {
            match self.params.get(name) {
                None => bail!(Checkpoint, "checkpoint lacks parameter {name}"),
                Some(s) if s.value.shape() != p.value.shape() => bail!(
                    Checkpoint,
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    s.value.shape(),
                    p.value.shape()
                ),
                Some(_) => {}
            }
        }
        if let Some(extra) = self.params.names().find(|n| model.params().get(n).is_none()) {
            bail!(Checkpoint, "unknown parameter path {extra}");
        }
        for (name, p) in model.params_mut().iter_mut() {
            p.value = self.params.get(name).expect("checked").value.clone();
        }
        Ok(())
    }
}
