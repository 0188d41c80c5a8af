//! Binary checkpoint format:
//!
//! ```text
//! b"DSGC" | version u32 | header_len u64 | header JSON
//! then until EOF, per tensor:
//!   name_len u32 | name bytes | rows u64 | cols u64 | rows*cols f64
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::objective::LossBreakdown;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub epoch: usize,
    /// Breakdown of the last epoch, if any epoch ran.
    pub loss: Option<LossBreakdown>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    loss: Option<LossBreakdown>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            epoch: self.epoch,
            loss: self.loss,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in self.model.named_tensors() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = r.len_u64("header length")?;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.len_u64("rows")?;
            let cols = r.len_u64("cols")?;
            let count = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let data = r
                .take(count, "tensor payload")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        let model = Model::from_named(header.config.mode, tensors)?;
        Ok(Self {
            config: header.config,
            model,
            epoch: header.epoch,
            loss: header.loss,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn len_u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentMode;

    fn toy() -> Checkpoint {
        let config = TrainConfig {
            aug_dim: 2,
            embed_dim: 1,
            hidden: Some(2),
            epochs: 0,
            ..Default::default()
        };
        Checkpoint {
            model: Model::init(&config, 2).unwrap(),
            config,
            epoch: 0,
            loss: None,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let mut ckpt = toy();
        ckpt.loss = Some(LossBreakdown {
            inv: 0.1,
            total: 1.0 / 3.0,
            ..Default::default()
        });
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn tensor_payload_layout() {
        let ckpt = toy();
        let bytes = ckpt.to_bytes().unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut pos = 16 + header_len;
        for (name, t) in ckpt.model.named_tensors() {
            let nl = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            assert_eq!(&bytes[pos..pos + nl], name.as_bytes());
            pos += nl;
            let rows = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            let cols = u64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap());
            assert_eq!((rows as usize, cols as usize), t.shape());
            pos += 16;
            for v in t.data() {
                assert_eq!(&bytes[pos..pos + 8], &v.to_bits().to_le_bytes());
                pos += 8;
            }
        }
        assert_eq!(pos, bytes.len());
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = toy().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format(m)) if m.contains("version")));
        for cut in [2, 10, 20, bytes.len() - 3] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn rejects_foreign_roles() {
        let mut ckpt = toy();
        ckpt.config.mode = AugmentMode::Topology;
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
