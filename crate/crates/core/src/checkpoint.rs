//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "STTCKPT\0" | version u32 | config length u32 | config JSON
//! strategy id u8 | prompt length u32 | placement u8 | sampled word ids u32 x M
//! record count u32 | records | SHA-256 of every preceding byte
//! ```
//!
//! A record is: name length u32, name bytes, rank u32, extents u64 x rank,
//! then the values as f64.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{prefix_key, MlmModel, ModelConfig, PromptPlacement, SoftPrompt, CLS_OUT_B};
use crate::strategy::StrategyKind;
use crate::tensor::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 8] = b"STTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Header fields besides the model itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub version: u32,
    /// `None` for a pre-trained backbone.
    pub strategy: Option<StrategyKind>,
    pub prompt_length: usize,
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("value {x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &MlmModel, strategy: Option<StrategyKind>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(&config);
    out.push(strategy.map_or(0, StrategyKind::id));
    let (words, placement) = match &model.soft_prompt {
        Some(sp) => (sp.sampled_word_ids.as_slice(), sp.placement),
        None => (&[][..], PromptPlacement::AfterCls),
    };
    put_u32(&mut out, words.len())?;
    out.push(match placement {
        PromptPlacement::AfterCls => 0,
        PromptPlacement::BeforeCls => 1,
    });
    for &w in words {
        put_u32(&mut out, w)?;
    }
    put_u32(&mut out, model.store.len())?;
    for p in model.store.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.shape().len())?;
        for &e in p.tensor.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.extend_from_slice(&p.tensor.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
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
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let x = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(x).map_err(|_| Error::Checkpoint("extent overflows usize".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlmModel, CheckpointMeta)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config_len = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    config.validate()?;
    let strategy = match r.u8()? {
        0 => None,
        id => Some(StrategyKind::from_id(id).ok_or_else(|| Error::Checkpoint(format!("unknown strategy id {id}")))?),
    };
    let prompt_length = r.u32()?;
    let placement = match r.u8()? {
        0 => PromptPlacement::AfterCls,
        1 => PromptPlacement::BeforeCls,
        x => return Err(Error::Checkpoint(format!("unknown prompt placement {x}"))),
    };
    let sampled_word_ids = (0..prompt_length).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;

    let n_records = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..n_records {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("shape of `{name}` overflows")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("record too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after records".into()));
    }

    let soft_prompt = store.contains(crate::model::SOFT_PROMPT).then_some(SoftPrompt {
        sampled_word_ids,
        placement,
    });
    let prefix_len = if store.contains(&prefix_key(0)) {
        Some(store.tensor(&prefix_key(0))?.shape()[0])
    } else {
        None
    };
    let n_classes = if store.contains(CLS_OUT_B) {
        Some(store.tensor(CLS_OUT_B)?.numel())
    } else {
        None
    };
    let model = MlmModel {
        config,
        store,
        soft_prompt,
        prefix_len,
        n_classes,
    };
    Ok((
        model,
        CheckpointMeta {
            version,
            strategy,
            prompt_length,
        },
    ))
}

pub fn save_checkpoint(model: &MlmModel, strategy: Option<StrategyKind>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, strategy)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlmModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::strategy::Strategy;

    fn prepared() -> MlmModel {
        let mut m = init_model(ModelConfig::toy(64), 3).unwrap();
        Strategy::new(StrategyKind::PromptTune, 4)
            .prepare_model(&mut m, 3, 9)
            .unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = prepared();
        let bytes = encode_checkpoint(&m, Some(StrategyKind::PromptTune)).unwrap();
        let (back, meta) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(meta.strategy, Some(StrategyKind::PromptTune));
        assert_eq!(meta.prompt_length, 4);
        assert_eq!(back.soft_prompt, m.soft_prompt);
        assert_eq!(back.n_classes, Some(3));
        for (a, b) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.to_le_bytes(), b.tensor.to_le_bytes());
        }
        assert_eq!(encode_checkpoint(&back, meta.strategy).unwrap(), bytes);
    }

    #[test]
    fn corrupted_byte_is_rejected() {
        let mut bytes = encode_checkpoint(&prepared(), None).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_checkpoint(&prepared(), None).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_checkpoint(&prepared(), None).unwrap();
        assert!(decode_checkpoint(&bytes[..20]).is_err());
        assert!(decode_checkpoint(b"hello").is_err());
    }
}
