//! Binary checkpoint format.
//!
//! ```text
//! "SSCK"  u32 version
//! u32 text length, UTF-8 key=value lines (model config, vocab, history)
//! u32 record count, then per record:
//!   u32 name length, name, u32 rank, rank x u64 dims, f64 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{EpochRecord, TrainHistory};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Where the vocabulary lives, relative to the checkpoint's directory.
    pub vocab: String,
    pub params: Vec<(String, Tensor)>,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn from_model(model: &Model, vocab: impl Into<String>, history: TrainHistory) -> Self {
        Checkpoint {
            config: model.config().clone(),
            vocab: vocab.into(),
            params: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            history,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_named(self.config, self.params)
    }

    fn header_text(&self) -> Result<String> {
        if self.vocab.contains('\n') {
            return Err(Error::Checkpoint("vocabulary reference contains a newline".into()));
        }
        let mut lines: Vec<String> = self
            .config
            .to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        lines.push(format!("vocab={}", self.vocab));
        let count: usize = self.params.iter().map(|(_, t)| t.numel()).sum();
        lines.push(format!("param_count={count}"));
        lines.push(format!("best_epoch={}", self.history.best_epoch));
        lines.push(format!("stopped_early={}", self.history.stopped_early));
        for e in &self.history.epochs {
            lines.push(format!("epoch.{}={},{},{}", e.epoch, e.loss, e.sari, e.lr));
        }
        Ok(lines.join("\n"))
    }
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = ckpt.header_text()?;
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, ckpt.params.len())?;
    for (name, t) in &ckpt.params {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let x = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(x).map_err(|_| Error::Checkpoint(format!("dimension {x} too large")))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 text".into()))
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
}

fn parse_header(text: &str) -> Result<(ModelConfig, String, usize, TrainHistory)> {
    let mut kv = BTreeMap::new();
    let mut epochs = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
        if let Some(n) = k.strip_prefix("epoch.") {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Checkpoint(format!("malformed history line {line:?}")));
            }
            epochs.push(EpochRecord {
                epoch: parse_num(k, n)?,
                loss: parse_num(k, parts[0])?,
                sari: parse_num(k, parts[1])?,
                lr: parse_num(k, parts[2])?,
            });
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let config = ModelConfig::from_kv(&kv).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let get = |k: &str| kv.get(k).ok_or_else(|| Error::Checkpoint(format!("missing key {k}")));
    let vocab = get("vocab")?.clone();
    let count = parse_num("param_count", get("param_count")?)?;
    let history = TrainHistory {
        epochs,
        best_epoch: parse_num("best_epoch", get("best_epoch")?)?,
        stopped_early: parse_num("stopped_early", get("stopped_early")?)?,
    };
    Ok((config, vocab, count, history))
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::Checkpoint("file too short for magic bytes".into()))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic bytes {magic:?}, expected \"SSCK\""
        )));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let text_len = r.u32()?;
    let text = r.utf8(text_len)?;
    let (config, vocab, count, history) = parse_header(&text)?;

    let n = r.u32()?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()?;
        let name = r.utf8(name_len)?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let found: usize = params.iter().map(|(_, t)| t.numel()).sum();
    if found != count {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters, records hold {found}"
        )));
    }
    Ok(Checkpoint {
        config,
        vocab,
        params,
        history,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
