//! Binary checkpoint format.
//!
//! ```text
//! magic "GRPCLCK\0" | u32 version
//! u64 feature_dim | u64 epoch | u64 optimizer step | u8 has varnet | u64 varnet step
//! u32 config length | config text (UTF-8)
//! u32 tensor count | per tensor: u32 name length, name, u64 rows, u64 cols
//! tensor data in table order, little-endian f64
//! ```
//!
//! Tensor names carry a prefix: `p:` parameters, `om:`/`ov:` their Adam
//! moments, `v:` varnet parameters, `vm:`/`vv:` their moments. All integers
//! are little-endian. Bytes past the last tensor are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Adam, ParamSet, Tensor};

use super::config::RunConfig;
use super::model::Model;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRPCLCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_prefixed<'a>(
    out: &mut Vec<(String, &'a Tensor)>,
    prefix: &str,
    items: impl Iterator<Item = (&'a String, &'a Tensor)>,
) {
    out.extend(items.map(|(k, v)| (format!("{prefix}{k}"), v)));
}

fn collect(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    push_prefixed(&mut out, "p:", model.params.iter());
    push_prefixed(&mut out, "om:", model.optimizer.first.iter());
    push_prefixed(&mut out, "ov:", model.optimizer.second.iter());
    push_prefixed(&mut out, "v:", model.varnet_params.iter());
    if let Some(opt) = &model.varnet_optimizer {
        push_prefixed(&mut out, "vm:", opt.first.iter());
        push_prefixed(&mut out, "vv:", opt.second.iter());
    }
    out
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(model.feature_dim as u64).to_le_bytes());
    b.extend_from_slice(&(model.epoch as u64).to_le_bytes());
    b.extend_from_slice(&model.optimizer.step.to_le_bytes());
    let varnet_step = model.varnet_optimizer.as_ref().map(|o| o.step);
    b.push(varnet_step.is_some() as u8);
    b.extend_from_slice(&varnet_step.unwrap_or(0).to_le_bytes());
    let config = model.config.to_text();
    b.extend_from_slice(&(config.len() as u32).to_le_bytes());
    b.extend_from_slice(config.as_bytes());
    let tensors = collect(model);
    b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        b.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    }
    for (_, t) in &tensors {
        for x in t.data() {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated file: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

fn replace_all(
    target: &mut BTreeMap<String, Tensor>,
    loaded: &mut BTreeMap<String, Tensor>,
    prefix: &str,
) -> Result<()> {
    for (name, slot) in target.iter_mut() {
        let key = format!("{prefix}{name}");
        let t = loaded
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{key}` has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

fn replace_params(target: &mut ParamSet, loaded: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<()> {
    let mut map: BTreeMap<String, Tensor> =
        target.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    replace_all(&mut map, loaded, prefix)?;
    for (k, v) in map {
        target.insert(k, v);
    }
    Ok(())
}

fn replace_adam(opt: &mut Adam, loaded: &mut BTreeMap<String, Tensor>, m: &str, v: &str) -> Result<()> {
    replace_all(&mut opt.first, loaded, m)?;
    replace_all(&mut opt.second, loaded, v)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let feature_dim = r.usize("feature dim")?;
    let epoch = r.usize("epoch")?;
    let step = r.u64("optimizer step")?;
    let has_varnet = match r.u8("varnet flag")? {
        0 => false,
        1 => true,
        x => return Err(Error::Checkpoint(format!("invalid varnet flag {x}"))),
    };
    let varnet_step = r.u64("varnet step")?;
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = RunConfig::from_text(config_text)
        .map_err(|e| Error::Checkpoint(format!("stored config is invalid: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.usize("rows")?;
        let cols = r.usize("cols")?;
        table.push((name, rows, cols));
    }
    let mut loaded = BTreeMap::new();
    for (name, rows, cols) in table {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let raw = r.take(n, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(rows, cols, data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        if loaded.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - r.pos
        )));
    }

    let mut model = Model::init(&config, feature_dim)
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
    if has_varnet != model.varnet_optimizer.is_some() {
        return Err(Error::Checkpoint("varnet flag disagrees with stored config".into()));
    }
    replace_params(&mut model.params, &mut loaded, "p:")?;
    replace_adam(&mut model.optimizer, &mut loaded, "om:", "ov:")?;
    replace_params(&mut model.varnet_params, &mut loaded, "v:")?;
    if let Some(opt) = model.varnet_optimizer.as_mut() {
        replace_adam(opt, &mut loaded, "vm:", "vv:")?;
        opt.step = varnet_step;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    model.optimizer.step = step;
    model.epoch = epoch;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
