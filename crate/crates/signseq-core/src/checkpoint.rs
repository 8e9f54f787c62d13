//! Model checkpoint format.
//!
//! Layout: magic "SSCK", version u16, a length-prefixed key=value config
//! block, then named parameter records (name length u16, name bytes,
//! rank u8, dims u32 each, payload as 64-bit little-endian reals).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::seq2seq::ModelConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Contents of one checkpoint: parameters, the model configuration and
/// free-form metadata (e.g. the training iteration it was saved at).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub meta: HashMap<String, String>,
}

pub fn save(
    path: &Path,
    store: &ParamStore,
    config: &ModelConfig,
    meta: &HashMap<String, String>,
) -> Result<()> {
    let mut kv = config.to_kv();
    let mut meta_keys: Vec<&String> = meta.keys().collect();
    meta_keys.sort();
    for key in meta_keys {
        kv.push_str(&format!("{key}={}\n", meta[key]));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kv.len() as u32).to_le_bytes());
    out.extend_from_slice(kv.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(&display, "truncated checkpoint"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(&display, "bad magic bytes"));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(&display, format!("unsupported version {version}")));
    }
    let kv_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let kv_text = std::str::from_utf8(take(&mut pos, kv_len)?)
        .map_err(|_| Error::format(&display, "config block is not utf-8"))?;
    let mut kv = HashMap::new();
    for line in kv_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let config = ModelConfig::from_kv(&kv)?;
    let meta: HashMap<String, String> =
        kv.into_iter().filter(|(k, _)| !k.starts_with("model.")).collect();

    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::format(&display, "parameter name is not utf-8"))?
            .to_string();
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data)
            .map_err(|e| Error::format(&display, format!("parameter {name}: {e}")))?;
        store.insert(name, value);
    }
    if pos != bytes.len() {
        return Err(Error::format(&display, "trailing bytes after parameters"));
    }
    Ok(Checkpoint { config, params: store, meta })
}
