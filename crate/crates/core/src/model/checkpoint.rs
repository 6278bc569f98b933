//! Binary checkpoint format.
//!
//! ```text
//! "SNFG"                      magic
//! u32 LE                      format version
//! u64 LE + bytes              ModelConfig as JSON
//! per tensor, declaration order:
//!   u32 LE rows, u32 LE cols  shape header
//!   rows*cols f32 LE          values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelBundle, ModelConfig, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNFG";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_json(cfg: &ModelConfig) -> Vec<u8> {
    serde_json::to_vec(cfg).expect("ModelConfig serializes")
}

fn tensor_bytes(params: &Params<f32>, out: &mut Vec<u8>) {
    for t in params.tensors() {
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub fn write_checkpoint<W: Write>(model: &ModelBundle<f32>, mut w: W) -> std::io::Result<()> {
    let json = config_json(&model.config);
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * model.params.n_entries());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    tensor_bytes(&model.params, &mut buf);
    w.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelBundle<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = c.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(json_len)?)?;
    config.validate()?;
    let mut params = Params::<f32>::zeros(&config);
    for (id, t) in params.ids().into_iter().zip(params.tensors_mut()) {
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        if (rows, cols) != (t.rows, t.cols) {
            return Err(Error::Checkpoint(format!(
                "{id:?}: shape {rows}x{cols}, expected {}x{}",
                t.rows, t.cols
            )));
        }
        let raw = c.take(4 * rows * cols)?;
        for (x, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(ModelBundle { config, params })
}

pub fn save_checkpoint(model: &ModelBundle<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle<f32>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// 64-bit identity of a model: the leading bytes of SHA-256 over the config
/// JSON followed by the tensor payload, rendered as 16 hex digits.
pub fn fingerprint(model: &ModelBundle<f32>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_json(&model.config));
    let mut buf = Vec::with_capacity(4 * model.params.n_entries());
    tensor_bytes(&model.params, &mut buf);
    hasher.update(&buf);
    let digest = hasher.finalize();
    let v = u64::from_be_bytes(digest[..8].try_into().unwrap());
    format!("{v:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelBundle<f32> {
        ModelBundle::init(ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 30,
            max_seq_len: 16,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let m = model();
        let mut a = Vec::new();
        write_checkpoint(&m, &mut a).unwrap();
        assert_eq!(&a[..4], b"SNFG");
        let back = read_checkpoint(&a[..]).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        write_checkpoint(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let m = model();
        let mut a = Vec::new();
        write_checkpoint(&m, &mut a).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        assert!(read_checkpoint(&a[..a.len() - 1]).is_err());
        let mut long = a.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let m = model();
        let f = fingerprint(&m);
        assert_eq!(f.len(), 16);
        assert_eq!(f, fingerprint(&m.clone()));
        let mut n = m.clone();
        n.params.layers[1].down.data[3] += 1e-3;
        assert_ne!(f, fingerprint(&n));
    }
}
