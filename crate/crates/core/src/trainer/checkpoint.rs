use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};
use crate::losses::LossReport;

pub const MAGIC: &[u8; 8] = b"PENETCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<i64>,
    pub offset: u64,
    pub bytes: u64,
}

/// Everything except the raw tensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_text: String,
    pub config_hash: String,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub adam_g_steps: u64,
    pub adam_d_steps: u64,
    pub history: Vec<LossReport>,
    pub tensors: Vec<TensorEntry>,
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, then the
/// tensors as little-endian blobs in header order.
pub fn write_checkpoint(path: &Path, mut header: CheckpointHeader, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut blob = Vec::new();
    header.tensors.clear();
    for (name, t) in tensors {
        let shape = t.size();
        let t = t.detach().contiguous().view([-1]);
        let start = blob.len() as u64;
        let dtype = match t.kind() {
            Kind::Double => {
                for v in Vec::<f64>::try_from(&t)? {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                "f64"
            }
            Kind::Float => {
                for v in Vec::<f32>::try_from(&t)? {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                "f32"
            }
            k => return Err(Error::Checkpoint(format!("tensor {name} has unsupported kind {k:?}"))),
        };
        header.tensors.push(TensorEntry {
            name: name.clone(),
            dtype: dtype.into(),
            shape,
            offset: start,
            bytes: blob.len() as u64 - start,
        });
    }
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses and checks a checkpoint; the stored hash must match the stored
/// config text.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, BTreeMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    let text_hash = hex::encode(Sha256::digest(header.config_text.as_bytes()));
    if text_hash != header.config_hash {
        return Err(bad("config hash does not match the stored config"));
    }
    let data = &bytes[20 + hlen..];
    let mut tensors = BTreeMap::new();
    for e in &header.tensors {
        let raw = data
            .get(e.offset as usize..(e.offset + e.bytes) as usize)
            .ok_or_else(|| bad(&format!("tensor {} is truncated", e.name)))?;
        let numel: i64 = e.shape.iter().product();
        let t = match e.dtype.as_str() {
            "f32" if raw.len() as i64 == numel * 4 => {
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_slice(&v)
            }
            "f64" if raw.len() as i64 == numel * 8 => {
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_slice(&v)
            }
            _ => return Err(bad(&format!("tensor {} has a bad size or dtype", e.name))),
        };
        tensors.insert(e.name.clone(), t.reshape(e.shape.as_slice()));
    }
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            config_text: "seed = 1\n".into(),
            config_hash: hex::encode(Sha256::digest(b"seed = 1\n")),
            step: 7,
            rng: ChaCha8Rng::seed_from_u64(3),
            adam_g_steps: 7,
            adam_d_steps: 7,
            history: vec![LossReport {
                step: 1,
                perc: 0.1 + 0.2,
                feat: 1e-300,
                edge: 3.0,
                attrib: 0.0,
                vae: 2.5,
                total: 1.0 / 3.0,
                d_loss: 1.4,
            }],
            tensors: Vec::new(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let ts = vec![
            ("g/w".to_string(), Tensor::from_slice(&[1.5f32, -2.0, 3.25, 0.1]).view([2, 2])),
            ("g/x".to_string(), Tensor::from_slice(&[0.1f64])),
        ];
        write_checkpoint(&a, header(), &ts).unwrap();
        let (h, t) = read_checkpoint(&a).unwrap();
        assert_eq!(h.history, header().history);
        assert!(t["g/w"].equal(&ts[0].1));
        let back: Vec<(String, Tensor)> = t.into_iter().collect();
        write_checkpoint(&b, h, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let mut h = header();
        h.config_hash = "0".repeat(64);
        write_checkpoint(&p, h, &[]).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, b"garbage").unwrap();
        assert!(read_checkpoint(&p).is_err());
    }
}
