//! Tensor checkpoint directories: `manifest.json` mapping each tensor name to
//! shape/dtype/offset, plus one flat little-endian `weights.bin` blob.
//! Round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

/// Serialize a list of named tensors. The blob is laid out in the order
/// given; the manifest records each tensor's byte offset.
pub fn save_tensors(dir: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest: BTreeMap<String, TensorMeta> = BTreeMap::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in tensors {
        if manifest.contains_key(name) {
            return Err(Error::invalid(format!("duplicate tensor name `{name}` in checkpoint")));
        }
        manifest.insert(
            name.clone(),
            TensorMeta {
                shape: tensor.shape.clone(),
                dtype: "f64".to_string(),
                offset: blob.len() as u64,
            },
        );
        for v in &tensor.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;
    fs::write(dir.join(WEIGHTS_FILE), blob)?;
    Ok(())
}

/// Load a checkpoint directory, returning tensors in blob order. The
/// manifest is validated: offsets must tile the blob exactly.
pub fn load_tensors(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_name = manifest_path.display().to_string();
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: BTreeMap<String, TensorMeta> =
        serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint {
            file: manifest_name.clone(),
            field: "manifest".to_string(),
            detail: e.to_string(),
        })?;
    let blob = fs::read(dir.join(WEIGHTS_FILE))?;
    read_manifest_blob(&manifest, &blob, &manifest_name)
}

/// Decode tensors from an already-parsed manifest plus blob; shared by the
/// adapter checkpoint format, which embeds its manifest in `adapter.json`.
pub fn read_manifest_blob(
    manifest: &BTreeMap<String, TensorMeta>,
    blob: &[u8],
    manifest_name: &str,
) -> Result<Vec<(String, Tensor)>> {
    let mut entries: Vec<(&String, &TensorMeta)> = manifest.iter().collect();
    entries.sort_by_key(|(_, m)| m.offset);

    let mut expected_offset = 0u64;
    let mut out = Vec::with_capacity(entries.len());
    for (name, meta) in entries {
        if meta.dtype != "f64" {
            return Err(Error::CorruptCheckpoint {
                file: manifest_name.to_string(),
                field: format!("{name}.dtype"),
                detail: format!("expected \"f64\", got \"{}\"", meta.dtype),
            });
        }
        if meta.offset != expected_offset {
            return Err(Error::CorruptCheckpoint {
                file: manifest_name.to_string(),
                field: format!("{name}.offset"),
                detail: format!("expected {expected_offset}, got {}", meta.offset),
            });
        }
        let numel: usize = meta.shape.iter().product();
        if meta.shape.iter().any(|&d| d == 0) || numel == 0 {
            return Err(Error::CorruptCheckpoint {
                file: manifest_name.to_string(),
                field: format!("{name}.shape"),
                detail: format!("invalid shape {:?}", meta.shape),
            });
        }
        let bytes = numel * 8;
        let start = meta.offset as usize;
        if start + bytes > blob.len() {
            return Err(Error::CorruptCheckpoint {
                file: manifest_name.to_string(),
                field: format!("{name}.shape"),
                detail: format!(
                    "shape {:?} needs {} bytes at offset {}, blob has {}",
                    meta.shape,
                    bytes,
                    start,
                    blob.len()
                ),
            });
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let mut b = [0u8; 8];
            b.copy_from_slice(&blob[start + i * 8..start + (i + 1) * 8]);
            data.push(f64::from_le_bytes(b));
        }
        out.push((name.clone(), Tensor::new(meta.shape.clone(), data)?));
        expected_offset += bytes as u64;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::CorruptCheckpoint {
            file: manifest_name.to_string(),
            field: "weights.bin".to_string(),
            detail: format!("manifest covers {expected_offset} bytes, blob has {}", blob.len()),
        });
    }
    Ok(out)
}

/// Build the manifest map and blob in memory without touching the
/// filesystem.
pub fn encode_tensors(tensors: &[(String, &Tensor)]) -> Result<(BTreeMap<String, TensorMeta>, Vec<u8>)> {
    let mut manifest = BTreeMap::new();
    let mut blob = Vec::new();
    for (name, tensor) in tensors {
        if manifest.contains_key(name) {
            return Err(Error::invalid(format!("duplicate tensor name `{name}` in checkpoint")));
        }
        manifest.insert(
            name.clone(),
            TensorMeta {
                shape: tensor.shape.clone(),
                dtype: "f64".to_string(),
                offset: blob.len() as u64,
            },
        );
        for v in &tensor.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok((manifest, blob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let b = Tensor::randn(vec![2], 0.001, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        save_tensors(dir.path(), &[("alpha".into(), &a), ("beta".into(), &b)]).unwrap();
        let loaded = load_tensors(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "alpha");
        assert!(loaded[0].1.bitwise_eq(&a));
        assert!(loaded[1].1.bitwise_eq(&b));
    }

    #[test]
    fn wrong_shape_in_manifest_rejected_with_field() {
        let t = Tensor::full(vec![2, 2], 1.5);
        let dir = tempfile::tempdir().unwrap();
        save_tensors(dir.path(), &[("w".into(), &t)]).unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let edited = std::fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("[\n      2,\n      2\n    ]", "[\n      2,\n      3\n    ]");
        std::fs::write(&manifest_path, edited).unwrap();
        let err = load_tensors(dir.path()).unwrap_err().to_string();
        assert!(err.contains("w.shape") || err.contains("weights.bin"), "{err}");
        assert!(err.contains("manifest.json"), "{err}");
    }

    #[test]
    fn truncated_blob_rejected() {
        let t = Tensor::full(vec![4], 1.0);
        let dir = tempfile::tempdir().unwrap();
        save_tensors(dir.path(), &[("w".into(), &t)]).unwrap();
        let blob_path = dir.path().join(WEIGHTS_FILE);
        let blob = std::fs::read(&blob_path).unwrap();
        std::fs::write(&blob_path, &blob[..16]).unwrap();
        assert!(load_tensors(dir.path()).is_err());
    }
}
