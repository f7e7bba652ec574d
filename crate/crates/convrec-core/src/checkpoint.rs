//! Self-describing checkpoint container shared by the recommendation and
//! dialogue models.
//!
//! A checkpoint is a single JSON document carrying the kind tag, the
//! seed, the epoch counter, the serialized config (plus an FNV-1a hash of
//! its canonical JSON for quick mismatch warnings) and every parameter
//! array as float32 data with its shape. Parameters are keyed by the
//! visitor names, so loading restores by name and verifies shapes.

use crate::tensor::Array;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse checkpoint {path}: {message}")]
    Parse { path: String, message: String },
    #[error("checkpoint kind {got:?} does not match expected {want:?}")]
    KindMismatch { got: String, want: String },
    #[error("checkpoint parameter {name} has shape {got:?}, expected {want:?}")]
    ShapeMismatch { name: String, got: (usize, usize), want: (usize, usize) },
    #[error("checkpoint is missing parameter {name}")]
    MissingParam { name: String },
    #[error("checkpoint config cannot be decoded: {0}")]
    BadConfig(String),
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ParamArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub epoch: usize,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub params: BTreeMap<String, ParamArray>,
}

/// FNV-1a over the canonical (compact) JSON encoding.
pub fn config_hash(config_json: &serde_json::Value) -> String {
    let text = serde_json::to_string(config_json).expect("JSON re-encoding cannot fail");
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

impl Checkpoint {
    pub fn build(
        kind: &str,
        seed: u64,
        epoch: usize,
        config: &impl Serialize,
        entries: &[(String, &Array)],
    ) -> Checkpoint {
        let config = serde_json::to_value(config).expect("config serialization cannot fail");
        let config_hash = config_hash(&config);
        let params = entries
            .iter()
            .map(|(name, arr)| {
                (name.clone(), ParamArray { rows: arr.rows(), cols: arr.cols(), data: arr.to_f32() })
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            seed,
            epoch,
            config,
            config_hash,
            params,
        }
    }

    pub fn decode_config<T: DeserializeOwned>(&self) -> Result<T, CheckpointError> {
        serde_json::from_value(self.config.clone()).map_err(|e| CheckpointError::BadConfig(e.to_string()))
    }

    pub fn expect_kind(&self, want: &str) -> Result<(), CheckpointError> {
        if self.kind != want {
            return Err(CheckpointError::KindMismatch { got: self.kind.clone(), want: want.to_string() });
        }
        Ok(())
    }

    /// True when the stored hash still matches the stored config; a
    /// mismatch means the file was edited by hand.
    pub fn hash_consistent(&self) -> bool {
        config_hash(&self.config) == self.config_hash
    }

    /// Restores parameters by name into freshly initialized model
    /// structures.
    pub fn apply(&self, entries: &mut [(String, &mut Array)]) -> Result<(), CheckpointError> {
        for (name, arr) in entries.iter_mut() {
            let stored = self
                .params
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::MissingParam { name: name.clone() })?;
            if (stored.rows, stored.cols) != arr.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    got: (stored.rows, stored.cols),
                    want: arr.shape(),
                });
            }
            **arr = Array::from_f32(stored.rows, stored.cols, &stored.data);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serialization cannot fail");
        std::fs::write(path, text).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CheckpointError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct DummyConfig {
        dim: usize,
    }

    #[test]
    fn round_trip_preserves_f32_values_and_config() {
        let a = Array::from_vec(2, 2, vec![0.25, -1.5, 3.0, 0.1]);
        let b = Array::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        let entries = vec![("a".to_string(), &a), ("b".to_string(), &b)];
        let ck = Checkpoint::build("rec", 7, 25, &DummyConfig { dim: 16 }, &entries);
        assert!(ck.hash_consistent());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        loaded.expect_kind("rec").unwrap();
        assert!(loaded.expect_kind("dial").is_err());
        assert_eq!(loaded.decode_config::<DummyConfig>().unwrap(), DummyConfig { dim: 16 });

        let mut a2 = Array::zeros(2, 2);
        let mut b2 = Array::zeros(1, 3);
        {
            let mut targets = vec![("a".to_string(), &mut a2), ("b".to_string(), &mut b2)];
            loaded.apply(&mut targets).unwrap();
        }
        // 0.25 etc. are exactly representable; these survive the f32 trip
        assert_eq!(a2.get(0, 0), 0.25);
        assert_eq!(b2.get(0, 2), 3.0);
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let a = Array::zeros(2, 2);
        let entries = vec![("a".to_string(), &a)];
        let ck = Checkpoint::build("rec", 0, 0, &DummyConfig { dim: 1 }, &entries);
        let mut wrong = Array::zeros(3, 2);
        let mut targets = vec![("a".to_string(), &mut wrong)];
        assert!(matches!(ck.apply(&mut targets), Err(CheckpointError::ShapeMismatch { .. })));
    }

    #[test]
    fn hand_edited_config_breaks_the_hash() {
        let a = Array::zeros(1, 1);
        let entries = vec![("a".to_string(), &a)];
        let mut ck = Checkpoint::build("rec", 0, 0, &DummyConfig { dim: 1 }, &entries);
        ck.config["dim"] = serde_json::json!(999);
        assert!(!ck.hash_consistent());
    }
}
