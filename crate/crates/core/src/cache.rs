//! Flat binary matrix container (`TFM1`) and the per-track feature cache.
//!
//! Layout: magic `TFM1`, row count and column count as little-endian `u64`,
//! then row-major little-endian `f64` values. Each file has a JSON sidecar
//! (`<file>.json`) carrying the producing configuration and its hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ConfigHash;
use crate::pipeline::{FeatureSequence, Stage};
use crate::spectrogram::TimeFreqMatrix;

pub const TFM_MAGIC: &[u8; 4] = b"TFM1";

pub fn encode_tfm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(rows * cols, values.len());
    let mut buf = Vec::with_capacity(20 + values.len() * 8);
    buf.extend_from_slice(TFM_MAGIC);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Decodes a `TFM1` buffer into `(rows, cols, values)`.
pub fn decode_tfm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let corrupt = |cause: &str| Error::Corrupted {
        path: path.into(),
        cause: cause.into(),
    };
    if bytes.len() < 20 {
        return Err(corrupt("shorter than the header"));
    }
    if &bytes[..4] != TFM_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| corrupt("size overflow"))?;
    if bytes.len() != expected {
        return Err(corrupt(&format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let values = bytes[20..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: ConfigHash,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_rows(path: impl AsRef<Path>, rows: &[Vec<f64>], sidecar: &Sidecar) -> Result<()> {
    let path = path.as_ref();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter("ragged rows cannot be stored".into()));
    }
    let bytes = encode_tfm(rows.len(), cols, &rows.concat());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(sidecar)?;
    std::fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, Sidecar)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, cols, values) = decode_tfm(path, &bytes)?;
    let rows = if cols == 0 {
        Vec::new()
    } else {
        values.chunks_exact(cols).map(<[f64]>::to_vec).collect()
    };
    let side = sidecar_path(path);
    let json = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar = serde_json::from_slice(&json).map_err(|e| Error::Corrupted {
        path: side,
        cause: e.to_string(),
    })?;
    Ok((rows, sidecar))
}

pub fn save_spectrogram(path: impl AsRef<Path>, m: &TimeFreqMatrix, sidecar: &Sidecar) -> Result<()> {
    write_rows(path, &m.to_rows(), sidecar)
}

/// Directory of `<track_id>.<stage>.tfm` files.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, track_id: &str, stage: Stage) -> PathBuf {
        self.dir.join(format!("{track_id}.{}.tfm", stage.name()))
    }

    /// Cached rows when present and produced under `hash`.
    pub fn load(&self, track_id: &str, stage: Stage, hash: &ConfigHash) -> Result<Option<FeatureSequence>> {
        let path = self.path_for(track_id, stage);
        if !path.exists() || !sidecar_path(&path).exists() {
            return Ok(None);
        }
        let (rows, sidecar) = read_rows(&path)?;
        if &sidecar.config_hash != hash || rows.is_empty() {
            return Ok(None);
        }
        Ok(Some(FeatureSequence::new(rows, stage)?))
    }

    pub fn store(
        &self,
        track_id: &str,
        seq: &FeatureSequence,
        hash: &ConfigHash,
        config: serde_json::Value,
    ) -> Result<PathBuf> {
        let path = self.path_for(track_id, seq.stage_tag);
        write_rows(
            &path,
            &seq.rows,
            &Sidecar {
                config_hash: *hash,
                config,
                stage: Some(seq.stage_tag),
                track_id: Some(track_id.to_owned()),
            },
        )?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sidecar() -> Sidecar {
        Sidecar {
            config_hash: ConfigHash::of("cfg"),
            config: serde_json::json!({"window_ms": 370.0}),
            stage: Some(Stage::Base),
            track_id: None,
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_tfm(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(&bytes[..4], b"TFM1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[60..68].try_into().unwrap()), 6.0);
        assert_eq!(bytes.len(), 68);
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tfm");
        let rows = vec![vec![0.5, -1.25], vec![f64::MIN_POSITIVE, 3.0]];
        write_rows(&path, &rows, &sidecar()).unwrap();
        let (back, side) = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(side, sidecar());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_rows(&path), Err(Error::Corrupted { .. })));
    }

    #[test]
    fn cache_respects_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path().join("feat")).unwrap();
        let seq = FeatureSequence::new(vec![vec![1.0, 2.0]; 3], Stage::WarpTranslation).unwrap();
        let h = ConfigHash::of("a");
        let path = cache.store("trk", &seq, &h, serde_json::Value::Null).unwrap();
        assert!(path.ends_with("trk.warp+translation.tfm"));
        assert_eq!(cache.load("trk", Stage::WarpTranslation, &h).unwrap(), Some(seq));
        assert_eq!(
            cache.load("trk", Stage::WarpTranslation, &ConfigHash::of("b")).unwrap(),
            None
        );
        assert_eq!(cache.load("other", Stage::Base, &h).unwrap(), None);
    }
}
