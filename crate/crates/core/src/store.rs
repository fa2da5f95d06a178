//! Model files, pool manifests and time-ratio accounting.
//!
//! Model file layout (header integers little-endian `u32`):
//!
//! ```text
//! "MGEM" | version | layer count |
//!   per layer: name length | name (UTF-8) | rank | dims × rank | f32 LE payload
//! | SHA-256 of all preceding bytes (32 bytes)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MgeError, Result};
use crate::evolution::{EvolutionConfig, GenerationRecord};
use crate::fitness::Fitness;
use crate::generator::{GeneratorConfig, Lineage};
use crate::nn::{LayerParams, ParamSet};

pub const MAGIC: &[u8; 4] = b"MGEM";
pub const FORMAT_VERSION: u32 = 1;
pub const HASH_ALGORITHM: &str = "sha256";
const HASH_LEN: usize = 32;

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFileInfo {
    pub path: PathBuf,
    /// Hash of the whole file, trailer included.
    pub hash: String,
    pub bytes: u64,
    pub layers: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| MgeError::invalid(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `params` to the model file format.
pub fn encode_model(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + params.total_len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, params.len(), "layer count")?;
    for layer in params.layers() {
        if layer.name.is_empty() {
            return Err(MgeError::invalid("layer names must be non-empty"));
        }
        if layer.values.iter().any(|v| !v.is_finite()) {
            return Err(MgeError::invalid(format!(
                "layer {} has non-finite values",
                layer.name
            )));
        }
        put_u32(&mut out, layer.name.len(), "name length")?;
        out.extend_from_slice(layer.name.as_bytes());
        put_u32(&mut out, layer.shape.len(), "rank")?;
        for &d in &layer.shape {
            put_u32(&mut out, d, "dimension")?;
        }
        for &v in &layer.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn corrupt(&self, message: impl Into<String>) -> MgeError {
        MgeError::Corruption {
            path: self.path.to_path_buf(),
            message: format!("{} at byte {}", message.into(), self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a model file image. `path` is used only for error messages.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let corrupt = |message: &str| MgeError::Corruption {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 12 + HASH_LEN {
        return Err(corrupt("truncated file"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(MgeError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - HASH_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt("content hash mismatch"));
    }

    let mut r = Reader {
        bytes: body,
        pos: 8,
        path,
    };
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = match std::str::from_utf8(r.take(name_len)?) {
            Ok(s) => s.to_string(),
            Err(_) => return Err(r.corrupt("layer name is not UTF-8")),
        };
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some())
            .ok_or_else(|| r.corrupt("shape overflows"))?;
        let payload = r.take(len * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        layers.push(LayerParams::new(name, shape, values).map_err(|e| r.corrupt(e.to_string()))?);
    }
    if r.pos != body.len() {
        return Err(r.corrupt("trailing bytes after the last layer"));
    }
    ParamSet::new(layers).map_err(|e| corrupt(&e.to_string()))
}

/// Writes `params` (rounded to single precision) to `path`.
pub fn save_model(params: &ParamSet, path: &Path) -> Result<ModelFileInfo> {
    let bytes = encode_model(params)?;
    write_atomic(path, &bytes)?;
    Ok(ModelFileInfo {
        path: path.to_path_buf(),
        hash: content_hash(&bytes),
        bytes: bytes.len() as u64,
        layers: params.len(),
    })
}

pub fn load_model(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| MgeError::storage(path, e))?;
    decode_model(&bytes, path)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| MgeError::storage(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| MgeError::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| MgeError::storage(&tmp, e))?;
    f.write_all(bytes).map_err(|e| MgeError::storage(&tmp, e))?;
    f.sync_all().map_err(|e| MgeError::storage(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| MgeError::storage(path, e))
}

/// `t_gen / t_train`.
pub fn time_ratio(t_gen: f64, t_train: f64) -> Result<f64> {
    if !(t_train > 0.0 && t_train.is_finite()) {
        return Err(MgeError::UndefinedRatio(t_train));
    }
    Ok(t_gen / t_train)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRecord {
    pub file: String,
    pub hash: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub id: u64,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub hash: String,
    pub accuracy: f64,
    pub fitness: Option<Fitness>,
    pub lineage: Lineage,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemberTiming {
    pub id: u64,
    pub seconds: f64,
}

/// Wall-clock measurements, kept apart from the deterministic content.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub time_generated: f64,
    pub time_trained: Option<f64>,
    pub ratio: Option<f64>,
    pub members: Vec<MemberTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub pool_id: String,
    pub hash_algorithm: String,
    pub base: BaseRecord,
    pub generator: GeneratorConfig,
    pub evolution: Option<EvolutionConfig>,
    pub attempts: usize,
    pub members: Vec<MemberRecord>,
    pub history: Vec<GenerationRecord>,
    pub timings: Timings,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl PoolManifest {
    /// Builds a manifest and derives its id from everything except timings.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: BaseRecord,
        generator: GeneratorConfig,
        evolution: Option<EvolutionConfig>,
        attempts: usize,
        members: Vec<MemberRecord>,
        history: Vec<GenerationRecord>,
        timings: Timings,
    ) -> Result<Self> {
        let mut m = PoolManifest {
            pool_id: String::new(),
            hash_algorithm: HASH_ALGORITHM.to_string(),
            base,
            generator,
            evolution,
            attempts,
            members,
            history,
            timings,
        };
        let view = serde_json::to_vec(&m.deterministic_view())
            .map_err(|e| MgeError::invalid(e.to_string()))?;
        m.pool_id = content_hash(&view)[..16].to_string();
        Ok(m)
    }

    /// The manifest as JSON without the `timings` section.
    pub fn deterministic_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        v
    }

    /// Atomically writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| MgeError::invalid(e.to_string()))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MgeError::storage(path, e))?;
        serde_json::from_str(&text).map_err(|e| MgeError::Corruption {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Checks that every member file exists and matches its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for m in &self.members {
            let path = dir.join(&m.file);
            let bytes = fs::read(&path).map_err(|e| MgeError::storage(&path, e))?;
            if content_hash(&bytes) != m.hash {
                return Err(MgeError::Corruption {
                    path,
                    message: "file hash differs from manifest".into(),
                });
            }
            decode_model(&bytes, &path)?;
        }
        Ok(())
    }
}
