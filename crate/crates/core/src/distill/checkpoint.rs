use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{
    ClassifierSpec, EncoderClassifier, LanguageModel, ModelConfig, ModelRole, ParamStore,
};
use crate::numerics::Tensor;
use crate::objectives::LossReport;

pub const MAGIC: &[u8; 4] = b"FDCK";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 8 + 32;

/// What the parameters belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Language {
        config: ModelConfig,
        role: ModelRole,
    },
    Classifier {
        spec: ClassifierSpec,
    },
}

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Path or run name, e.g. `single 4L->1L` or `teacher-sft`.
    pub path: String,
    pub stage: usize,
    /// SHA-256 of the training config JSON.
    pub config_digest: String,
    pub final_loss: Option<LossReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format: (u16, u16),
    pub model: ModelSpec,
    pub params: ParamStore,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelSpec,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// SHA-256 (hex) of a value's JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

impl Checkpoint {
    pub fn from_language_model(model: &LanguageModel, provenance: Provenance) -> Self {
        Self {
            format: (FORMAT_MAJOR, FORMAT_MINOR),
            model: ModelSpec::Language {
                config: model.config.clone(),
                role: model.role,
            },
            params: model.params.clone(),
            provenance,
        }
    }

    pub fn from_classifier(model: &EncoderClassifier, provenance: Provenance) -> Self {
        Self {
            format: (FORMAT_MAJOR, FORMAT_MINOR),
            model: ModelSpec::Classifier {
                spec: model.spec.clone(),
            },
            params: model.params.clone(),
            provenance,
        }
    }

    pub fn language_model(&self) -> Result<LanguageModel> {
        match &self.model {
            ModelSpec::Language { config, role } => {
                LanguageModel::from_params(config.clone(), self.params.clone(), *role)
            }
            ModelSpec::Classifier { .. } => Err(Error::Checkpoint(
                "holds a classifier, not a language model".into(),
            )),
        }
    }

    pub fn classifier(&self) -> Result<EncoderClassifier> {
        match &self.model {
            ModelSpec::Classifier { spec } => {
                let reference = EncoderClassifier::init(spec.clone())?;
                let same = reference.params.names() == self.params.names()
                    && reference
                        .params
                        .tensors()
                        .iter()
                        .zip(self.params.tensors())
                        .all(|(a, b)| a.shape() == b.shape());
                if !same {
                    return Err(Error::Checkpoint(
                        "classifier parameters do not match its spec".into(),
                    ));
                }
                Ok(EncoderClassifier {
                    spec: spec.clone(),
                    params: self.params.clone(),
                })
            }
            ModelSpec::Language { .. } => Err(Error::Checkpoint(
                "holds a language model, not a classifier".into(),
            )),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.params.num_scalars() * 8);
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            model: self.model.clone(),
            provenance: self.provenance.clone(),
            tensors,
        };
        let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut digest = Sha256::new();
        digest.update(&manifest);
        digest.update(&payload);
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format.0.to_le_bytes());
        out.extend_from_slice(&self.format.1.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&digest.finalize());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses a checkpoint, returning warnings (e.g. a newer minor version).
    pub fn from_bytes_with_warnings(bytes: &[u8]) -> Result<(Self, Vec<String>)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Checkpoint(format!(
                "truncated header ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let (major, minor) = (u16_at(4), u16_at(6));
        if major != FORMAT_MAJOR {
            return Err(Error::VersionMismatch {
                found_major: major,
                found_minor: minor,
                major: FORMAT_MAJOR,
            });
        }
        let mut warnings = Vec::new();
        if minor > FORMAT_MINOR {
            warnings.push(format!(
                "checkpoint format {major}.{minor} is newer than reader {FORMAT_MAJOR}.{FORMAT_MINOR}; unknown fields ignored"
            ));
        }
        let manifest_len = u64_at(8) as usize;
        let payload_len = u64_at(16) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != manifest_len.saturating_add(payload_len) {
            return Err(Error::Checkpoint(format!(
                "expected {} body bytes, found {}",
                manifest_len.saturating_add(payload_len),
                body.len()
            )));
        }
        let (manifest, payload) = body.split_at(manifest_len);
        let mut digest = Sha256::new();
        digest.update(manifest);
        digest.update(payload);
        if digest.finalize().as_slice() != &bytes[24..56] {
            return Err(Error::DigestMismatch);
        }
        let manifest: Manifest = serde_json::from_slice(manifest)
            .map_err(|e| Error::parse("checkpoint manifest", e.to_string()))?;
        let mut params = ParamStore::new();
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} runs past the payload",
                    entry.name
                )));
            }
            let data = payload[entry.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            params.push(entry.name, Tensor::new(entry.shape, data.collect())?);
        }
        let ckpt = Checkpoint {
            format: (major, minor),
            model: manifest.model,
            params,
            provenance: manifest.provenance,
        };
        Ok((ckpt, warnings))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (ckpt, warnings) = Self::from_bytes_with_warnings(bytes)?;
        for w in warnings {
            warn!("{w}");
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint_with_warnings(path: &Path) -> Result<(Checkpoint, Vec<String>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes_with_warnings(&bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (ckpt, warnings) = load_checkpoint_with_warnings(path)?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let config = ModelConfig {
            vocab_size: 12,
            max_seq_len: 8,
            num_layers: 1,
            model_dim: 8,
            num_heads: 2,
            mlp_dim: 16,
            seed: 3,
        };
        let lm = LanguageModel::init(config, ModelRole::Student).unwrap();
        Checkpoint::from_language_model(
            &lm,
            Provenance {
                path: "unit".into(),
                ..Default::default()
            },
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = tiny();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert!(back.params.bitwise_eq(&c.params));
        assert_eq!(back, c);
        assert_eq!(
            back.language_model().unwrap().params.digest(),
            c.params.digest()
        );
    }

    #[test]
    fn corruption_and_truncation_are_detected() {
        let bytes = tiny().to_bytes();
        let mut bad = bytes.clone();
        let last = bad.len() - 3;
        bad[last] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::DigestMismatch)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..10]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn versions() {
        let mut newer = tiny();
        newer.format.1 = FORMAT_MINOR + 1;
        let (_, warnings) = Checkpoint::from_bytes_with_warnings(&newer.to_bytes()).unwrap();
        assert_eq!(warnings.len(), 1);
        let mut major = tiny();
        major.format.0 = FORMAT_MAJOR + 1;
        assert!(matches!(
            Checkpoint::from_bytes(&major.to_bytes()),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn wrong_kind_is_an_error() {
        assert!(tiny().classifier().is_err());
    }
}
