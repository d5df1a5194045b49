//! Binary containers for encoder checkpoints and trained models.
//!
//! Layout: the 8-byte magic `DGPCKPT1`, a little-endian `u32` length, that many
//! bytes of UTF-8 JSON metadata, then every tensor of the metadata manifest as
//! little-endian `f64` values in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dgp_core::dgp::{DgpConfig, DgpModel, DistanceTarget, LossWeights, Variant};
use dgp_core::encoder::{GinArch, GinEncoder, Pooling};
use dgp_core::params::ParamSet;
use dgp_core::pretrain::PretrainConfig;
use dgp_core::scoring::{ClusterStats, MahalanobisScorer, ScorerConfig};
use dgp_core::Tensor;

pub const MAGIC: &[u8; 8] = b"DGPCKPT1";
pub const FORMAT_VERSION: u32 = 1;
pub const ENCODER_KIND: &str = "gin-encoder";
pub const MODEL_KIND: &str = "dgp-model";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("expected a `{expected}` checkpoint, found `{got}`")]
    Kind { expected: String, got: String },
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("encoder expects feature_dim {expected}, data has {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("model was trained on encoder {expected}, found {got}")]
    EncoderHash { expected: String, got: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] dgp_core::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    version: u32,
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Serializes metadata and named tensors into the container layout.
pub fn encode<M: Serialize>(kind: &str, meta: &M, tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_owned(),
        version: FORMAT_VERSION,
        meta,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.rows(), t.cols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let body: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(12 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode`], checking magic, version, kind and length.
pub fn decode<M: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(M, Vec<(String, Tensor)>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(CheckpointError::Truncated {
                needed,
                have: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(12)?;
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    need(12 + json_len)?;
    let header: Header<serde_json::Value> = serde_json::from_slice(&bytes[12..12 + json_len])?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    if header.kind != kind {
        return Err(CheckpointError::Kind {
            expected: kind.to_owned(),
            got: header.kind,
        });
    }
    let meta: M = serde_json::from_value(header.meta)?;
    let total: usize = header.tensors.iter().map(|e| e.shape[0] * e.shape[1]).sum();
    let end = 12 + json_len + total * 8;
    need(end)?;
    if bytes.len() > end {
        return Err(CheckpointError::Trailing(bytes.len() - end));
    }
    let mut words = bytes[12 + json_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let tensors = header
        .tensors
        .into_iter()
        .map(|e| {
            let data: Vec<f64> = words.by_ref().take(e.shape[0] * e.shape[1]).collect();
            Ok((e.name, Tensor::from_vec(e.shape[0], e.shape[1], data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, tensors))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn param_tensors(params: &ParamSet) -> Vec<(String, Tensor)> {
    params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
}

fn param_set(tensors: Vec<(String, Tensor)>) -> ParamSet {
    let mut params = ParamSet::new();
    for (name, t) in tensors {
        params.insert(name, t);
    }
    params
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchMeta {
    pub feature_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub proj_dim: usize,
    pub pooling: String,
}

impl ArchMeta {
    pub fn of(arch: &GinArch) -> Self {
        Self {
            feature_dim: arch.feature_dim,
            layers: arch.layers,
            hidden: arch.hidden,
            proj_dim: arch.proj_dim,
            pooling: arch.pooling.as_str().to_owned(),
        }
    }

    pub fn arch(&self) -> Result<GinArch> {
        Ok(GinArch {
            feature_dim: self.feature_dim,
            layers: self.layers,
            hidden: self.hidden,
            proj_dim: self.proj_dim,
            pooling: self.pooling.parse::<Pooling>()?,
        })
    }
}

/// How an encoder was pre-trained, kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub method: String,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eta: f64,
    pub augmentations: [String; 2],
    pub seed: u64,
}

impl PretrainMeta {
    pub fn of(cfg: &PretrainConfig) -> Self {
        Self {
            method: cfg.method.as_str().to_owned(),
            temperature: cfg.temperature,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            lr: cfg.lr,
            eta: cfg.eta,
            augmentations: [cfg.augmentations.0.to_spec(), cfg.augmentations.1.to_spec()],
            seed: cfg.seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    arch: ArchMeta,
    pretrain: PretrainMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub encoder: GinEncoder,
    pub pretrain: PretrainMeta,
}

impl EncoderCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = EncoderMeta {
            arch: ArchMeta::of(&self.encoder.arch),
            pretrain: self.pretrain.clone(),
        };
        encode(ENCODER_KIND, &meta, &param_tensors(&self.encoder.params))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors): (EncoderMeta, _) = decode(ENCODER_KIND, bytes)?;
        let encoder = GinEncoder::from_params(meta.arch.arch()?, param_set(tensors))?;
        Ok(Self {
            encoder,
            pretrain: meta.pretrain,
        })
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?)
    }

    /// Rejects data whose node features do not fit the encoder input.
    pub fn expect_feature_dim(&self, got: usize) -> Result<()> {
        let expected = self.encoder.arch.feature_dim;
        if expected != got {
            return Err(CheckpointError::FeatureDim { expected, got });
        }
        Ok(())
    }
}

/// The frozen encoder a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub distance_target: String,
}

impl TrainingMeta {
    pub fn of(cfg: &DgpConfig) -> Self {
        Self {
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            lr: cfg.lr,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            distance_target: cfg.distance_target.as_str().to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct WeightsMeta {
    class_specific: f64,
    class_agnostic: f64,
    alpha1: f64,
    alpha2: f64,
    score1: f64,
    score2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct StatsMeta {
    eps_reg: f64,
    eps_d: f64,
    clusters: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    class_count: usize,
    variant: String,
    weights: WeightsMeta,
    scorer: StatsMeta,
    encoder: EncoderRef,
    training: TrainingMeta,
    /// Fitted statistics per branch; `None` when a branch was never fitted.
    stats: [Option<StatsMeta>; 2],
}

/// A trained model together with the reference to its encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: DgpModel,
    pub encoder: EncoderRef,
    pub training: TrainingMeta,
}

const STAT_PARTS: [&str; 3] = ["mean", "cov", "inv_cov"];

fn stat_name(branch: usize, cluster: usize, part: &str) -> String {
    format!("stats{}.{cluster}.{part}", branch + 1)
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let w = m.weights;
        let mut tensors = param_tensors(&m.params);
        let mut stats = [None, None];
        for (b, scorer) in m.stats.iter().enumerate() {
            let Some(scorer) = scorer else { continue };
            stats[b] = Some(StatsMeta {
                eps_reg: scorer.eps_reg,
                eps_d: scorer.eps_d,
                clusters: scorer.clusters(),
            });
            for (q, s) in scorer.stats.iter().enumerate() {
                tensors.push((stat_name(b, q, STAT_PARTS[0]), Tensor::row_vector(s.mean.clone())));
                tensors.push((stat_name(b, q, STAT_PARTS[1]), s.cov.clone()));
                tensors.push((stat_name(b, q, STAT_PARTS[2]), s.inv_cov.clone()));
            }
        }
        let meta = ModelMeta {
            class_count: m.class_count,
            variant: m.variant.as_str().to_owned(),
            weights: WeightsMeta {
                class_specific: w.class_specific,
                class_agnostic: w.class_agnostic,
                alpha1: w.alpha1,
                alpha2: w.alpha2,
                score1: w.score1,
                score2: w.score2,
            },
            scorer: StatsMeta {
                eps_reg: m.scorer.eps_reg,
                eps_d: m.scorer.eps_d,
                clusters: m.scorer.clusters,
            },
            encoder: self.encoder.clone(),
            training: self.training.clone(),
            stats,
        };
        encode(MODEL_KIND, &meta, &tensors)
    }

    /// Rebuilds the model around `encoder`, which must hash to the stored reference.
    pub fn from_bytes(bytes: &[u8], encoder: &EncoderCheckpoint) -> Result<Self> {
        let (meta, tensors): (ModelMeta, Vec<(String, Tensor)>) = decode(MODEL_KIND, bytes)?;
        let got = encoder.sha256()?;
        if got != meta.encoder.sha256 {
            return Err(CheckpointError::EncoderHash {
                expected: meta.encoder.sha256,
                got,
            });
        }
        let (stat_tensors, param_tensors): (Vec<_>, Vec<_>) =
            tensors.into_iter().partition(|(name, _)| name.starts_with("stats"));
        let mut lookup: std::collections::BTreeMap<String, Tensor> = stat_tensors.into_iter().collect();
        let mut take = |name: String| {
            lookup
                .remove(&name)
                .ok_or(dgp_core::Error::UnknownParam(name))
        };
        let mut stats = [None, None];
        for (b, slot) in stats.iter_mut().enumerate() {
            let Some(sm) = meta.stats[b] else { continue };
            let mut clusters = Vec::with_capacity(sm.clusters);
            for q in 0..sm.clusters {
                clusters.push(ClusterStats {
                    mean: take(stat_name(b, q, STAT_PARTS[0]))?.into_data(),
                    cov: take(stat_name(b, q, STAT_PARTS[1]))?,
                    inv_cov: take(stat_name(b, q, STAT_PARTS[2]))?,
                });
            }
            *slot = Some(MahalanobisScorer {
                stats: clusters,
                eps_reg: sm.eps_reg,
                eps_d: sm.eps_d,
            });
        }
        if let Some(extra) = lookup.into_keys().next() {
            return Err(dgp_core::Error::UnknownParam(extra).into());
        }
        let w = meta.weights;
        let mut frozen = encoder.encoder.clone();
        frozen.freeze();
        let model = DgpModel {
            encoder: frozen,
            params: param_set(param_tensors),
            class_count: meta.class_count,
            weights: LossWeights {
                class_specific: w.class_specific,
                class_agnostic: w.class_agnostic,
                alpha1: w.alpha1,
                alpha2: w.alpha2,
                score1: w.score1,
                score2: w.score2,
            },
            variant: meta.variant.parse::<Variant>()?,
            scorer: ScorerConfig {
                clusters: meta.scorer.clusters,
                eps_reg: meta.scorer.eps_reg,
                eps_d: meta.scorer.eps_d,
            },
            stats,
        };
        meta.training.distance_target.parse::<DistanceTarget>()?;
        Ok(Self {
            model,
            encoder: meta.encoder,
            training: meta.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// The encoder reference stored in a model file, read without the encoder.
    pub fn encoder_ref(bytes: &[u8]) -> Result<EncoderRef> {
        let (meta, _): (ModelMeta, Vec<(String, Tensor)>) = decode(MODEL_KIND, bytes)?;
        Ok(meta.encoder)
    }

    /// Loads a model and the encoder it references. A relative encoder path
    /// is resolved against the model file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let reference = Self::encoder_ref(&bytes)?;
        let enc_path = Path::new(&reference.path);
        let enc_path = if enc_path.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(enc_path)
        } else {
            enc_path.to_path_buf()
        };
        let encoder = EncoderCheckpoint::load(&enc_path)?;
        Self::from_bytes(&bytes, &encoder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dgp_core::seed::rng;

    fn checkpoint(feature_dim: usize) -> EncoderCheckpoint {
        let arch = GinArch {
            feature_dim,
            layers: 2,
            hidden: 4,
            proj_dim: 5,
            pooling: Pooling::Sum,
        };
        EncoderCheckpoint {
            encoder: GinEncoder::new(arch, &mut rng(3)).unwrap(),
            pretrain: PretrainMeta::of(&PretrainConfig::default()),
        }
    }

    #[test]
    fn encoder_round_trip_is_byte_identical() {
        let ck = checkpoint(3);
        let bytes = ck.to_bytes().unwrap();
        let back = EncoderCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = checkpoint(3).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(EncoderCheckpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncation_detected() {
        let bytes = checkpoint(3).to_bytes().unwrap();
        for cut in [10, 20, bytes.len() - 1] {
            assert!(
                matches!(EncoderCheckpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn trailing_bytes_detected() {
        let mut bytes = checkpoint(3).to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(EncoderCheckpoint::from_bytes(&bytes), Err(CheckpointError::Trailing(1))));
    }

    #[test]
    fn feature_dim_mismatch_is_explicit() {
        let err = checkpoint(3).expect_feature_dim(7).unwrap_err();
        assert!(matches!(err, CheckpointError::FeatureDim { expected: 3, got: 7 }));
    }

    #[test]
    fn wrong_kind_rejected() {
        let bytes = checkpoint(3).to_bytes().unwrap();
        assert!(matches!(decode::<serde_json::Value>(MODEL_KIND, &bytes), Err(CheckpointError::Kind { .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let ck = checkpoint(3);
        let mut other = ck.clone();
        other.encoder.params.get_mut("proj.b1").unwrap().value.data_mut()[0] += 1e-12;
        assert_ne!(ck.sha256().unwrap(), other.sha256().unwrap());
        assert_eq!(ck.sha256().unwrap(), ck.clone().sha256().unwrap());
    }
}
