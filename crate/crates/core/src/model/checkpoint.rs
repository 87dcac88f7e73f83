//! PTCK: model parameters plus the configuration that shapes them.
//!
//! ```text
//! "PTCK" | version u32 = 1
//! config_len u32 | config_len bytes of UTF-8 `key=value` lines
//! tensor_count u32
//! tensor_count × ( name_len u32 | name | rank u32 | rank × extent u32 | numel × f64 )
//! ```
//!
//! All integers and floats are little-endian. Metadata that does not
//! describe the architecture (epoch, seed, source) travels in the config
//! text under `meta.` keys.

use std::collections::BTreeMap;
use std::path::Path;

use super::classifier::{check_layout, Model};
use super::config::ModelConfig;
use super::params::{init_tensor, is_head, param_layout, ParamStore};
use super::ModelError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic (not a PTCK file)")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated at byte {offset}: {needed} more bytes needed")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("config text is not UTF-8")]
    NotUtf8,
    #[error("bad config line `{0}`")]
    ConfigLine(String),
    #[error("config: {0}")]
    Config(String),
    #[error("tensor `{0}` appears twice")]
    DuplicateTensor(String),
    #[error("tensor `{name}`: {reason}")]
    BadTensor { name: String, reason: String },
    #[error("{0} does not fit a u32 field")]
    TooLarge(usize),
}

/// What to do with the classification head when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadPolicy {
    /// every tensor must match the target configuration
    Strict,
    /// keep the backbone, draw a fresh head sized for the target
    Reinit { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    /// free-form metadata, keys without the `meta.` prefix
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>) -> Self {
        Self {
            config: model.config.clone(),
            meta: BTreeMap::new(),
            params: model.params.clone(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// The stored model as is, after checking its tensors against its config.
    pub fn into_stored_model(self) -> Result<Model<T>, ModelError> {
        Model::from_parts(self.config, self.params)
    }

    /// Builds a model for `target` from the stored tensors.
    ///
    /// With [`HeadPolicy::Strict`] the stored tensors must be exactly the
    /// ones `target` needs. With [`HeadPolicy::Reinit`] only the backbone
    /// must match; the stored head is dropped and a new one is drawn.
    pub fn into_model(self, target: &ModelConfig, policy: HeadPolicy) -> Result<Model<T>, ModelError> {
        target.validate()?;
        match policy {
            HeadPolicy::Strict => Model::from_parts(target.clone(), self.params),
            HeadPolicy::Reinit { seed } => {
                let layout = param_layout(target);
                let mut params = ParamStore::new();
                let mut missing = Vec::new();
                for (name, shape) in &layout {
                    if is_head(name) {
                        params.insert(name.clone(), init_tensor(name, shape, seed));
                        continue;
                    }
                    match self.params.get(name) {
                        None => missing.push(name.clone()),
                        Some(t) if t.shape() != shape.as_slice() => {
                            return Err(ModelError::ShapeMismatch {
                                name: name.clone(),
                                expected: shape.clone(),
                                found: t.shape().to_vec(),
                            })
                        }
                        Some(t) => params.insert(name.clone(), t.clone()),
                    }
                }
                if !missing.is_empty() {
                    return Err(ModelError::MissingTensors(missing));
                }
                check_layout(target, &params)?;
                Ok(Model {
                    config: target.clone(),
                    params,
                })
            }
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::TooLarge(v))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn config_text<T>(ck: &Checkpoint<T>) -> String {
    let mut text = String::new();
    for (k, v) in ck.config.to_kv() {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in &ck.meta {
        text.push_str(&format!("{META_PREFIX}{k}={v}\n"));
    }
    text
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = config_text(ck);
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, ck.params.len())?;
    for (name, t) in ck.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let left = self.bytes.len() - self.at;
        if left < n {
            return Err(CheckpointError::Truncated {
                offset: self.bytes.len(),
                needed: n - left,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<&'a str, CheckpointError> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| CheckpointError::NotUtf8)
    }
}

fn parse_config_text(text: &str) -> Result<(ModelConfig, BTreeMap<String, String>), CheckpointError> {
    let mut kv = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::ConfigLine(line.to_string()))?;
        match k.strip_prefix(META_PREFIX) {
            Some(m) => meta.insert(m.to_string(), v.to_string()),
            None => kv.insert(k.to_string(), v.to_string()),
        };
    }
    let kind = kv
        .get("model")
        .ok_or_else(|| CheckpointError::Config("no `model` key".into()))?;
    let base = match kind.as_str() {
        "mlp" => ModelConfig::mlp(2),
        _ => ModelConfig::transformer(2),
    };
    let config = ModelConfig::from_kv(base, &kv).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    Ok((config, meta))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (config, meta) = parse_config_text(r.string()?)?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?.to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let payload = shape
            .iter()
            .try_fold(8usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| CheckpointError::BadTensor {
                name: name.clone(),
                reason: format!("extents {shape:?} overflow"),
            })?;
        let raw = r.take(payload)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::BadTensor {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        if params.get(&name).is_some() {
            return Err(CheckpointError::DuplicateTensor(name));
        }
        params.insert(name, tensor);
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.at));
    }
    Ok(Checkpoint { config, meta, params })
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ck: &Checkpoint<T>) -> Result<(), ModelError> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)?).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, ModelError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(decode_checkpoint(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(classes: usize) -> ModelConfig {
        ModelConfig::transformer(classes).with_widths(&[8, 16]).with_k(4).with_head_hidden(8)
    }

    fn saved(classes: usize) -> Checkpoint<f64> {
        Checkpoint::from_model(&Model::init(small(classes), 7).unwrap()).with_meta("epoch", 3)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = saved(10);
        let back: Checkpoint<f64> = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.meta.get("epoch").map(String::as_str), Some("3"));
        assert!(back.params.bitwise_eq(&ck.params));
    }

    #[test]
    fn file_round_trip_and_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ptck");
        save_checkpoint(&path, &saved(4)).unwrap();
        let m = load_checkpoint::<f64>(&path).unwrap().into_stored_model().unwrap();
        assert_eq!(m.config.num_classes, 4);
        let err = load_checkpoint::<f64>(dir.path().join("absent")).unwrap_err();
        assert!(err.to_string().contains("absent"), "{err}");
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&saved(3)).unwrap();
        assert_eq!(&bytes[..8], b"PTCK\x01\0\0\0");
        let text_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + text_len]).unwrap();
        assert!(text.lines().any(|l| l == "num_classes=3"));
        assert!(text.lines().any(|l| l == "meta.epoch=3"));
    }

    #[test]
    fn corrupt_inputs_are_named() {
        let good = encode_checkpoint(&saved(3)).unwrap();
        assert!(matches!(decode_checkpoint::<f64>(b""), Err(CheckpointError::BadMagic)));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_checkpoint::<f64>(&v2), Err(CheckpointError::UnsupportedVersion(2))));
        assert!(matches!(
            decode_checkpoint::<f64>(&good[..good.len() - 3]),
            Err(CheckpointError::Truncated { needed: 3, .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint::<f64>(&long), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn class_count_mismatch_names_both_shapes() {
        let err = saved(10).into_model(&small(12), HeadPolicy::Strict).unwrap_err();
        match &err {
            ModelError::ShapeMismatch { name, expected, found } => {
                assert_eq!(name, "head.1.weight");
                assert_eq!((expected.as_slice(), found.as_slice()), (&[8, 12][..], &[8, 10][..]));
            }
            other => panic!("{other:?}"),
        }
        let msg = err.to_string();
        assert!(msg.contains("[8, 10]") && msg.contains("[8, 12]"), "{msg}");
    }

    #[test]
    fn missing_tensors_listed() {
        let mut ck = saved(3);
        let mut pruned = ParamStore::new();
        for (name, t) in ck.params.iter().filter(|(n, _)| !n.starts_with("block1.")) {
            pruned.insert(name, t.clone());
        }
        ck.params = pruned;
        match ck.into_model(&small(3), HeadPolicy::Reinit { seed: 1 }) {
            Err(ModelError::MissingTensors(names)) => {
                assert_eq!(names.len(), 14);
                assert!(names.iter().all(|n| n.starts_with("block1.")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn head_reinit_keeps_backbone() {
        let ck = saved(10);
        let m = ck.clone().into_model(&small(5), HeadPolicy::Reinit { seed: 2 }).unwrap();
        assert_eq!(m.params.get("head.1.bias").unwrap().shape(), &[5]);
        for (name, t) in ck.params.iter().filter(|(n, _)| !is_head(n)) {
            assert!(m.params.get(name).unwrap().bitwise_eq(t), "{name}");
        }
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let m = Model::<f32>::init(small(3), 1).unwrap();
        let ck = Checkpoint::from_model(&m);
        let back: Checkpoint<f32> = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert!(back.params.bitwise_eq(&m.params));
    }
}
