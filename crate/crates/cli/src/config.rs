//! Flat `key=value` run configuration.
//!
//! Every key has a default; a config file and then `--set` overrides are
//! applied on top, and unknown keys are rejected. The effective map is
//! what gets echoed, so rerunning from an echo reproduces the run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pointxfer::datasets::{synth_class_id, Dataset, Split, SynthSpec};
use pointxfer::model::{ModelConfig, ModelKind};
use pointxfer::training::{AdamConfig, TrainConfig};

use crate::Invalid;

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.source", "synth"),
    ("data.root", ""),
    ("data.classes", "sphere,cube,cylinder,torus"),
    ("data.per_class", "10"),
    ("data.eval_per_class", "10"),
    ("data.points", "256"),
    ("data.seed", "0"),
    ("data.eval", "true"),
    ("model.kind", "transformer"),
    ("model.widths", "16,32"),
    ("model.k", "16"),
    ("model.ratio", "0.25"),
    ("model.head_hidden", "64"),
    ("model.attention", "vector"),
    ("model.mlp_hidden", "64"),
    ("train.epochs", "30"),
    ("train.batch_size", "16"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("train.freeze_backbone", "false"),
    ("train.eval_every", "1"),
    ("train.points_per_cloud", "256"),
    ("train.wall_clock", "false"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Invalid> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Invalid(format!("unknown config key `{key}`"))),
        }
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, line: &str) -> Result<(), Invalid> {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Invalid(format!("expected key=value, got `{line}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies a config file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), Invalid> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line)
                .map_err(|e| Invalid(format!("{}:{}: {}", path.display(), i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default")
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V, Invalid> {
        let v = self.get(key);
        v.parse().map_err(|_| Invalid(format!("bad value `{v}` for `{key}`")))
    }

    pub fn seed(&self) -> Result<u64, Invalid> {
        self.parse("seed")
    }

    /// Model settings; the class count is filled in from the dataset.
    pub fn model(&self, num_classes: usize) -> Result<ModelConfig, Invalid> {
        let kind: ModelKind = self.get("model.kind").parse().map_err(Invalid)?;
        let widths = self
            .get("model.widths")
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Invalid(format!("bad value `{}` for `model.widths`", self.get("model.widths"))))?;
        let config = ModelConfig {
            kind,
            widths,
            k: self.parse("model.k")?,
            ratio: self.parse("model.ratio")?,
            num_classes,
            head_hidden: self.parse("model.head_hidden")?,
            attention: self.get("model.attention").parse().map_err(Invalid)?,
            mlp_hidden: self.parse("model.mlp_hidden")?,
        };
        config.validate().map_err(|e| Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn train(&self) -> Result<TrainConfig, Invalid> {
        let config = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            adam: AdamConfig {
                lr: self.parse("train.lr")?,
                beta1: self.parse("train.beta1")?,
                beta2: self.parse("train.beta2")?,
                eps: self.parse("train.eps")?,
            },
            seed: self.seed()?,
            freeze_backbone: self.parse("train.freeze_backbone")?,
            eval_every: self.parse("train.eval_every")?,
            points_per_cloud: self.parse("train.points_per_cloud")?,
            wall_clock: self.parse("train.wall_clock")?,
        };
        config.validate().map_err(|e| Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn data(&self) -> Result<DataConfig, Invalid> {
        let source = match self.get("data.source") {
            "synth" => {
                let classes: Vec<String> = self.get("data.classes").split(',').map(|c| c.trim().to_string()).collect();
                if let Some(bad) = classes.iter().find(|c| synth_class_id(c).is_none()) {
                    return Err(Invalid(format!("unknown synthetic class `{bad}`")));
                }
                DataSource::Synth {
                    classes,
                    per_class: self.parse("data.per_class")?,
                    eval_per_class: self.parse("data.eval_per_class")?,
                    points: self.parse("data.points")?,
                    seed: self.parse("data.seed")?,
                }
            }
            "dir" => {
                let root = PathBuf::from(self.get("data.root"));
                if !root.is_dir() {
                    return Err(Invalid(format!("dataset directory `{}` does not exist", root.display())));
                }
                DataSource::Dir { root }
            }
            other => return Err(Invalid(format!("data.source must be synth or dir, got `{other}`"))),
        };
        Ok(DataConfig {
            source,
            eval: self.parse("data.eval")?,
        })
    }
}

impl fmt::Display for RawConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth {
        classes: Vec<String>,
        per_class: usize,
        eval_per_class: usize,
        points: usize,
        seed: u64,
    },
    /// `root/<class>/<split>/*.pcld`
    Dir { root: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// evaluate on the test split during training
    pub eval: bool,
}

impl DataConfig {
    pub fn load(&self, split: Split) -> anyhow::Result<Dataset<f64>> {
        Ok(match &self.source {
            DataSource::Synth {
                classes,
                per_class,
                eval_per_class,
                points,
                seed,
            } => {
                let names: Vec<&str> = classes.iter().map(String::as_str).collect();
                let n = if split == Split::Train { *per_class } else { *eval_per_class };
                SynthSpec::from_names(&names, n, *points, *seed)?.generate(split)?
            }
            DataSource::Dir { root } => Dataset::load_dir(root, split)
                .map_err(|e| anyhow::anyhow!("loading {} split of {}: {e}", split, root.display()))?,
        })
    }

    /// Short tag recorded in checkpoint metadata.
    pub fn tag(&self) -> String {
        match &self.source {
            DataSource::Synth { classes, seed, .. } => format!("synth:{}@{seed}", classes.join("+")),
            DataSource::Dir { root } => format!("dir:{}", root.display()),
        }
    }
}
