use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::geometry::DEFAULT_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Transformer,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transformer" => Ok(ModelKind::Transformer),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model `{other}` (expected transformer or mlp)")),
        }
    }
}

/// How attention weights are normalized across a neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// one softmax per channel: each neighbor gets a weight vector
    Vector,
    /// one softmax per point: each neighbor gets a single weight
    Scalar,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Vector => "vector",
            AttentionKind::Scalar => "scalar",
        }
    }
}

impl FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vector" => Ok(AttentionKind::Vector),
            "scalar" => Ok(AttentionKind::Scalar),
            other => Err(format!("unknown attention `{other}` (expected vector or scalar)")),
        }
    }
}

/// Architecture hyperparameters. Fields that do not apply to `kind` are
/// carried but ignored (the MLP has no stages, the transformer no
/// `mlp_hidden`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// channel width of each stage; the stage count is `widths.len()`
    pub widths: Vec<usize>,
    pub k: usize,
    /// fraction of points kept by each transition-down block
    pub ratio: f64,
    pub num_classes: usize,
    pub head_hidden: usize,
    pub attention: AttentionKind,
    pub mlp_hidden: usize,
}

impl ModelConfig {
    pub fn transformer(num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Transformer,
            widths: vec![32, 64],
            k: DEFAULT_K,
            ratio: 0.25,
            num_classes,
            head_hidden: 64,
            attention: AttentionKind::Vector,
            mlp_hidden: 64,
        }
    }

    pub fn mlp(num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            ..Self::transformer(num_classes)
        }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_head_hidden(mut self, h: usize) -> Self {
        self.head_hidden = h;
        self
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.head_hidden == 0 || self.mlp_hidden == 0 {
            return bad("hidden widths must be >= 1".into());
        }
        if self.kind == ModelKind::Transformer {
            if self.widths.is_empty() || self.widths.contains(&0) {
                return bad(format!("stage widths must be nonempty and >= 1, got {:?}", self.widths));
            }
            if !(self.ratio > 0.0 && self.ratio <= 1.0) {
                return bad(format!("ratio must lie in (0, 1], got {}", self.ratio));
            }
            if self.k == 0 {
                return bad("k must be >= 1".into());
            }
        }
        Ok(())
    }

    /// Points surviving `stage` transition-down blocks from `points`.
    pub fn points_after(&self, points: usize, stage: usize) -> usize {
        (0..stage).fold(points, |n, _| downsampled(n, self.ratio))
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        [
            ("model", self.kind.name().to_string()),
            ("widths", widths.join(",")),
            ("k", self.k.to_string()),
            ("ratio", format!("{:?}", self.ratio)),
            ("num_classes", self.num_classes.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("attention", self.attention.name().to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Inverse of [`ModelConfig::to_kv`]. Keys not listed there are
    /// ignored; missing keys keep the defaults of `base`.
    pub fn from_kv(base: ModelConfig, kv: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let mut c = base;
        let parse_err = |key: &str, v: &str| ModelError::InvalidConfig(format!("bad value `{v}` for `{key}`"));
        for (key, v) in kv {
            match key.as_str() {
                "model" => c.kind = v.parse().map_err(ModelError::InvalidConfig)?,
                "widths" => {
                    c.widths = v
                        .split(',')
                        .map(|w| w.trim().parse::<usize>().map_err(|_| parse_err(key, v)))
                        .collect::<Result<_, _>>()?
                }
                "k" => c.k = v.parse().map_err(|_| parse_err(key, v))?,
                "ratio" => c.ratio = v.parse().map_err(|_| parse_err(key, v))?,
                "num_classes" => c.num_classes = v.parse().map_err(|_| parse_err(key, v))?,
                "head_hidden" => c.head_hidden = v.parse().map_err(|_| parse_err(key, v))?,
                "attention" => c.attention = v.parse().map_err(ModelError::InvalidConfig)?,
                "mlp_hidden" => c.mlp_hidden = v.parse().map_err(|_| parse_err(key, v))?,
                _ => {}
            }
        }
        Ok(c)
    }
}

/// `ceil(ratio · n)`, at least 1.
pub fn downsampled(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).ceil() as usize).clamp(1, n.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::transformer(7).with_widths(&[16, 32, 48]);
        c.ratio = 0.3;
        c.attention = AttentionKind::Scalar;
        let back = ModelConfig::from_kv(ModelConfig::mlp(2), &c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::transformer(1).validate().is_err());
        let mut c = ModelConfig::transformer(3);
        c.ratio = 0.0;
        assert!(c.validate().is_err());
        c.ratio = 1.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn downsampling_counts() {
        assert_eq!(downsampled(128, 0.25), 32);
        assert_eq!(downsampled(8, 0.5), 4);
        assert_eq!(downsampled(5, 0.25), 2);
        assert_eq!(downsampled(1, 0.25), 1);
        assert_eq!(ModelConfig::transformer(2).points_after(128, 2), 8);
    }
}
