use std::collections::HashMap;

use rand::Rng;

use super::config::{AttentionKind, ModelConfig, ModelKind};
use super::mlp::EMBEDDING_DIM;
use super::ModelError;
use crate::scalar::Scalar;
use crate::seed::{mix_seed, rng_for, stable_hash};
use crate::tensor::{Tape, Tensor, Var};

/// Prefix shared by the classification head tensors.
pub const HEAD_PREFIX: &str = "head.";

pub fn is_head(name: &str) -> bool {
    name.starts_with(HEAD_PREFIX)
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends, or replaces in place when the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape`; those for which `trainable` is
    /// false become constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(&str) -> bool) -> ParamVars<'_, T> {
        let vars = self
            .iter()
            .map(|(name, t)| tape.leaf(t.clone(), trainable(name)))
            .collect();
        ParamVars { store: self, vars }
    }

    /// Every tensor equal bit for bit.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Tape handles for the tensors of a [`ParamStore`], looked up by name.
pub struct ParamVars<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<'a, T: Scalar> ParamVars<'a, T> {
    /// Pairs `vars` (one per tensor, in store order) with their names.
    pub fn from_vars(store: &'a ParamStore<T>, vars: Vec<Var>) -> Self {
        assert_eq!(store.len(), vars.len(), "one var per parameter tensor");
        Self { store, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::MissingTensors(vec![name.to_string()]))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn linear_layout(out: &mut Vec<(String, Vec<usize>)>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
    out.push((format!("{name}.bias"), vec![fan_out]));
}

/// Names and shapes of one attention layer of width `c`.
pub fn attention_layout(prefix: &str, c: usize, attention: AttentionKind) -> Vec<(String, Vec<usize>)> {
    let attn_out = match attention {
        AttentionKind::Vector => c,
        AttentionKind::Scalar => 1,
    };
    let mut out = Vec::new();
    for (name, fan_in, fan_out) in [
        ("phi", c, c),
        ("psi", c, c),
        ("alpha", c, c),
        ("pos.0", 3, c),
        ("pos.1", c, c),
        ("attn.0", c, c),
        ("attn.1", c, attn_out),
    ] {
        linear_layout(&mut out, &format!("{prefix}.{name}"), fan_in, fan_out);
    }
    out
}

/// Names and shapes of every parameter tensor, in checkpoint order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let last = match config.kind {
        ModelKind::Transformer => {
            let w = &config.widths;
            let s = w.len();
            linear_layout(&mut out, "stem.0", 3, w[0]);
            linear_layout(&mut out, "stem.1", w[0], w[0]);
            for stage in 0..=s {
                let c = w[stage.min(s - 1)];
                out.extend(attention_layout(&format!("block{stage}"), c, config.attention));
                if stage < s {
                    let next = w[(stage + 1).min(s - 1)];
                    linear_layout(&mut out, &format!("down{stage}"), c, next);
                }
            }
            w[s - 1]
        }
        ModelKind::Mlp => {
            let h = config.mlp_hidden;
            linear_layout(&mut out, "mlp.0", EMBEDDING_DIM, h);
            for i in 1..4 {
                linear_layout(&mut out, &format!("mlp.{i}"), h, h);
            }
            h
        }
    };
    linear_layout(&mut out, "head.0", last, config.head_hidden);
    linear_layout(&mut out, "head.1", config.head_hidden, config.num_classes);
    out
}

/// Fan-in scaled uniform weights (variance `1/fan_in`), zero biases.
/// Each tensor draws from its own stream keyed by `(seed, name)`.
pub fn init_tensor<T: Scalar>(name: &str, shape: &[usize], seed: u64) -> Tensor<T> {
    if name.ends_with(".bias") {
        return Tensor::zeros(shape.to_vec());
    }
    let fan_in = shape[0];
    let bound = (3.0 / fan_in as f64).sqrt();
    let mut rng = rng_for(mix_seed(seed, stable_hash(name.as_bytes())));
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-bound..bound)))
}

pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>, ModelError> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape) in param_layout(config) {
        let t = init_tensor(&name, &shape, seed);
        store.insert(name, t);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let c = ModelConfig::transformer(10);
        let a: ParamStore<f64> = init_params(&c, 3).unwrap();
        let b: ParamStore<f64> = init_params(&c, 3).unwrap();
        let d: ParamStore<f64> = init_params(&c, 4).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&d));
    }

    #[test]
    fn biases_exactly_zero() {
        let p: ParamStore<f64> = init_params(&ModelConfig::transformer(10), 1).unwrap();
        for (name, t) in p.iter().filter(|(n, _)| n.ends_with(".bias")) {
            assert!(t.data().iter().all(|&v| v.to_bits() == 0), "{name}");
        }
    }

    #[test]
    fn weight_variance_tracks_fan_in() {
        // 128 × 128 = 16384 draws; U(-a, a) with a = sqrt(3/128) has variance 1/128
        let t: Tensor<f64> = init_tensor("probe.weight", &[128, 128], 11);
        let n = t.numel() as f64;
        let mean = t.sum_all() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = 1.0 / 128.0;
        assert!((var - want).abs() < 0.2 * want, "{var} vs {want}");
    }

    #[test]
    fn layout_shapes() {
        let c = ModelConfig::transformer(10).with_widths(&[16, 32]);
        let layout = param_layout(&c);
        let get = |n: &str| layout.iter().find(|(name, _)| name == n).unwrap().1.clone();
        assert_eq!(get("stem.0.weight"), vec![3, 16]);
        assert_eq!(get("down0.weight"), vec![16, 32]);
        assert_eq!(get("down1.weight"), vec![32, 32]);
        assert_eq!(get("block2.phi.weight"), vec![32, 32]);
        assert_eq!(get("head.0.weight"), vec![32, 64]);
        assert_eq!(get("head.1.weight"), vec![64, 10]);
        let names: Vec<&String> = layout.iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}
