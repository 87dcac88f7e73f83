//! Finite-difference checks of every differentiable op, both layer types
//! and the two small classifiers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::synth_generate;
use crate::geometry::{knn_self, NeighborIndex, Point};
use crate::model::{
    attention_layout, forward, init_params, plan_transition_down, point_transformer_layer, transition_down,
    AttentionKind, LayerVars, Linear, ModelConfig, ModelError, ParamStore, ParamVars, StartPolicy,
};
use crate::seed::{mix_seed, rng_for, stable_hash};
use crate::tensor::{grad_check_many, GradCheckReport, OpKind, Tape, Tensor, Var};

pub const DEFAULT_SEEDS: u64 = 10;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seeds: u64,
    pub eps: f64,
    pub threshold: f64,
    /// sign-flip this op's backward rule in the analytic pass
    pub fault: Option<OpKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            eps: DEFAULT_EPS,
            threshold: DEFAULT_THRESHOLD,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub name: String,
    /// worst relative error over all seeds
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

/// Components in report order: every op, then layers, then models.
pub fn component_names() -> Vec<String> {
    let mut names: Vec<String> = OpKind::DIFFERENTIABLE.iter().map(|k| k.name().to_string()).collect();
    names.extend(
        [
            "point_transformer_layer",
            "point_transformer_layer_scalar",
            "transition_down",
            "transformer_classifier",
            "mlp_baseline",
        ]
        .map(String::from),
    );
    names
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample(StandardNormal))
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point<f64>> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

fn random_index(rows: usize, k: usize, bound: usize, rng: &mut ChaCha8Rng) -> NeighborIndex {
    let idx = (0..rows * k).map(|_| rng.random_range(0..bound)).collect();
    NeighborIndex::new(rows, k, idx).expect("rows × k entries")
}

fn points_tensor(points: &[Point<f64>]) -> Tensor<f64> {
    Tensor::new(vec![points.len(), 3], points.iter().flatten().copied().collect()).expect("3 per point")
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output coordinate carries
/// a distinct weight.
fn contract(tape: &mut Tape<f64>, out: Var, r: &Tensor<f64>) -> Result<Var, ModelError> {
    let r = tape.constant(r.clone());
    let prod = tape.mul(out, r)?;
    Ok(tape.sum_all(prod)?)
}

type Check = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, ModelError>>;

/// Inputs and loss of one component at one seed.
struct Case {
    inputs: Vec<Tensor<f64>>,
    loss: Check,
}

fn op_case(op: OpKind, rng: &mut ChaCha8Rng) -> Case {
    let r = |shape: &[usize], rng: &mut ChaCha8Rng| normal(shape, rng);
    let (inputs, loss): (Vec<Tensor<f64>>, Check) = match op {
        OpKind::MatMul => {
            let w = r(&[3, 2], rng);
            (
                vec![r(&[3, 4], rng), r(&[4, 2], rng)],
                Box::new(move |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            // equal shapes, then a trailing-1 broadcast
            let w = r(&[2, 3, 4], rng);
            let f = move |t: &mut Tape<f64>, a: Var, b: Var| match op {
                OpKind::Add => t.add(a, b),
                OpKind::Sub => t.sub(a, b),
                _ => t.mul(a, b),
            };
            (
                vec![r(&[2, 3, 4], rng), r(&[2, 3, 4], rng), r(&[2, 3, 1], rng)],
                Box::new(move |t, v| {
                    let y = f(t, v[0], v[1])?;
                    let y = f(t, y, v[2])?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Scale => {
            let w = r(&[3, 4], rng);
            let s = rng.sample::<f64, _>(StandardNormal);
            (
                vec![r(&[3, 4], rng)],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], s);
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Relu => {
            let w = r(&[4, 5], rng);
            (
                vec![r(&[4, 5], rng)],
                Box::new(move |t, v| {
                    let y = t.relu(v[0]);
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::AddBias => {
            let w = r(&[2, 3, 4], rng);
            (
                vec![r(&[2, 3, 4], rng), r(&[4], rng)],
                Box::new(move |t, v| {
                    let y = t.add_bias(v[0], v[1])?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Softmax => {
            let w = r(&[2, 3, 4], rng);
            (
                vec![r(&[2, 3, 4], rng)],
                Box::new(move |t, v| {
                    let y = t.softmax(v[0], 1)?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Sum | OpKind::Mean | OpKind::Max => {
            let w = r(&[2, 4], rng);
            (
                vec![r(&[2, 5, 4], rng)],
                Box::new(move |t, v| {
                    let y = match op {
                        OpKind::Sum => t.sum(v[0], 1)?,
                        OpKind::Mean => t.mean(v[0], 1)?,
                        _ => t.max(v[0], 1)?,
                    };
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Gather => {
            let idx = random_index(4, 3, 5, rng);
            let w = r(&[4, 3, 2], rng);
            (
                vec![r(&[5, 2], rng)],
                Box::new(move |t, v| {
                    let y = t.gather_rows(v[0], &idx)?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::Reshape => {
            let w = r(&[3, 4], rng);
            (
                vec![r(&[2, 6], rng)],
                Box::new(move |t, v| {
                    let y = t.reshape(v[0], vec![3, 4])?;
                    contract(t, y, &w)
                }),
            )
        }
        OpKind::CrossEntropy => {
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            (
                vec![r(&[4, 5], rng)],
                Box::new(move |t, v| Ok(t.cross_entropy(v[0], &labels)?)),
            )
        }
        OpKind::Leaf => unreachable!("leaves have no backward rule"),
    };
    Case { inputs, loss }
}

/// Random weights and biases of one attention layer, prefixed `layer`.
fn random_layer(c: usize, attention: AttentionKind, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (name, shape) in attention_layout("layer", c, attention) {
        let scale = 1.0 / (shape[0] as f64).sqrt();
        let mut t = normal(&shape, rng);
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
        store.insert(name, t);
    }
    store
}

/// Differentiates with respect to the features and every layer tensor.
fn layer_case(attention: AttentionKind, rng: &mut ChaCha8Rng) -> Case {
    let (n, c, k) = (8, 4, 4);
    let points = random_points(n, rng);
    let nbr = knn_self(&points, k).expect("k <= n");
    let store = random_layer(c, attention, rng);
    let w = normal(&[n, c], rng);
    let mut inputs = vec![normal(&[n, c], rng)];
    inputs.extend(store.tensors().iter().cloned());
    let pos = points_tensor(&points);
    Case {
        inputs,
        loss: Box::new(move |t, v| {
            let vars = ParamVars::from_vars(&store, v[1..].to_vec());
            let layer = LayerVars::from_params(&vars, "layer")?;
            let p = t.constant(pos.clone());
            let y = point_transformer_layer(t, v[0], p, &nbr, &layer)?.output;
            contract(t, y, &w)
        }),
    }
}

fn transition_down_case(rng: &mut ChaCha8Rng) -> Case {
    let (n, c_in, c_out, m, k) = (12, 4, 6, 6, 3);
    let points = random_points(n, rng);
    let plan = plan_transition_down(&points, m, k, 0).expect("m, k <= n");
    let w = normal(&[m, c_out], rng);
    Case {
        inputs: vec![normal(&[n, c_in], rng), normal(&[c_in, c_out], rng), normal(&[c_out], rng)],
        loss: Box::new(move |t, v| {
            let lift = Linear { weight: v[1], bias: v[2] };
            let y = transition_down(t, v[0], &plan.groups, &lift)?;
            contract(t, y, &w)
        }),
    }
}

/// Two clouds of 32 points through a two-stage width-8 network (or the
/// baseline), differentiated with respect to every parameter.
fn model_case(config: ModelConfig, seed: u64, rng: &mut ChaCha8Rng) -> Case {
    let (batch, p) = (2, 32);
    let mut positions = Vec::with_capacity(batch * p);
    let mut labels = Vec::with_capacity(batch);
    for b in 0..batch {
        let class = rng.random_range(0..config.num_classes);
        positions.extend(synth_generate::<f64>(class, mix_seed(seed, b as u64), p).expect("p >= 8").positions);
        labels.push(class);
    }
    let store: ParamStore<f64> = init_params(&config, seed).expect("valid config");
    Case {
        inputs: store.tensors().to_vec(),
        loss: Box::new(move |t, v| {
            let vars = ParamVars::from_vars(&store, v.to_vec());
            let logits = forward(t, &config, &vars, &positions, batch, StartPolicy::First)?;
            Ok(t.cross_entropy(logits, &labels)?)
        }),
    }
}

fn build_case(component: &str, seed: u64, rng: &mut ChaCha8Rng) -> Case {
    if let Ok(op) = component.parse::<OpKind>() {
        return op_case(op, rng);
    }
    match component {
        "point_transformer_layer" => layer_case(AttentionKind::Vector, rng),
        "point_transformer_layer_scalar" => layer_case(AttentionKind::Scalar, rng),
        "transition_down" => transition_down_case(rng),
        "transformer_classifier" => {
            let c = ModelConfig::transformer(4).with_widths(&[8, 8]).with_k(8).with_head_hidden(8);
            model_case(c, seed, rng)
        }
        "mlp_baseline" => {
            let mut c = ModelConfig::mlp(4).with_head_hidden(8);
            c.mlp_hidden = 8;
            model_case(c, seed, rng)
        }
        other => unreachable!("unknown component {other}"),
    }
}

/// Checks one component at seeds `0..config.seeds`.
pub fn check_component(name: &str, config: &SuiteConfig) -> Result<ComponentReport, ModelError> {
    let mut worst = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for seed in 0..config.seeds {
        let mut rng = rng_for(mix_seed(seed, stable_hash(name.as_bytes())));
        let case = build_case(name, seed, &mut rng);
        let r = grad_check_many(&case.loss, &case.inputs, config.eps, config.fault)?;
        worst.checked += r.checked;
        worst.skipped += r.skipped;
        // NaN compares false, so keep it explicitly
        if !(r.max_rel_error <= worst.max_rel_error) {
            worst.max_rel_error = r.max_rel_error;
        }
    }
    Ok(ComponentReport {
        name: name.to_string(),
        max_rel_error: worst.max_rel_error,
        checked: worst.checked,
        skipped: worst.skipped,
        passed: worst.max_rel_error < config.threshold,
    })
}

/// One report per component, in [`component_names`] order.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<ComponentReport>, ModelError> {
    component_names().iter().map(|n| check_component(n, config)).collect()
}
