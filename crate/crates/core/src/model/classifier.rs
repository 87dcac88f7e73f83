use super::config::{downsampled, ModelConfig, ModelKind};
use super::layers::{plan_transition_down, point_transformer_layer, transition_down, two_layer};
use super::layers::{LayerVars, Linear, StartPolicy};
use super::mlp::mlp_baseline_forward;
use super::params::{init_tensor, is_head, param_layout, ParamStore, ParamVars};
use super::{init_params, ModelError};
use crate::geometry::{knn_self, NeighborIndex, Point};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

fn positions_tensor<T: Scalar>(points: &[Point<T>]) -> Tensor<T> {
    let data = points.iter().flat_map(|p| p.iter().copied()).collect();
    Tensor::new(vec![points.len(), 3], data).expect("3 coordinates per point")
}

fn split_batch<T>(positions: &[Point<T>], batch: usize) -> Result<usize, ModelError> {
    if batch == 0 || positions.is_empty() || positions.len() % batch != 0 {
        return Err(ModelError::InvalidInput(format!(
            "{} positions do not split into {batch} equal clouds",
            positions.len()
        )));
    }
    Ok(positions.len() / batch)
}

/// Attention classifier over `batch` clouds of equal size laid end to end
/// in `positions`. Returns logits `batch × num_classes`.
///
/// Each stage runs one attention layer on the `k` nearest neighbors of
/// every point, then a transition-down block. One more attention layer
/// runs at the coarsest resolution before the features are mean-pooled per
/// cloud and passed through the head. Neighborhood sizes are clamped to
/// the number of points left in the cloud.
pub fn forward_classifier<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    params: &ParamVars<'_, T>,
    positions: &[Point<T>],
    batch: usize,
    start: StartPolicy,
) -> Result<Var, ModelError> {
    let p = split_batch(positions, batch)?;
    if p < config.k {
        return Err(ModelError::InvalidInput(format!(
            "clouds have {p} points, fewer than k = {}",
            config.k
        )));
    }
    let stem = [Linear::from_params(params, "stem.0")?, Linear::from_params(params, "stem.1")?];
    let mut pos_var = tape.constant(positions_tensor(positions));
    let mut x = two_layer(tape, &stem[0], &stem[1], pos_var)?;

    let mut clouds: Vec<Vec<Point<T>>> = positions.chunks(p).map(<[_]>::to_vec).collect();
    let mut n = p;
    let offsets = |n: usize| (0..batch).map(|b| b * n).collect::<Vec<_>>();
    for stage in 0..=config.stages() {
        let k = config.k.min(n);
        let parts = clouds
            .iter()
            .map(|c| knn_self(c, k))
            .collect::<Result<Vec<_>, _>>()?;
        let nbr = NeighborIndex::concat(&parts, &offsets(n))?;
        let layer = LayerVars::from_params(params, &format!("block{stage}"))?;
        x = point_transformer_layer(tape, x, pos_var, &nbr, &layer)?.output;
        if stage == config.stages() {
            break;
        }

        let m = downsampled(n, config.ratio);
        let mut groups = Vec::with_capacity(batch);
        for (b, cloud) in clouds.iter_mut().enumerate() {
            let plan = plan_transition_down(cloud, m, k, start.pick(cloud, b, stage))?;
            *cloud = plan.centers.iter().map(|&i| cloud[i]).collect();
            groups.push(plan.groups);
        }
        let groups = NeighborIndex::concat(&groups, &offsets(n))?;
        let lift = Linear::from_params(params, &format!("down{stage}"))?;
        x = transition_down(tape, x, &groups, &lift)?;
        let flat: Vec<Point<T>> = clouds.concat();
        pos_var = tape.constant(positions_tensor(&flat));
        n = m;
    }

    let c = tape.shape(x)[1];
    let per_cloud = tape.reshape(x, vec![batch, n, c])?;
    let pooled = tape.mean(per_cloud, 1)?;
    let head = [Linear::from_params(params, "head.0")?, Linear::from_params(params, "head.1")?];
    Ok(two_layer(tape, &head[0], &head[1], pooled)?)
}

/// Logits of either model kind.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    params: &ParamVars<'_, T>,
    positions: &[Point<T>],
    batch: usize,
    start: StartPolicy,
) -> Result<Var, ModelError> {
    match config.kind {
        ModelKind::Transformer => forward_classifier(tape, config, params, positions, batch, start),
        ModelKind::Mlp => mlp_baseline_forward(tape, config, params, positions, batch),
    }
}

/// Checks that `params` holds exactly the tensors `config` needs, with the
/// right shapes.
pub fn check_layout<T: Scalar>(config: &ModelConfig, params: &ParamStore<T>) -> Result<(), ModelError> {
    let layout = param_layout(config);
    let missing: Vec<String> = layout
        .iter()
        .filter(|(name, _)| params.get(name).is_none())
        .map(|(name, _)| name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingTensors(missing));
    }
    for (name, shape) in &layout {
        let found = params.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
        if &found != shape {
            return Err(ModelError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found,
            });
        }
    }
    let extra: Vec<String> = params
        .names()
        .iter()
        .filter(|n| !layout.iter().any(|(name, _)| name == *n))
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(ModelError::UnexpectedTensors(extra));
    }
    Ok(())
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        check_layout(&config, &params)?;
        Ok(Self { config, params })
    }

    /// Records the forward pass on `tape` with `vars` bound to this
    /// model's parameters.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &ParamVars<'_, T>,
        positions: &[Point<T>],
        batch: usize,
        start: StartPolicy,
    ) -> Result<Var, ModelError> {
        forward(tape, &self.config, vars, positions, batch, start)
    }

    /// Inference logits, `batch × num_classes`.
    pub fn logits(&self, positions: &[Point<T>], batch: usize, start: StartPolicy) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, |_| false);
        let out = self.forward(&mut tape, &vars, positions, batch, start)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax class per cloud; ties go to the lower class index.
    pub fn predict(&self, positions: &[Point<T>], batch: usize, start: StartPolicy) -> Result<Vec<usize>, ModelError> {
        Ok(argmax_rows(&self.logits(positions, batch, start)?))
    }

    /// Replaces the head with fresh weights for `num_classes` classes.
    /// Every other tensor is left untouched.
    pub fn reinit_head(&mut self, num_classes: usize, seed: u64) -> Result<(), ModelError> {
        let mut config = self.config.clone();
        config.num_classes = num_classes;
        config.validate()?;
        for (name, shape) in param_layout(&config).into_iter().filter(|(n, _)| is_head(n)) {
            let t = init_tensor(&name, &shape, seed);
            self.params.insert(name, t);
        }
        self.config = config;
        Ok(())
    }
}

/// Index of the largest entry in each row of a `B × K` tensor.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
