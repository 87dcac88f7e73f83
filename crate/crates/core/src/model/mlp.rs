//! Dense baseline over pooled per-cloud statistics.

use super::config::ModelConfig;
use super::layers::{two_layer, Linear};
use super::params::ParamVars;
use super::ModelError;
use crate::geometry::Point;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const HISTOGRAM_BINS: usize = 16;
/// centroid (3) + per-axis variance (3) + radial histogram
pub const EMBEDDING_DIM: usize = 6 + HISTOGRAM_BINS;

/// Order-independent summary of a cloud: centroid, per-axis variance
/// about the centroid, and the fraction of points in each of 16 equal
/// radial shells over [0, 1] (distances past 1 land in the last shell).
pub fn cloud_embedding<T: Scalar>(points: &[Point<T>]) -> [T; EMBEDDING_DIM] {
    let mut out = [T::zero(); EMBEDDING_DIM];
    let n = T::lit(points.len() as f64);
    let mut c = [T::zero(); 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for a in 0..3 {
        c[a] /= n;
        out[a] = c[a];
    }
    let share = T::one() / n;
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for a in 0..3 {
            out[3 + a] += d[a] * d[a] * share;
        }
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().to_f64_lossless();
        let bin = ((r * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        out[6 + bin] += share;
    }
    out
}

/// Embedding → four relu dense layers → two-layer head → logits `B × K`.
pub fn mlp_baseline_forward<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    params: &ParamVars<'_, T>,
    positions: &[Point<T>],
    batch: usize,
) -> Result<Var, ModelError> {
    if batch == 0 || positions.len() % batch != 0 || positions.is_empty() {
        return Err(ModelError::InvalidInput(format!(
            "{} positions do not split into {batch} clouds",
            positions.len()
        )));
    }
    let p = positions.len() / batch;
    let mut feats = Vec::with_capacity(batch * EMBEDDING_DIM);
    for b in 0..batch {
        feats.extend(cloud_embedding(&positions[b * p..(b + 1) * p]));
    }
    let x = Tensor::new(vec![batch, EMBEDDING_DIM], feats).map_err(ModelError::from)?;
    let mut h = tape.constant(x);
    for i in 0..4 {
        let layer = Linear::from_params(params, &format!("mlp.{i}"))?;
        h = layer.apply(tape, h)?;
        h = tape.relu(h);
    }
    let head = [Linear::from_params(params, "head.0")?, Linear::from_params(params, "head.1")?];
    let logits = two_layer(tape, &head[0], &head[1], h)?;
    debug_assert_eq!(tape.shape(logits), &[batch, config.num_classes]);
    Ok(logits)
}
