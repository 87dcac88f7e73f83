//! The vector self-attention layer and the transition-down block.

use super::params::ParamVars;
use super::ModelError;
use crate::geometry::{
    canonical_start, farthest_point_sample, knn_centers, GeometryError, NeighborIndex, Point,
};
use crate::scalar::Scalar;
use crate::seed::{mix_seed, rng_for};
use crate::tensor::{Tape, TensorError, Var};

use rand::Rng;

/// Weight and bias of one affine map.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn from_params<T: Scalar>(p: &ParamVars<'_, T>, name: &str) -> Result<Self, ModelError> {
        Ok(Self {
            weight: p.get(&format!("{name}.weight"))?,
            bias: p.get(&format!("{name}.bias"))?,
        })
    }

    /// `x · W + b` over the last axis of a rank-2 or rank-3 input.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        let shape = tape.shape(x).to_vec();
        let out = tape.shape(self.weight).get(1).copied().unwrap_or(0);
        if shape.len() == 3 {
            let flat = tape.reshape(x, vec![shape[0] * shape[1], shape[2]])?;
            let y = tape.matmul(flat, self.weight)?;
            let y = tape.add_bias(y, self.bias)?;
            tape.reshape(y, vec![shape[0], shape[1], out])
        } else {
            let y = tape.matmul(x, self.weight)?;
            tape.add_bias(y, self.bias)
        }
    }
}

/// `second(relu(first(x)))`.
pub fn two_layer<T: Scalar>(tape: &mut Tape<T>, first: &Linear, second: &Linear, x: Var) -> Result<Var, TensorError> {
    let h = first.apply(tape, x)?;
    let h = tape.relu(h);
    second.apply(tape, h)
}

/// Tape handles of one attention layer.
///
/// `phi`, `psi` and `alpha` are pointwise linear maps of the features,
/// `pos` the two-layer relative-position encoder, and `attn` the two-layer
/// map from query/key difference to attention logits.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub phi: Linear,
    pub psi: Linear,
    pub alpha: Linear,
    pub pos: [Linear; 2],
    pub attn: [Linear; 2],
}

impl LayerVars {
    pub fn from_params<T: Scalar>(p: &ParamVars<'_, T>, prefix: &str) -> Result<Self, ModelError> {
        let l = |s: &str| Linear::from_params(p, &format!("{prefix}.{s}"));
        Ok(Self {
            phi: l("phi")?,
            psi: l("psi")?,
            alpha: l("alpha")?,
            pos: [l("pos.0")?, l("pos.1")?],
            attn: [l("attn.0")?, l("attn.1")?],
        })
    }
}

pub struct AttentionOutput {
    /// `N × C` layer output, residual included
    pub output: Var,
    /// `N × k × C` (vector) or `N × k × 1` (scalar) normalized weights
    pub weights: Var,
}

/// Point Transformer layer over precomputed neighborhoods.
///
/// For each point `i` and neighbor `j`:
///
/// ```text
/// δ_ij = pos(p_i − p_j)
/// w_ij = softmax_j( attn(φ(x_i) − ψ(x_j) + δ_ij) )
/// y_i  = x_i + Σ_j w_ij ⊙ (α(x_j) + δ_ij)
/// ```
///
/// With vector attention the softmax runs per channel; with scalar
/// attention `attn` emits one logit and the weight is shared by all
/// channels.
pub fn point_transformer_layer<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    positions: Var,
    nbr: &NeighborIndex,
    layer: &LayerVars,
) -> Result<AttentionOutput, ModelError> {
    let fs = tape.shape(features).to_vec();
    let ps = tape.shape(positions).to_vec();
    if fs.len() != 2 || ps.len() != 2 || ps[1] != 3 || fs[0] != ps[0] || nbr.rows() != fs[0] {
        return Err(TensorError::ShapeMismatch {
            op: "point_transformer_layer",
            lhs: fs,
            rhs: vec![ps.first().copied().unwrap_or(0), nbr.rows(), nbr.k()],
        }
        .into());
    }
    let n = fs[0];
    let centers = NeighborIndex::repeat_self(n, nbr.k());

    let p_i = tape.gather_rows(positions, &centers)?;
    let p_j = tape.gather_rows(positions, nbr)?;
    let rel = tape.sub(p_i, p_j)?;
    let delta = two_layer(tape, &layer.pos[0], &layer.pos[1], rel)?;

    let query = layer.phi.apply(tape, features)?;
    let key = layer.psi.apply(tape, features)?;
    let value = layer.alpha.apply(tape, features)?;

    let q_i = tape.gather_rows(query, &centers)?;
    let k_j = tape.gather_rows(key, nbr)?;
    let qk = tape.sub(q_i, k_j)?;
    let qk = tape.add(qk, delta)?;
    let logits = two_layer(tape, &layer.attn[0], &layer.attn[1], qk)?;
    let weights = tape.softmax(logits, 1)?;

    let v_j = tape.gather_rows(value, nbr)?;
    let v_j = tape.add(v_j, delta)?;
    let weighted = tape.mul(v_j, weights)?;
    let y = tape.sum(weighted, 1)?;
    let output = tape.add(y, features)?;
    debug_assert_eq!(tape.shape(output), &[n, fs[1]]);
    Ok(AttentionOutput { output, weights })
}

/// Where farthest point sampling starts in each cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// index 0
    First,
    /// the lexicographically smallest point; makes inference independent
    /// of input order
    Canonical,
    /// a uniformly random index, keyed by this seed, the cloud and the stage
    Seeded(u64),
}

impl StartPolicy {
    pub fn pick<T: Scalar>(self, points: &[Point<T>], cloud: usize, stage: usize) -> usize {
        match self {
            StartPolicy::First => 0,
            StartPolicy::Canonical => canonical_start(points),
            StartPolicy::Seeded(seed) => {
                let tag = (cloud as u64) << 8 | stage as u64;
                rng_for(mix_seed(seed, tag)).random_range(0..points.len())
            }
        }
    }
}

/// Centers and neighborhoods of one transition-down block on one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DownPlan {
    pub centers: Vec<usize>,
    pub groups: NeighborIndex,
}

/// Picks `m` centers by farthest point sampling from `start` and groups
/// each center with its `k` nearest points of the cloud.
pub fn plan_transition_down<T: Scalar>(
    points: &[Point<T>],
    m: usize,
    k: usize,
    start: usize,
) -> Result<DownPlan, GeometryError> {
    let centers = farthest_point_sample(points, m, start)?;
    let groups = knn_centers(points, &centers, k)?;
    Ok(DownPlan { centers, groups })
}

/// Lifts every point with `relu(x · W + b)` and max-pools each group
/// channelwise. Returns `M × C_out` for `M` groups.
pub fn transition_down<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    groups: &NeighborIndex,
    lift: &Linear,
) -> Result<Var, ModelError> {
    let lifted = lift.apply(tape, features)?;
    let lifted = tape.relu(lifted);
    let grouped = tape.gather_rows(lifted, groups)?;
    Ok(tape.max(grouped, 1)?)
}
