//! Independent reference implementations shared by the integration tests.
//! Plain loops over `f64`, no tape.
#![allow(dead_code)]

use pointxfer::geometry::{NeighborIndex, Point};
use pointxfer::model::{attention_layout, AttentionKind, ParamStore};
use pointxfer::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point<f64>> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::new(vec![rows.len(), cols], rows.concat()).unwrap()
}

pub fn points_tensor(points: &[Point<f64>]) -> Tensor<f64> {
    Tensor::new(vec![points.len(), 3], points.concat()).unwrap()
}

/// Uniform weights scaled by `1/sqrt(fan_in)` and nonzero biases, so every
/// parameter influences the output.
pub fn random_layer(c: usize, attention: AttentionKind, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (name, shape) in attention_layout("layer", c, attention) {
        let scale = 1.0 / (shape[0] as f64).sqrt();
        let t = Tensor::from_fn(shape.clone(), |_| scale * rng.random_range(-1.0..1.0));
        store.insert(name, t);
    }
    store
}

fn linear(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("layer.{name}.weight")).unwrap();
    let b = store.get(&format!("layer.{name}.bias")).unwrap();
    let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), fan_in);
    (0..fan_out)
        .map(|o| b.data()[o] + (0..fan_in).map(|i| x[i] * w.data()[i * fan_out + o]).sum::<f64>())
        .collect()
}

fn mlp2(store: &ParamStore<f64>, first: &str, second: &str, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(store, first, x).into_iter().map(|v| v.max(0.0)).collect();
    linear(store, second, &h)
}

/// Layer output `[i][c]` and weights `[i][j][a]` computed point by point.
pub fn naive_layer(
    store: &ParamStore<f64>,
    features: &[Vec<f64>],
    points: &[Point<f64>],
    nbr: &NeighborIndex,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let c = features[0].len();
    let mut outputs = Vec::new();
    let mut all_weights = Vec::new();
    for i in 0..features.len() {
        let q = linear(store, "phi", &features[i]);
        let mut logits = Vec::new();
        let mut values = Vec::new();
        for &j in nbr.row(i) {
            let rel: Vec<f64> = (0..3).map(|a| points[i][a] - points[j][a]).collect();
            let delta = mlp2(store, "pos.0", "pos.1", &rel);
            let key = linear(store, "psi", &features[j]);
            let arg: Vec<f64> = (0..c).map(|ch| q[ch] - key[ch] + delta[ch]).collect();
            logits.push(mlp2(store, "attn.0", "attn.1", &arg));
            let v = linear(store, "alpha", &features[j]);
            values.push((0..c).map(|ch| v[ch] + delta[ch]).collect::<Vec<f64>>());
        }
        let width = logits[0].len();
        let mut weights = vec![vec![0.0; width]; logits.len()];
        for a in 0..width {
            let top = logits.iter().map(|l| l[a]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l[a] - top).exp()).sum();
            for (j, l) in logits.iter().enumerate() {
                weights[j][a] = (l[a] - top).exp() / z;
            }
        }
        let y: Vec<f64> = (0..c)
            .map(|ch| {
                let a = if width == 1 { 0 } else { ch };
                features[i][ch] + (0..values.len()).map(|j| weights[j][a] * values[j][ch]).sum::<f64>()
            })
            .collect();
        outputs.push(y);
        all_weights.push(weights);
    }
    (outputs, all_weights)
}

fn dist2(a: Point<f64>, b: Point<f64>) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Farthest point sampling by recomputing every min-distance from scratch.
/// Ties go to the lowest index.
pub fn fps_oracle(points: &[Point<f64>], m: usize, start: usize) -> Vec<usize> {
    let mut picked = vec![start];
    while picked.len() < m {
        let score = |i: usize| picked.iter().map(|&s| dist2(points[i], points[s])).fold(f64::INFINITY, f64::min);
        let mut best = None;
        for i in (0..points.len()).filter(|i| !picked.contains(i)) {
            if best.is_none_or(|b| score(i) > score(b)) {
                best = Some(i);
            }
        }
        picked.push(best.unwrap());
    }
    picked
}

/// k nearest by a full sort on (distance, not-self, index).
pub fn knn_oracle(points: &[Point<f64>], query: Point<f64>, own: Option<usize>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        dist2(query, points[a])
            .total_cmp(&dist2(query, points[b]))
            .then((Some(a) != own).cmp(&(Some(b) != own)))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}
