use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetError};
use crate::geometry::Point;
use crate::scalar::Scalar;
use crate::seed::{mix_seed, rng_for};

pub const DEFAULT_POINTS_PER_CLOUD: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// every cloud is resampled to exactly this many points
    pub points_per_cloud: usize,
    pub shuffle: bool,
}

impl BatchSpec {
    pub fn new(batch_size: usize, points_per_cloud: usize, shuffle_seed: u64) -> Self {
        Self {
            batch_size,
            shuffle_seed,
            points_per_cloud,
            shuffle: true,
        }
    }

    /// Fixed item order, for evaluation.
    pub fn ordered(mut self) -> Self {
        self.shuffle = false;
        self
    }
}

/// `B` clouds of `P` points each, stored cloud-major (`B·P` positions).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub positions: Vec<Point<T>>,
    pub labels: Vec<usize>,
    /// dataset index of each cloud
    pub items: Vec<usize>,
    pub points_per_cloud: usize,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cloud(&self, b: usize) -> &[Point<T>] {
        let p = self.points_per_cloud;
        &self.positions[b * p..(b + 1) * p]
    }
}

/// Exactly `p` points from `points`: a subsample without replacement when
/// the cloud is larger (original order kept), draws with replacement when
/// it is smaller.
pub fn resample_cloud<T: Scalar>(points: &[Point<T>], p: usize, rng: &mut ChaCha8Rng) -> Vec<Point<T>> {
    let n = points.len();
    if n == p {
        points.to_vec()
    } else if n > p {
        let mut picks = index::sample(rng, n, p).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| points[i]).collect()
    } else {
        (0..p).map(|_| points[rng.random_range(0..n)]).collect()
    }
}

/// Splits one epoch of `dataset` into batches. Shuffling and resampling
/// draw from a stream keyed by `(shuffle_seed, epoch)`; the final short
/// batch is kept.
pub fn make_batches<T: Scalar>(
    dataset: &Dataset<T>,
    spec: &BatchSpec,
    epoch: usize,
) -> Result<Vec<Batch<T>>, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    if spec.batch_size == 0 || spec.points_per_cloud == 0 {
        return Err(DatasetError::InvalidSpec(
            "batch size and points per cloud must be at least 1".into(),
        ));
    }
    let mut rng = rng_for(mix_seed(spec.shuffle_seed, epoch as u64));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if spec.shuffle {
        order.shuffle(&mut rng);
    }
    let p = spec.points_per_cloud;
    Ok(order
        .chunks(spec.batch_size)
        .map(|chunk| {
            let mut positions = Vec::with_capacity(chunk.len() * p);
            for &i in chunk {
                positions.extend(resample_cloud(&dataset.items[i].positions, p, &mut rng));
            }
            Batch {
                positions,
                labels: chunk.iter().map(|&i| dataset.items[i].label).collect(),
                items: chunk.to_vec(),
                points_per_cloud: p,
            }
        })
        .collect())
}
