//! Point-set kernels: farthest point sampling, k-nearest neighbors,
//! normalization and mesh surface sampling.
//!
//! Everything here is a pure function of its inputs (and seed). Distance
//! ties are always broken toward the lower point index.

use std::cmp::Ordering;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Point<T> = [T; 3];

/// Attention neighborhood size used when a config does not override it.
pub const DEFAULT_K: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("cannot pick {requested} points from a cloud of {available}")]
    TooManySamples { requested: usize, available: usize },
    #[error("start index {start} out of range for {n} points")]
    StartOutOfRange { start: usize, n: usize },
    #[error("k = {k} exceeds the {n} reference points")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty point set")]
    Empty,
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("face {face} references vertex {index} but the mesh has {vertices} vertices")]
    FaceIndex {
        face: usize,
        index: usize,
        vertices: usize,
    },
    #[error("neighbor table {rows}x{k} needs {expected} entries, got {actual}")]
    IndexShape {
        rows: usize,
        k: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
}

/// `rows × k` table of neighbor indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    rows: usize,
    k: usize,
    indices: Vec<usize>,
}

impl NeighborIndex {
    pub fn new(rows: usize, k: usize, indices: Vec<usize>) -> Result<Self, GeometryError> {
        if indices.len() != rows * k || k == 0 {
            return Err(GeometryError::IndexShape {
                rows,
                k,
                expected: rows * k,
                actual: indices.len(),
            });
        }
        Ok(Self { rows, k, indices })
    }

    /// Row `i` is `[i; k]`: every point paired with itself.
    pub fn repeat_self(rows: usize, k: usize) -> Self {
        let indices = (0..rows).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        Self { rows, k, indices }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Stacks tables whose reference sets are laid end to end: the entries
    /// of `parts[b]` are shifted by `offsets[b]`.
    pub fn concat(parts: &[NeighborIndex], offsets: &[usize]) -> Result<Self, GeometryError> {
        let k = parts.first().map_or(0, |p| p.k);
        let mut indices = Vec::new();
        let mut rows = 0;
        for (p, &off) in parts.iter().zip(offsets) {
            if p.k != k {
                return Err(GeometryError::IndexShape {
                    rows: p.rows,
                    k,
                    expected: p.rows * k,
                    actual: p.indices.len(),
                });
            }
            indices.extend(p.indices.iter().map(|&i| i + off));
            rows += p.rows;
        }
        Self::new(rows, k, indices)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub positions: Vec<Point<T>>,
    /// optional `N × C` per-point features
    pub features: Option<Tensor<T>>,
    pub label: usize,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(positions: Vec<Point<T>>, label: usize) -> Self {
        Self {
            positions,
            features: None,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.positions.is_empty() {
            return Err(GeometryError::Empty);
        }
        match self.positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            Some(i) => Err(GeometryError::NonFinite(i)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T> {
    pub vertices: Vec<Point<T>>,
    pub faces: Vec<[usize; 3]>,
}

impl<T: Scalar> TriMesh<T> {
    pub fn new(vertices: Vec<Point<T>>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(GeometryError::FaceIndex {
                    face: f,
                    index,
                    vertices: vertices.len(),
                });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, f: usize) -> T {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = sub(b, a);
        let v = sub(c, a);
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        T::lit(0.5) * dot(n, n).sqrt()
    }

    pub fn surface_area(&self) -> T {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

#[inline]
fn sub<T: Scalar>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot<T: Scalar>(a: Point<T>, b: Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn squared_distance<T: Scalar>(a: Point<T>, b: Point<T>) -> T {
    let d = sub(a, b);
    dot(d, d)
}

/// Greedy max-min subsampling. `indices[0] == start`; each later pick
/// maximizes its distance to the nearest already-picked point.
pub fn farthest_point_sample<T: Scalar>(
    points: &[Point<T>],
    m: usize,
    start: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if m > n {
        return Err(GeometryError::TooManySamples {
            requested: m,
            available: n,
        });
    }
    if start >= n {
        return Err(GeometryError::StartOutOfRange { start, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut nearest = vec![T::infinity(); n];
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = start;
    picked[start] = true;
    out.push(start);
    while out.len() < m {
        let anchor = points[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            let d = squared_distance(points[i], anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        current = best.expect("m <= n leaves an unpicked point");
        picked[current] = true;
        out.push(current);
    }
    Ok(out)
}

/// Index of the lexicographically smallest point, lowest index on ties.
pub fn canonical_start<T: Scalar>(points: &[Point<T>]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let q = &points[best];
        let less = p
            .iter()
            .zip(q)
            .map(|(a, b)| a.partial_cmp(b).unwrap_or(Ordering::Equal))
            .find(|o| *o != Ordering::Equal)
            == Some(Ordering::Less);
        if less {
            best = i;
        }
    }
    best
}

fn knn_rows<T: Scalar>(
    reference: &[Point<T>],
    queries: impl ExactSizeIterator<Item = (Point<T>, Option<usize>)>,
    k: usize,
) -> Result<NeighborIndex, GeometryError> {
    let n = reference.len();
    if k == 0 {
        return Err(GeometryError::ZeroK);
    }
    if k > n {
        return Err(GeometryError::KTooLarge { k, n });
    }
    let rows = queries.len();
    let mut indices = Vec::with_capacity(rows * k);
    let mut scratch: Vec<(T, bool, usize)> = Vec::with_capacity(n);
    for (q, own) in queries {
        scratch.clear();
        scratch.extend(
            reference
                .iter()
                .enumerate()
                .map(|(j, &p)| (squared_distance(q, p), own != Some(j), j)),
        );
        let cmp = |a: &(T, bool, usize), b: &(T, bool, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        };
        if k < n {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(cmp);
        indices.extend(head.iter().map(|e| e.2));
    }
    NeighborIndex::new(rows, k, indices)
}

/// Euclidean k-nearest neighbors of each query among `reference`, each row
/// sorted by (distance, index).
pub fn knn<T: Scalar>(
    reference: &[Point<T>],
    queries: &[Point<T>],
    k: usize,
) -> Result<NeighborIndex, GeometryError> {
    knn_rows(reference, queries.iter().map(|&q| (q, None)), k)
}

/// kNN with the query set equal to the reference set. A point always
/// appears in its own row: among zero-distance duplicates it ranks first.
pub fn knn_self<T: Scalar>(points: &[Point<T>], k: usize) -> Result<NeighborIndex, GeometryError> {
    knn_rows(points, points.iter().enumerate().map(|(i, &q)| (q, Some(i))), k)
}

/// kNN for queries that are members of `points`, given by index.
pub fn knn_centers<T: Scalar>(
    points: &[Point<T>],
    centers: &[usize],
    k: usize,
) -> Result<NeighborIndex, GeometryError> {
    if let Some(&bad) = centers.iter().find(|&&c| c >= points.len()) {
        return Err(GeometryError::StartOutOfRange {
            start: bad,
            n: points.len(),
        });
    }
    knn_rows(points, centers.iter().map(|&c| (points[c], Some(c))), k)
}

/// Centers the cloud on its centroid and scales it into the unit sphere.
/// An all-coincident cloud (radius below 1e-12) is only translated.
pub fn normalize_cloud<T: Scalar>(points: &[Point<T>]) -> Vec<Point<T>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut c = [T::zero(); 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let inv_n = T::lit(points.len() as f64);
    for v in &mut c {
        *v /= inv_n;
    }
    let centered: Vec<Point<T>> = points.iter().map(|&p| sub(p, c)).collect();
    let radius = centered
        .iter()
        .map(|&p| dot(p, p).sqrt())
        .fold(T::zero(), T::max);
    if radius < T::lit(1e-12) {
        return centered;
    }
    centered
        .into_iter()
        .map(|p| [p[0] / radius, p[1] / radius, p[2] / radius])
        .collect()
}

/// `n` points uniform over the surface: faces drawn in proportion to
/// area, then a uniform barycentric point (u, v folded when u + v > 1).
pub fn sample_mesh_surface<T: Scalar>(
    mesh: &TriMesh<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<Point<T>>, GeometryError> {
    let areas: Vec<f64> = (0..mesh.faces.len())
        .map(|f| mesh.face_area(f).to_f64_lossless())
        .collect();
    if !(areas.iter().sum::<f64>() > 0.0) {
        return Err(GeometryError::ZeroArea);
    }
    let picker = WeightedIndex::new(&areas).map_err(|_| GeometryError::ZeroArea)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let f = picker.sample(&mut rng);
        let mut u: f64 = rng.random();
        let mut v: f64 = rng.random();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        let (u, v) = (T::lit(u), T::lit(v));
        out.push([0, 1, 2].map(|ax| a[ax] + u * (b[ax] - a[ax]) + v * (c[ax] - a[ax])));
    }
    Ok(out)
}
