//! Procedural shape families used as a desk-scale stand-in for CAD data.
//!
//! Each family has a couple of seed-drawn shape parameters (heights, tube
//! radii, separations) so that clouds within a class are not identical.
//! Shapes are axis-aligned; no random rotation is applied.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DatasetError;
use crate::geometry::{normalize_cloud, Point, PointCloud};
use crate::scalar::Scalar;
use crate::seed::{mix_seed, rng_for};

pub const SYNTH_CLASSES: [&str; 10] = [
    "sphere",
    "cube",
    "cylinder",
    "torus",
    "cone",
    "plane",
    "helix",
    "cross",
    "two_spheres",
    "line",
];

pub const SYNTH_JITTER: f64 = 0.02;
pub const MIN_SYNTH_POINTS: usize = 8;

pub fn synth_class_id(name: &str) -> Option<usize> {
    let name = name.replace('-', "_");
    SYNTH_CLASSES.iter().position(|&c| c == name)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

fn surface_point(class_id: usize, rng: &mut ChaCha8Rng, params: &[f64; 2]) -> [f64; 3] {
    let angle = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 2.0 * PI;
    let sym = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 2.0 - 1.0;
    match class_id {
        1 => {
            let face = rng.random_range(0..6);
            let (a, b) = (sym(rng), sym(rng));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        2 => {
            let h = params[0];
            let t = angle(rng);
            [t.cos(), t.sin(), sym(rng) * h / 2.0]
        }
        3 => {
            // area-uniform by rejection on the outer/inner circumference ratio
            let tube = params[1];
            loop {
                let (t, p) = (angle(rng), angle(rng));
                let w = (1.0 + tube * p.cos()) / (1.0 + tube);
                if rng.random::<f64>() <= w {
                    let r = 1.0 + tube * p.cos();
                    break [r * t.cos(), r * t.sin(), tube * p.sin()];
                }
            }
        }
        4 => {
            let h = params[0];
            let s = rng.random::<f64>().sqrt();
            let t = angle(rng);
            [s * t.cos(), s * t.sin(), h / 2.0 - s * h]
        }
        5 => {
            let aspect = params[1];
            [sym(rng), sym(rng) * aspect, 0.0]
        }
        6 => {
            let turns = params[0];
            let u = rng.random::<f64>();
            let t = u * turns * 2.0 * PI;
            [t.cos(), t.sin(), 2.0 * u - 1.0]
        }
        7 => {
            let (along, across) = (sym(rng), sym(rng) * 0.1);
            if rng.random::<bool>() {
                [along, across, 0.0]
            } else {
                [across, along, 0.0]
            }
        }
        8 => {
            let sep = params[1];
            let d = unit_vector(rng);
            let cx = if rng.random::<bool>() { sep } else { -sep };
            [cx + 0.35 * d[0], 0.35 * d[1], 0.35 * d[2]]
        }
        9 => [sym(rng), 0.0, 0.0],
        _ => unreachable!("class id validated by caller"),
    }
}

/// [`synth_generate_with`] at the standard jitter σ = 0.02.
pub fn synth_generate<T: Scalar>(
    class_id: usize,
    seed: u64,
    n_points: usize,
) -> Result<PointCloud<T>, DatasetError> {
    synth_generate_with(class_id, seed, n_points, SYNTH_JITTER)
}

/// One normalized cloud of `n_points` from family `class_id`, with
/// Gaussian jitter of standard deviation `jitter` before normalization.
/// Pure in `(class_id, seed, n_points, jitter)`.
pub fn synth_generate_with<T: Scalar>(
    class_id: usize,
    seed: u64,
    n_points: usize,
    jitter: f64,
) -> Result<PointCloud<T>, DatasetError> {
    if class_id >= SYNTH_CLASSES.len() {
        return Err(DatasetError::UnknownClass(class_id.to_string()));
    }
    if n_points < MIN_SYNTH_POINTS {
        return Err(DatasetError::InvalidSpec(format!(
            "synthetic clouds need at least {MIN_SYNTH_POINTS} points, got {n_points}"
        )));
    }
    let mut rng = rng_for(mix_seed(seed, class_id as u64));
    let params = [1.5 + rng.random::<f64>(), 0.25 + 0.15 * rng.random::<f64>()];
    let params = match class_id {
        5 => [params[0], 0.5 + 0.5 * rng.random::<f64>()],
        6 => [2.0 + rng.random::<f64>(), params[1]],
        8 => [params[0], 0.6 + 0.3 * rng.random::<f64>()],
        _ => params,
    };

    let mut raw: Vec<[f64; 3]> = Vec::with_capacity(n_points);
    if class_id == 0 {
        // antipodal pairs keep the centroid exactly at the sphere center
        while raw.len() + 1 < n_points {
            let d = unit_vector(&mut rng);
            raw.push(d);
            raw.push(d.map(|c| -c));
        }
        if raw.len() < n_points {
            raw.push(unit_vector(&mut rng));
        }
    } else {
        for _ in 0..n_points {
            raw.push(surface_point(class_id, &mut rng, &params));
        }
    }
    if jitter > 0.0 {
        for p in &mut raw {
            for c in p.iter_mut() {
                *c += jitter * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let pts: Vec<Point<T>> = raw.into_iter().map(|p| p.map(T::lit)).collect();
    Ok(PointCloud::new(normalize_cloud(&pts), class_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_sphere_has_equal_radii() {
        let c: PointCloud<f64> = synth_generate_with(0, 9, 64, 0.0).unwrap();
        for p in &c.positions {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        for class in 0..10 {
            let a: PointCloud<f64> = synth_generate(class, 5, 32).unwrap();
            let b: PointCloud<f64> = synth_generate(class, 5, 32).unwrap();
            let c: PointCloud<f64> = synth_generate(class, 6, 32).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert_eq!(a.label, class);
            assert_eq!(a.len(), 32);
        }
    }

    #[test]
    fn output_is_normalized() {
        for class in 0..10 {
            let c: PointCloud<f64> = synth_generate(class, 1, 100).unwrap();
            let mut centroid = [0.0; 3];
            for p in &c.positions {
                for a in 0..3 {
                    centroid[a] += p[a] / 100.0;
                }
                assert!(p.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-9);
            }
            assert!(centroid.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(synth_generate::<f64>(10, 0, 32), Err(DatasetError::UnknownClass(_))));
        assert!(matches!(synth_generate::<f64>(0, 0, 7), Err(DatasetError::InvalidSpec(_))));
    }

    #[test]
    fn class_names_resolve() {
        assert_eq!(synth_class_id("two-spheres"), Some(8));
        assert_eq!(synth_class_id("line"), Some(9));
        assert_eq!(synth_class_id("donut"), None);
    }
}
