//! Gaussian class clusters with a controllable category and domain shift.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, streams, DataMeta, Dataset, DomainPair, SplitSpec};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Source → target domain shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Every vector is rotated by exactly this angle (radians) within
    /// random orthogonal planes.
    pub rotation_angle: f64,
    /// Length of the random translation, in units of the class radius.
    pub translation_scale: f64,
    /// Isotropic per-coordinate noise, shared by both domains.
    pub noise_std: f64,
}

impl ShiftSpec {
    pub fn none(noise_std: f64) -> Self {
        ShiftSpec {
            rotation_angle: 0.0,
            translation_scale: 0.0,
            noise_std,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub split: SplitSpec,
    pub dim: usize,
    pub samples_per_class: usize,
    pub shift: ShiftSpec,
    /// Norm of each class mean before the separation guarantee is applied.
    pub class_radius: f64,
    pub seed: u64,
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n < 1e-12 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Gram–Schmidt on Gaussian draws: `count ≤ dim` orthonormal vectors.
fn orthonormal_frame<R: Rng + ?Sized>(rng: &mut R, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = normal_vec(rng, dim);
        for u in &frame {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, ui)| *x -= c * ui);
        }
        if normalize(&mut v) {
            frame.push(v);
        }
    }
    frame
}

/// Unit directions for `count` class means: an orthonormal frame when it
/// fits, otherwise random points on the sphere.
fn unit_means<R: Rng + ?Sized>(rng: &mut R, dim: usize, count: usize) -> Vec<Vec<f64>> {
    if count <= dim {
        return orthonormal_frame(rng, dim, count);
    }
    (0..count)
        .map(|_| loop {
            let mut v = normal_vec(rng, dim);
            if normalize(&mut v) {
                break v;
            }
        })
        .collect()
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Class means on the sphere of radius `class_radius`, enlarged if needed so
/// every pair sits at least `4·noise_std` apart.
fn place_means<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    count: usize,
    class_radius: f64,
    noise_std: f64,
) -> Vec<Vec<f64>> {
    let units = unit_means(rng, dim, count);
    let unit_sep = min_pairwise_distance(&units);
    let radius = if unit_sep.is_finite() && unit_sep > 0.0 {
        class_radius.max(4.0 * noise_std / unit_sep)
    } else {
        class_radius
    };
    units
        .iter()
        .map(|u| u.iter().map(|x| x * radius).collect())
        .collect()
}

/// Orthogonal map rotating each of `dim/2` random planes by exactly `angle`.
fn bounded_rotation<R: Rng + ?Sized>(rng: &mut R, dim: usize, angle: f64) -> Vec<Vec<f64>> {
    let basis = orthonormal_frame(rng, dim, dim);
    let (c, s) = (angle.cos(), angle.sin());
    // Q = Σ_planes (rotation in span{u, v}) + projection onto the leftover axis.
    let mut q = vec![vec![0.0; dim]; dim];
    let mut add_outer = |a: &[f64], b: &[f64], w: f64| {
        for i in 0..dim {
            for j in 0..dim {
                q[i][j] += w * a[i] * b[j];
            }
        }
    };
    for pair in basis.chunks(2) {
        if let [u, v] = pair {
            // u → c·u + s·v, v → −s·u + c·v
            add_outer(u, u, c);
            add_outer(v, u, s);
            add_outer(u, v, -s);
            add_outer(v, v, c);
        } else {
            add_outer(&pair[0], &pair[0], 1.0);
        }
    }
    q
}

fn apply(q: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    q.iter().map(|row| dot(row, x)).collect()
}

/// Generates a labeled source domain and a shifted, partially overlapping
/// target domain. The same seed always yields identical data.
pub fn gen_synthetic_pair(spec: &SyntheticSpec) -> Result<DomainPair> {
    let split = spec.split;
    split.validate()?;
    if spec.dim < 2 {
        return Err(Error::config("data.dim", "must be at least 2"));
    }
    if spec.samples_per_class < 4 {
        return Err(Error::config("data.samples_per_class", "must be at least 4"));
    }
    let sh = spec.shift;
    if !(sh.noise_std >= 0.0 && sh.noise_std.is_finite()) {
        return Err(Error::config("data.noise_std", "must be non-negative"));
    }
    if !(sh.translation_scale >= 0.0 && sh.translation_scale.is_finite()) {
        return Err(Error::config("data.translation_scale", "must be non-negative"));
    }
    if !sh.rotation_angle.is_finite() {
        return Err(Error::config("data.rotation_angle", "must be finite"));
    }
    if !(spec.class_radius > 0.0 && spec.class_radius.is_finite()) {
        return Err(Error::config("data.class_radius", "must be positive"));
    }

    let mut rng = stream_rng(spec.seed, streams::GENERATOR);
    let dim = spec.dim;
    let means = place_means(&mut rng, dim, split.num_total(), spec.class_radius, sh.noise_std);
    let radius = means.first().map(|m| dot(m, m).sqrt()).unwrap_or(spec.class_radius);

    let rotation = bounded_rotation(&mut rng, dim, sh.rotation_angle);
    let mut direction = normal_vec(&mut rng, dim);
    normalize(&mut direction);
    let translation: Vec<f64> = direction
        .iter()
        .map(|d| d * sh.translation_scale * radius)
        .collect();
    let target_means: Vec<Vec<f64>> = means
        .iter()
        .map(|m| {
            apply(&rotation, m)
                .iter()
                .zip(&translation)
                .map(|(a, t)| a + t)
                .collect()
        })
        .collect();

    let mut draw = |centers: &[Vec<f64>], classes: &[usize], prefix: &str| -> Result<Dataset> {
        let n = classes.len() * spec.samples_per_class;
        let mut ids = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for &c in classes {
            for _ in 0..spec.samples_per_class {
                ids.push(format!("{prefix}{}", ids.len()));
                labels.push(c as i64);
                for &m in &centers[c] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + sh.noise_std * z);
                }
            }
        }
        Dataset::new(ids, Tensor::new(vec![n, dim], data)?, labels)
    };

    let source_classes: Vec<usize> = split.source_classes().collect();
    let source = draw(&means, &source_classes, "s")?;
    let target = draw(&target_means, &split.target_classes(), "t")?;
    DomainPair::new(source, target, split, DataMeta::new(split, Some(*spec)))
}
