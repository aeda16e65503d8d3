//! Lloyd's k-means with greedy distance-weighted seeding.

use log::warn;
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, BoltError, Result};
use crate::model::Codebook;

pub const DEFAULT_ITERS: usize = 16;

/// Output of a k-means run, with the per-iteration objective.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub assignments: Vec<u32>,
    /// Sum of squared distances to the nearest centroid, recorded after
    /// seeding and after every Lloyd update.
    pub inertia: Vec<f64>,
    /// Set when seeding had to place more than one centroid on the same point.
    pub has_duplicates: bool,
}

impl KMeansFit {
    pub fn final_inertia(&self) -> f64 {
        *self.inertia.last().unwrap_or(&0.0)
    }
}

#[inline(always)]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest centroid by squared distance; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(centroids: &[f32], dim: usize, point: &[f32]) -> (usize, f32) {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, point);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

pub fn kmeans(points: ArrayView2<'_, f32>, k: usize, iters: usize, seed: u64) -> Result<Codebook> {
    kmeans_fit(points, k, iters, seed).map(|f| f.codebook)
}

pub fn kmeans_fit(
    points: ArrayView2<'_, f32>,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<KMeansFit> {
    let n = points.nrows();
    let dim = points.ncols();
    if n == 0 {
        return Err(BoltError::invalid("k-means needs at least one point"));
    }
    if k == 0 {
        return Err(BoltError::invalid("k-means needs K >= 1"));
    }
    if dim == 0 {
        return Err(BoltError::invalid(
            "k-means points must have at least one dimension",
        ));
    }
    let owned;
    let data: &[f32] = match points.as_slice() {
        Some(s) => s,
        None => {
            owned = points.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    ensure_finite(data, "k-means input")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut centroids, has_duplicates) = seed_centroids(data, dim, k, &mut rng);
    if has_duplicates {
        warn!("k-means: fewer distinct points than K={k}; duplicate centroids were placed");
    }

    let mut assignments = vec![0u32; n];
    let mut dists = vec![0f32; n];
    let mut inertia = vec![assign(data, dim, &centroids, &mut assignments, &mut dists)];

    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..iters {
        sums.fill(0.0);
        counts.fill(0);
        for (p, &a) in data.chunks_exact(dim).zip(&assignments) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..])
                {
                    *dst = (s * inv) as f32;
                }
            }
        }
        // Empty clusters take the point currently farthest from its centroid.
        for c in 0..k {
            if counts[c] != 0 {
                continue;
            }
            let (far, far_d) =
                dists
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f32::NEG_INFINITY),
                        |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc },
                    );
            if far_d <= 0.0 {
                break;
            }
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
            dists[far] = 0.0;
            counts[c] = 1;
        }

        let before = assignments.clone();
        inertia.push(assign(data, dim, &centroids, &mut assignments, &mut dists));
        if before == assignments {
            break;
        }
    }

    Ok(KMeansFit {
        codebook: Codebook::new(k, dim, centroids)?,
        assignments,
        inertia,
        has_duplicates,
    })
}

fn assign(data: &[f32], dim: usize, centroids: &[f32], out: &mut [u32], dists: &mut [f32]) -> f64 {
    let mut total = 0f64;
    for ((p, a), d) in data
        .chunks_exact(dim)
        .zip(out.iter_mut())
        .zip(dists.iter_mut())
    {
        let (best, best_d) = nearest(centroids, dim, p);
        *a = best as u32;
        *d = best_d;
        total += best_d as f64;
    }
    total
}

/// Greedy k-means++: each new centroid is the best of a few D^2-weighted
/// candidates by resulting potential.
fn seed_centroids(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, bool) {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln().floor() as usize;

    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(point(i), point(first)) as f64)
        .collect();
    let mut duplicates = false;

    let mut cumulative = vec![0f64; n];
    let mut scratch = vec![0f64; n];
    let mut best_closest = vec![0f64; n];
    for _ in 1..k {
        let mut acc = 0.0;
        for (c, &d) in cumulative.iter_mut().zip(&closest) {
            acc += d;
            *c = acc;
        }
        let total = acc;
        if total <= 0.0 {
            duplicates = true;
            let idx = rng.random_range(0..n);
            centroids.extend_from_slice(point(idx));
            continue;
        }

        let mut best_idx = 0;
        let mut best_pot = f64::INFINITY;
        for _ in 0..trials {
            let target = rng.random::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c <= target).min(n - 1);
            let cand = point(idx);
            let mut pot = 0.0;
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = closest[i].min(sq_dist(point(i), cand) as f64);
                pot += *s;
            }
            if pot < best_pot {
                best_pot = pot;
                best_idx = idx;
                best_closest.copy_from_slice(&scratch);
            }
        }
        centroids.extend_from_slice(point(best_idx));
        std::mem::swap(&mut closest, &mut best_closest);
    }
    (centroids, duplicates)
}
