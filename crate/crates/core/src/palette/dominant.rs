//! Dominant colors by weighted k-means over the distinct pixel colors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantColorSet {
    /// Unit-range RGB centroids, heaviest first.
    pub colors: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// The `k` asked for; `colors.len()` is smaller when the image has fewer
    /// distinct colors.
    pub requested_k: usize,
}

impl DominantColorSet {
    pub fn k(&self) -> usize {
        self.colors.len()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
}

fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Distinct colors in ascending RGB order with their pixel counts; the
/// result does not depend on pixel order.
fn distinct_colors(image: &Raster) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut counts: BTreeMap<[u32; 3], usize> = BTreeMap::new();
    for px in image.data().chunks_exact(3) {
        // Order-preserving key for finite floats in [-1, 1].
        let key = [0, 1, 2].map(|c| (px[c] + 2.0).to_bits());
        *counts.entry(key).or_default() += 1;
    }
    let mut colors = Vec::with_capacity(counts.len());
    let mut weights = Vec::with_capacity(counts.len());
    for (key, n) in counts {
        colors.push(key.map(|b| (f64::from(f32::from_bits(b) - 2.0) + 1.0) / 2.0));
        weights.push(n as f64);
    }
    (colors, weights)
}

pub fn dominant_colors(image: &Raster, k: usize, seed: u64) -> Result<DominantColorSet> {
    if k == 0 {
        return Err(Error::Descriptor("k must be at least 1".into()));
    }
    if image.data().is_empty() {
        return Err(Error::Descriptor("empty image".into()));
    }
    let (points, counts) = distinct_colors(image);
    let k_eff = k.min(points.len());
    let total: f64 = counts.iter().sum();

    // First center: a pixel drawn uniformly by the seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = rng.random_range(0.0..total);
    let mut first = points.len() - 1;
    for (i, &c) in counts.iter().enumerate() {
        if pick < c {
            first = i;
            break;
        }
        pick -= c;
    }
    let mut centers = vec![points[first]];
    let mut closest: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < k_eff {
        let mut far = 0;
        for i in 1..points.len() {
            if closest[i] > closest[far] {
                far = i;
            }
        }
        centers.push(points[far]);
        for (i, p) in points.iter().enumerate() {
            closest[i] = closest[i].min(dist2(p, &points[far]));
        }
    }

    let mut assign = vec![0; points.len()];
    for _ in 0..MAX_ITERATIONS {
        for (i, p) in points.iter().enumerate() {
            assign[i] = nearest(p, &centers);
        }
        let mut sums = vec![[0.0; 3]; k_eff];
        let mut mass = vec![0.0; k_eff];
        for (i, p) in points.iter().enumerate() {
            for c in 0..3 {
                sums[assign[i]][c] += counts[i] * p[c];
            }
            mass[assign[i]] += counts[i];
        }
        let mut moved: f64 = 0.0;
        for j in 0..k_eff {
            if mass[j] > 0.0 {
                let next = sums[j].map(|s| s / mass[j]);
                moved = moved.max(dist2(&next, &centers[j]).sqrt());
                centers[j] = next;
            }
        }
        if moved < TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assign[i] = nearest(p, &centers);
    }
    let mut mass = vec![0.0; k_eff];
    for (i, &a) in assign.iter().enumerate() {
        mass[a] += counts[i];
    }
    let mut order: Vec<usize> = (0..k_eff).collect();
    order.sort_by(|&a, &b| {
        mass[b].total_cmp(&mass[a]).then_with(|| {
            centers[a]
                .partial_cmp(&centers[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(DominantColorSet {
        colors: order.iter().map(|&j| centers[j]).collect(),
        weights: order.iter().map(|&j| mass[j] / total).collect(),
        requested_k: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_red() {
        let img = Raster::filled(8, 8, [1.0, -1.0, -1.0]);
        let d = dominant_colors(&img, 1, 0).unwrap();
        assert_eq!(d.colors, vec![[1.0, 0.0, 0.0]]);
        assert_eq!(d.weights, vec![1.0]);
    }

    #[test]
    fn black_and_white_halves() {
        let img = Raster::from_fn(8, 8, |_, x| if x < 4 { [-1.0; 3] } else { [1.0; 3] });
        let d = dominant_colors(&img, 2, 3).unwrap();
        assert_eq!(d.colors, vec![[0.0; 3], [1.0; 3]]);
        assert_eq!(d.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn k_reduced_to_distinct_count() {
        let img = Raster::from_fn(4, 4, |y, _| {
            if y < 1 {
                [0.5, 0.0, 0.0]
            } else {
                [-0.5, 0.0, 1.0]
            }
        });
        let d = dominant_colors(&img, 5, 0).unwrap();
        assert_eq!(d.k(), 2);
        assert_eq!(d.requested_k, 5);
        assert_eq!(d.weights, vec![0.75, 0.25]);
        assert!(dominant_colors(&img, 0, 0).is_err());
    }
}
