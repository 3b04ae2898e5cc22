//! Fusion of the descriptor families into one unit-norm style vector.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::palette::descriptors::{
    adjacent_color_pairs, color_layout_descriptor, color_structure_descriptor,
};
use crate::palette::dominant::dominant_colors;
use crate::raster::Raster;

/// Offsets of each descriptor family inside [`StyleVector::values`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLayout {
    pub dominant: Range<usize>,
    pub structure: Range<usize>,
    pub layout: Range<usize>,
    pub adjacency: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleVector {
    pub values: Vec<f64>,
    pub layout: StyleLayout,
}

impl StyleVector {
    pub fn distance(&self, other: &Self) -> f64 {
        euclidean(&self.values, &other.values)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Scale to unit Euclidean norm; the zero vector is left unchanged.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Dominant colors occupy `4k` slots: `k` RGB triples then `k` weights,
/// zero-padded when fewer than `k` distinct colors exist.
pub fn style_vector(image: &Raster, k: usize, seed: u64) -> Result<StyleVector> {
    let dominant = dominant_colors(image, k, seed)?;
    let mut dom = vec![0.0; 4 * k];
    for (i, c) in dominant.colors.iter().enumerate() {
        dom[3 * i..3 * i + 3].copy_from_slice(c);
    }
    for (i, &w) in dominant.weights.iter().enumerate() {
        dom[3 * k + i] = w;
    }
    let families = [
        dom,
        color_structure_descriptor(image)?.bins,
        color_layout_descriptor(image).flattened(),
        adjacent_color_pairs(image).upper_triangle(),
    ];
    let mut values = Vec::new();
    let mut ranges = Vec::with_capacity(4);
    for mut f in families {
        l2_normalize(&mut f);
        let start = values.len();
        values.extend(f);
        ranges.push(start..values.len());
    }
    l2_normalize(&mut values);
    let mut ranges = ranges.into_iter();
    let mut next = || ranges.next().expect("four families");
    Ok(StyleVector {
        values,
        layout: StyleLayout {
            dominant: next(),
            structure: next(),
            layout: next(),
            adjacency: next(),
        },
    })
}
