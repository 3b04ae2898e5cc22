//! The 64-cell HSV quantizer: 16 hue sectors x 2 saturation x 2 value levels.

use crate::color::rgb_to_hsv;
use crate::raster::Raster;

pub const BINS: usize = 64;
const HUE_SECTORS: usize = 16;

/// Cell of a unit-range RGB color: `hue * 4 + saturation * 2 + value`.
pub fn quantize_rgb(rgb: [f64; 3]) -> usize {
    let [h, s, v] = rgb_to_hsv(rgb);
    let hue = ((h / 360.0 * HUE_SECTORS as f64) as usize).min(HUE_SECTORS - 1);
    hue * 4 + usize::from(s >= 0.5) * 2 + usize::from(v >= 0.5)
}

/// Row-major cell indices of every pixel.
pub fn quantize_image(image: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.height() * image.width());
    for y in 0..image.height() {
        for x in 0..image.width() {
            out.push(quantize_rgb(image.unit_rgb(y, x)) as u8);
        }
    }
    out
}

/// Normalized histogram of pixel cells.
pub fn color_histogram(image: &Raster) -> [f64; BINS] {
    let mut h = [0.0; BINS];
    let cells = quantize_image(image);
    for &c in &cells {
        h[c as usize] += 1.0;
    }
    let n = cells.len().max(1) as f64;
    h.map(|v| v / n)
}

/// Symmetric chi-square distance `sum (p - q)^2 / (p + q)` over nonempty cells.
pub fn chi_square(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, b)| **a + **b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells() {
        assert_eq!(quantize_rgb([1.0, 0.0, 0.0]), 3);
        assert_eq!(quantize_rgb([0.0, 0.0, 0.0]), 0);
        assert_eq!(quantize_rgb([1.0, 1.0, 1.0]), 1);
        assert_eq!(quantize_rgb([0.0, 0.0, 1.0]), 10 * 4 + 3);
        assert_eq!(quantize_rgb([0.0, 0.4, 0.0]), 5 * 4 + 2);
        assert!(quantize_rgb([1.0, 0.0, 0.01]) < BINS);
    }

    #[test]
    fn histogram_sums_to_one() {
        let img = Raster::from_fn(5, 7, |y, x| [y as f32 / 5.0, -(x as f32) / 7.0, 0.2]);
        let h = color_histogram(&img);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_basics() {
        assert_eq!(chi_square(&[0.5, 0.5, 0.0], &[0.5, 0.5, 0.0]), 0.0);
        assert!((chi_square(&[1.0, 0.0], &[0.0, 1.0]) - 2.0).abs() < 1e-12);
    }
}
