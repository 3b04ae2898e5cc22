//! Color structure, color layout and adjacent-pair descriptors.

use serde::{Deserialize, Serialize};

use crate::color::rgb_to_ycbcr;
use crate::error::{Error, Result};
use crate::palette::quantize::{quantize_image, BINS};
use crate::raster::Raster;
use crate::sasr::bicubic::resize;

pub const WINDOW: usize = 8;
/// Larger images are resized to this side before structure counting.
pub const CSD_MAX_SIDE: usize = 256;
/// Number of unordered cell pairs, diagonal included.
pub const PAIR_CELLS: usize = BINS * (BINS + 1) / 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsdHistogram {
    pub bins: Vec<f64>,
}

/// Fraction of 8x8 window positions (stride 1) in which each cell occurs.
pub fn color_structure_descriptor(image: &Raster) -> Result<CsdHistogram> {
    if image.height() < WINDOW || image.width() < WINDOW {
        return Err(Error::Descriptor(format!(
            "{}x{} image is smaller than the {WINDOW}x{WINDOW} structuring element",
            image.height(),
            image.width()
        )));
    }
    let resized;
    let image = if image.height() > CSD_MAX_SIDE || image.width() > CSD_MAX_SIDE {
        resized = resize(
            image,
            image.height().min(CSD_MAX_SIDE),
            image.width().min(CSD_MAX_SIDE),
        )?;
        &resized
    } else {
        image
    };
    let (h, w) = (image.height(), image.width());
    let cells = quantize_image(image);
    let mut presence = vec![0usize; BINS];
    let mut counts = [0u32; BINS];
    for top in 0..=h - WINDOW {
        counts.fill(0);
        for y in top..top + WINDOW {
            for &c in &cells[y * w..y * w + WINDOW] {
                counts[c as usize] += 1;
            }
        }
        for left in 0..=w - WINDOW {
            if left > 0 {
                for y in top..top + WINDOW {
                    counts[cells[y * w + left - 1] as usize] -= 1;
                    counts[cells[y * w + left + WINDOW - 1] as usize] += 1;
                }
            }
            for (p, &n) in presence.iter_mut().zip(&counts) {
                if n > 0 {
                    *p += 1;
                }
            }
        }
    }
    let windows = ((h - WINDOW + 1) * (w - WINDOW + 1)) as f64;
    Ok(CsdHistogram {
        bins: presence.into_iter().map(|p| p as f64 / windows).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CldCoefficients {
    pub y_coeffs: Vec<f64>,
    pub cb_coeffs: Vec<f64>,
    pub cr_coeffs: Vec<f64>,
}

impl CldCoefficients {
    pub fn flattened(&self) -> Vec<f64> {
        self.y_coeffs
            .iter()
            .chain(&self.cb_coeffs)
            .chain(&self.cr_coeffs)
            .copied()
            .collect()
    }
}

/// `(row, col)` of the leading zigzag positions of an 8x8 block.
pub const ZIGZAG: [(usize, usize); 6] = [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)];
const GRID: usize = 8;

/// Rows or columns covered by grid cell `i` of an extent `n`; never empty.
fn cell_span(i: usize, n: usize) -> (usize, usize) {
    let start = (i * n / GRID).min(n - 1);
    let end = ((i + 1) * n / GRID).max(start + 1).min(n);
    (start, end)
}

/// Orthonormal 2-D DCT-II of an 8x8 block, `[row][col]` by (vertical, horizontal) frequency.
pub fn dct8x8(block: &[[f64; GRID]; GRID]) -> [[f64; GRID]; GRID] {
    let n = GRID as f64;
    let basis = |k: usize, x: usize| {
        let alpha = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        alpha * ((2 * x + 1) as f64 * k as f64 * std::f64::consts::PI / (2.0 * n)).cos()
    };
    let mut out = [[0.0; GRID]; GRID];
    for (v, row) in out.iter_mut().enumerate() {
        for (u, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (y, brow) in block.iter().enumerate() {
                for (x, &f) in brow.iter().enumerate() {
                    acc += basis(v, y) * basis(u, x) * f;
                }
            }
            *o = acc;
        }
    }
    out
}

/// Zigzag-leading DCT coefficients (6 luma, 3 + 3 chroma) of the 8x8 grid of
/// mean colors in YCbCr.
pub fn color_layout_descriptor(image: &Raster) -> CldCoefficients {
    let (h, w) = (image.height(), image.width());
    let mut planes = [[[0.0; GRID]; GRID]; 3];
    for gy in 0..GRID {
        let (y0, y1) = cell_span(gy, h);
        for gx in 0..GRID {
            let (x0, x1) = cell_span(gx, w);
            let mut sum = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = image.unit_rgb(y, x);
                    for c in 0..3 {
                        sum[c] += px[c];
                    }
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let ycc = rgb_to_ycbcr(sum.map(|s| s / count));
            for c in 0..3 {
                planes[c][gy][gx] = ycc[c];
            }
        }
    }
    let take = |plane: &[[f64; GRID]; GRID], n: usize| {
        let d = dct8x8(plane);
        ZIGZAG[..n].iter().map(|&(r, c)| d[r][c]).collect()
    };
    CldCoefficients {
        y_coeffs: take(&planes[0], 6),
        cb_coeffs: take(&planes[1], 3),
        cr_coeffs: take(&planes[2], 3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyHistogram {
    /// Row-major 64x64 matrix; only `a <= b` cells are populated.
    pub pairs: Vec<f64>,
}

impl AdjacencyHistogram {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pairs[a * BINS + b]
    }

    /// The `a <= b` cells in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(PAIR_CELLS);
        for a in 0..BINS {
            out.extend_from_slice(&self.pairs[a * BINS + a..(a + 1) * BINS]);
        }
        out
    }
}

/// Distribution of unordered cell pairs over 4-neighbor pixel pairs.
/// An image with no neighbor pairs yields all zeros.
pub fn adjacent_color_pairs(image: &Raster) -> AdjacencyHistogram {
    let (h, w) = (image.height(), image.width());
    let cells = quantize_image(image);
    let mut pairs = vec![0.0; BINS * BINS];
    let mut total = 0usize;
    let mut add = |a: u8, b: u8| {
        let (a, b) = (a.min(b) as usize, a.max(b) as usize);
        pairs[a * BINS + b] += 1.0;
        total += 1;
    };
    for y in 0..h {
        for x in 0..w {
            let c = cells[y * w + x];
            if x + 1 < w {
                add(c, cells[y * w + x + 1]);
            }
            if y + 1 < h {
                add(c, cells[(y + 1) * w + x]);
            }
        }
    }
    if total > 0 {
        let n = total as f64;
        for p in &mut pairs {
            *p /= n;
        }
    }
    AdjacencyHistogram { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::quantize::quantize_rgb;

    #[test]
    fn solid_image_csd() {
        let img = Raster::filled(16, 16, [0.2, -0.4, 0.9]);
        let bin = quantize_rgb(img.unit_rgb(0, 0));
        let csd = color_structure_descriptor(&img).unwrap();
        for (b, &v) in csd.bins.iter().enumerate() {
            assert_eq!(v, if b == bin { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn csd_too_small() {
        let img = Raster::filled(7, 16, [0.0; 3]);
        assert!(matches!(
            color_structure_descriptor(&img),
            Err(Error::Descriptor(_))
        ));
    }

    #[test]
    fn constant_cld_has_no_ac() {
        let img = Raster::filled(16, 16, [0.5, 0.0, -0.5]);
        let cld = color_layout_descriptor(&img);
        let ycc = rgb_to_ycbcr(img.unit_rgb(0, 0));
        assert!((cld.y_coeffs[0] - 8.0 * ycc[0]).abs() < 1e-9);
        assert!((cld.cb_coeffs[0] - 8.0 * ycc[1]).abs() < 1e-9);
        assert!((cld.cr_coeffs[0] - 8.0 * ycc[2]).abs() < 1e-9);
        for v in cld.y_coeffs[1..]
            .iter()
            .chain(&cld.cb_coeffs[1..])
            .chain(&cld.cr_coeffs[1..])
        {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_images_fill_every_grid_cell() {
        let img = Raster::from_fn(3, 5, |y, x| [y as f32 / 3.0, x as f32 / 5.0, 0.0]);
        let cld = color_layout_descriptor(&img);
        assert!(cld.flattened().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn solid_adjacency_on_diagonal() {
        let img = Raster::filled(6, 9, [-1.0, 1.0, -1.0]);
        let bin = quantize_rgb(img.unit_rgb(0, 0));
        let adj = adjacent_color_pairs(&img);
        assert_eq!(adj.get(bin, bin), 1.0);
        assert_eq!(adj.upper_triangle().len(), PAIR_CELLS);
        assert!((adj.upper_triangle().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
