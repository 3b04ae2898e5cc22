//! Separable bicubic resampling with reflect borders.
//!
//! Shrinking stretches the kernel by the scale factor (anti-aliasing);
//! enlarging uses the plain 4-tap kernel. Every output sample's weights are
//! normalized to sum to one, so constants map to themselves.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::reflect_index;
use crate::raster::Raster;
use crate::tensor::{Real, Tensor};

/// Catmull-Rom style cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicubicKernel {
    pub a: f64,
}

impl Default for BicubicKernel {
    fn default() -> Self {
        Self { a: CUBIC_A }
    }
}

impl BicubicKernel {
    pub fn weight(&self, x: f64) -> f64 {
        let a = self.a;
        let x = x.abs();
        if x <= 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
        } else {
            0.0
        }
    }

    /// The four tap weights for a sample at fractional offset `phase` in `[0, 1)`
    /// past the second tap.
    pub fn taps(&self, phase: f64) -> [f64; 4] {
        [
            self.weight(phase + 1.0),
            self.weight(phase),
            self.weight(1.0 - phase),
            self.weight(2.0 - phase),
        ]
    }

    /// Dense `[output, input]` matrix resampling a 1-D signal.
    pub fn matrix(&self, input: usize, output: usize) -> Tensor<f64> {
        let mut m = Tensor::zeros(&[output, input]);
        let scale = input as f64 / output as f64;
        let stretch = scale.max(1.0);
        let radius = 2.0 * stretch;
        for o in 0..output {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - radius).floor() as isize;
            let hi = (center + radius).ceil() as isize;
            let mut taps = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for j in lo..=hi {
                let w = self.weight((j as f64 - center) / stretch);
                if w != 0.0 {
                    taps.push((j, w));
                    total += w;
                }
            }
            for (j, w) in taps {
                let col = reflect_index(j, input);
                let cur = m.at2(o, col);
                m.set2(o, col, cur + w / total);
            }
        }
        m
    }
}

/// Row and column operators for resizing `h x w` planes to `out_h x out_w`.
pub fn resize_operators<T: Real>(
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> (Rc<Tensor<T>>, Rc<Tensor<T>>) {
    let k = BicubicKernel::default();
    (
        Rc::new(k.matrix(h, out_h).cast()),
        Rc::new(k.matrix(w, out_w).cast()),
    )
}

/// Bicubic resize without clamping.
pub fn resize(image: &Raster, out_h: usize, out_w: usize) -> Result<Raster> {
    if out_h == 0 || out_w == 0 || image.height() == 0 || image.width() == 0 {
        return Err(Error::Shape(format!(
            "cannot resize {}x{} to {out_h}x{out_w}",
            image.height(),
            image.width()
        )));
    }
    let k = BicubicKernel::default();
    let rows = k.matrix(image.height(), out_h);
    let cols = k.matrix(image.width(), out_w);
    let (h, w) = (image.height(), image.width());
    // columns first, then rows; f64 accumulation
    let mut tmp = vec![0.0f64; h * out_w * 3];
    for y in 0..h {
        for ox in 0..out_w {
            let mut acc = [0.0f64; 3];
            for x in 0..w {
                let wt = cols.at2(ox, x);
                if wt != 0.0 {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        acc[c] += wt * f64::from(p[c]);
                    }
                }
            }
            tmp[(y * out_w + ox) * 3..][..3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0f32; out_h * out_w * 3];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = [0.0f64; 3];
            for y in 0..h {
                let wt = rows.at2(oy, y);
                if wt != 0.0 {
                    for c in 0..3 {
                        acc[c] += wt * tmp[(y * out_w + ox) * 3 + c];
                    }
                }
            }
            for c in 0..3 {
                out[(oy * out_w + ox) * 3 + c] = acc[c] as f32;
            }
        }
    }
    Raster::new(out_h, out_w, out)
}

/// Anti-aliased bicubic downsampling by an integer factor.
pub fn bicubic_downsample(image: &Raster, f: usize) -> Result<Raster> {
    if f == 0 || image.height() % f != 0 || image.width() % f != 0 {
        return Err(Error::Shape(format!(
            "factor {f} does not divide {}x{}",
            image.height(),
            image.width()
        )));
    }
    resize(image, image.height() / f, image.width() / f)
}

pub(crate) fn check_scale(f: usize) -> Result<()> {
    if (2..=4).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "scale factor must be 2, 3 or 4, got {f}"
        )))
    }
}

/// Bicubic enlargement by `f`, clamped to the valid pixel range.
pub fn bicubic_upsample(image: &Raster, f: usize) -> Result<Raster> {
    let mut out = upsample_unclamped(image, f)?;
    out.clamp_unit();
    Ok(out)
}

pub(crate) fn upsample_unclamped(image: &Raster, f: usize) -> Result<Raster> {
    check_scale(f)?;
    resize(image, image.height() * f, image.width() * f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_taps_partition_unity() {
        let k = BicubicKernel::default();
        for i in 0..100 {
            let s: f64 = k.taps(i as f64 / 100.0).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(k.weight(0.0), 1.0);
        assert_eq!(k.weight(1.0), 0.0);
        assert_eq!(k.weight(2.5), 0.0);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let r = Raster::from_fn(5, 7, |y, x| [(y * 7 + x) as f32 / 40.0 - 0.5, 0.25, -0.75]);
        assert_eq!(resize(&r, 5, 7).unwrap(), r);
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let r = Raster::filled(10, 10, [0.0; 3]);
        assert!(matches!(bicubic_downsample(&r, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_rejects_unsupported_scale() {
        let r = Raster::filled(4, 4, [0.0; 3]);
        assert!(matches!(bicubic_upsample(&r, 5), Err(Error::Config(_))));
    }

    #[test]
    fn matrix_rows_sum_to_one() {
        let k = BicubicKernel::default();
        for (i, o) in [(32, 16), (32, 8), (8, 16), (3, 12), (1, 4)] {
            let m = k.matrix(i, o);
            for r in 0..o {
                let s: f64 = (0..i).map(|c| m.at2(r, c)).sum();
                assert!((s - 1.0).abs() < 1e-12, "{i}->{o} row {r}: {s}");
            }
        }
    }
}
