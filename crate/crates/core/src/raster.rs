//! RGB rasters with components in `[-1, 1]`, stored height x width x 3.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 raster needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel as RGB in `[0, 1]`.
    pub fn unit_rgb(&self, y: usize, x: usize) -> [f64; 3] {
        self.pixel(y, x)
            .map(|v| ((f64::from(v) + 1.0) * 0.5).clamp(0.0, 1.0))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| {
            self.pixel(y, self.width - 1 - x)
        })
    }

    pub fn rotate90(&self) -> Self {
        // clockwise: new (y, x) takes old (h - 1 - x, y)
        Self::from_fn(self.width, self.height, |y, x| {
            self.pixel(self.height - 1 - x, y)
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |y, x| {
            self.pixel(top + y, left + x)
        }))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Self::batch_to_tensor(std::slice::from_ref(self)).expect("single raster")
    }

    /// Stack equally sized rasters into `[N, 3, H, W]`.
    pub fn batch_to_tensor<T: Real>(rasters: &[Raster]) -> Result<Tensor<T>> {
        let first = rasters
            .first()
            .ok_or_else(|| Error::Shape("empty raster batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(rasters.len() * 3 * h * w);
        for r in rasters {
            if r.height != h || r.width != w {
                return Err(Error::Shape(format!(
                    "batch mixes {h}x{w} and {}x{}",
                    r.height, r.width
                )));
            }
            for c in 0..3 {
                data.extend(
                    r.data
                        .iter()
                        .skip(c)
                        .step_by(3)
                        .map(|&v| T::lit(f64::from(v))),
                );
            }
        }
        Tensor::from_vec(&[rasters.len(), 3, h, w], data)
    }

    /// Split a `[N, 3, H, W]` tensor into rasters.
    pub fn batch_from_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<Raster>> {
        let (n, c, h, w) = match *t.shape() {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(Error::Shape(format!("expected NCHW, got {s:?}"))),
        };
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        Ok((0..n)
            .map(|i| {
                let base = &t.data()[i * 3 * plane..][..3 * plane];
                let mut data = Vec::with_capacity(3 * plane);
                for p in 0..plane {
                    for ch in 0..3 {
                        data.push(base[ch * plane + p].to_f32().unwrap_or(f32::NAN));
                    }
                }
                Raster {
                    height: h,
                    width: w,
                    data,
                }
            })
            .collect())
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img
            .as_raw()
            .iter()
            .map(|&v| f32::from(v) / 127.5 - 1.0)
            .collect();
        Self {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer sized by raster")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = image::codecs::png::PngEncoder::new_with_quality(
            std::io::BufWriter::new(file),
            image::codecs::png::CompressionType::Fast,
            image::codecs::png::FilterType::Sub,
        );
        self.to_rgb8().write_with_encoder(encoder)?;
        Ok(())
    }
}

/// `[-1, 1]` component to an 8-bit level.
pub fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let r = Raster::from_fn(3, 2, |y, x| [y as f32 * 0.1, x as f32 * 0.2, -0.5]);
        let t: Tensor<f32> = r.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 3, 2]);
        assert_eq!(Raster::batch_from_tensor(&t).unwrap()[0], r);
    }

    #[test]
    fn rotation_four_times_is_identity() {
        let r = Raster::from_fn(3, 5, |y, x| [y as f32, x as f32, 0.0]);
        let back = r.rotate90().rotate90().rotate90().rotate90();
        assert_eq!(back, r);
        assert_eq!(r.rotate90().height(), 5);
    }

    #[test]
    fn quantize_extremes() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(7.0), 255);
    }
}
