//! Super-resolution under the bicubic degradation model.

pub mod bicubic;
pub mod net;
pub mod train;

pub use bicubic::{bicubic_downsample, bicubic_upsample, BicubicKernel, CUBIC_A};
pub use net::{channel_attention, sasr_forward, SasrArch};
pub use train::{continue_sr, train_sr, SrCheckpoint, SrConfig, SrLogRow};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// PSNR value reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

fn same_shape(a: &Raster, b: &Raster, what: &str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn mean_squared_difference(a: &Raster, b: &Raster) -> f64 {
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    total / a.data().len() as f64
}

/// Mean squared residual between `y` and the bicubic downsampling of `z`.
pub fn degradation_loss(z: &Raster, y: &Raster, f: usize) -> Result<f64> {
    let down = bicubic_downsample(z, f)?;
    same_shape(&down, y, "degradation loss")?;
    Ok(mean_squared_difference(y, &down))
}

/// Peak signal-to-noise ratio over the `[-1, 1]` range (peak 2).
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = mean_squared_difference(a, b);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (4.0 / mse).log10()).min(PSNR_CAP_DB))
}
