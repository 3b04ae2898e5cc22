//! The super-resolution network: 3x3 convolutions without pooling, channel
//! attention after every second convolution, a strided transposed
//! convolution, and a global bicubic residual.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_tensor, Bound, ParamSet};
use crate::raster::Raster;
use crate::sasr::bicubic::{self, resize_operators};
use crate::tensor::{Real, Tensor};

/// Layer layout of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SasrArch {
    pub in_channels: usize,
    pub conv_layers: usize,
    pub channels: usize,
    pub reduction: usize,
    pub scale: usize,
}

impl SasrArch {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 || self.channels == 0 || self.in_channels == 0 {
            return Err(Error::Config(
                "layer and channel counts must be positive".into(),
            ));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "{} channels not divisible by attention reduction {}",
                self.channels, self.reduction
            )));
        }
        if self.scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(())
    }

    /// Kernel and padding of the terminal transposed convolution; output
    /// side is exactly `scale * input side`.
    pub fn upsample_geometry(&self) -> (usize, usize) {
        let pad = self.scale / 2;
        (self.scale + 2 * pad, pad)
    }

    pub fn has_attention(&self, layer: usize) -> bool {
        layer % 2 == 1
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut p = ParamSet::new();
        let c = self.channels;
        for i in 0..self.conv_layers {
            let cin = if i == 0 { self.in_channels } else { c };
            let std = (2.0 / (cin * 9) as f64).sqrt();
            p.insert(
                format!("conv{i:02}.w"),
                normal_tensor(rng, &[c, cin, 3, 3], std),
            );
            p.insert(format!("conv{i:02}.b"), Tensor::zeros(&[c]));
            if self.has_attention(i) {
                let hidden = c / self.reduction;
                p.insert(
                    format!("ca{i:02}.w1"),
                    normal_tensor(rng, &[c, hidden], (1.0 / c as f64).sqrt()),
                );
                p.insert(format!("ca{i:02}.b1"), Tensor::zeros(&[hidden]));
                p.insert(
                    format!("ca{i:02}.w2"),
                    normal_tensor(rng, &[hidden, c], (1.0 / hidden as f64).sqrt()),
                );
                p.insert(format!("ca{i:02}.b2"), Tensor::zeros(&[c]));
            }
        }
        let (k, _) = self.upsample_geometry();
        p.insert(
            "up.w",
            normal_tensor(rng, &[c, self.in_channels, k, k], 1e-3),
        );
        p.insert("up.b", Tensor::zeros(&[self.in_channels]));
        Ok(p)
    }
}

/// Squeeze-excitation gate: per-channel means through a `C -> C/r -> C`
/// bottleneck and a sigmoid, then rescale each channel.
pub fn channel_attention_graph<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    bound: &Bound,
    prefix: &str,
) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    let w1 = bound.var(&format!("{prefix}.w1"))?;
    let b1 = bound.var(&format!("{prefix}.b1"))?;
    let w2 = bound.var(&format!("{prefix}.w2"))?;
    let b2 = bound.var(&format!("{prefix}.b2"))?;
    let hidden = g.linear(pooled, w1, Some(b1))?;
    let hidden = g.relu(hidden);
    let logits = g.linear(hidden, w2, Some(b2))?;
    let gate = g.sigmoid(logits);
    g.scale_channels(x, gate)
}

/// Apply channel attention to `[N, C, H, W]` features with parameters
/// `w1 [C, C/r]`, `b1`, `w2 [C/r, C]`, `b2`.
pub fn channel_attention<T: Real>(
    features: &Tensor<T>,
    params: &ParamSet<T>,
    reduction: usize,
) -> Result<Tensor<T>> {
    let c = features.shape().get(1).copied().unwrap_or(0);
    if reduction == 0 || c % reduction != 0 {
        return Err(Error::Config(format!(
            "{c} channels not divisible by attention reduction {reduction}"
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let mut scoped = ParamSet::new();
    for (k, v) in params.iter() {
        scoped.insert(format!("ca.{k}"), v.clone());
    }
    let bound = scoped.bind(&mut g, false);
    let y = channel_attention_graph(&mut g, x, &bound, "ca")?;
    Ok(g.value(y).clone())
}

/// Network body: the learned correction added to the bicubic residual.
pub fn body_graph<T: Real>(
    g: &mut Graph<T>,
    lr: Var,
    bound: &Bound,
    arch: &SasrArch,
) -> Result<Var> {
    let mut h = lr;
    for i in 0..arch.conv_layers {
        let padded = g.reflect_pad(h, 1)?;
        let w = bound.var(&format!("conv{i:02}.w"))?;
        let b = bound.var(&format!("conv{i:02}.b"))?;
        let conv = g.conv2d(padded, w, Some(b), 1, 0)?;
        h = g.relu(conv);
        if arch.has_attention(i) {
            h = channel_attention_graph(g, h, bound, &format!("ca{i:02}"))?;
        }
    }
    let (_, pad) = arch.upsample_geometry();
    let w = bound.var("up.w")?;
    let b = bound.var("up.b")?;
    g.conv_transpose2d(h, w, Some(b), arch.scale, pad)
}

/// Differentiable forward: body plus bicubic-upsampled input, unclamped.
pub fn forward_graph<T: Real>(
    g: &mut Graph<T>,
    lr: Var,
    bound: &Bound,
    arch: &SasrArch,
) -> Result<Var> {
    let body = body_graph(g, lr, bound, arch)?;
    let (h, w) = (g.shape(lr)[2], g.shape(lr)[3]);
    let (rows, cols) = resize_operators(h, w, h * arch.scale, w * arch.scale);
    let residual = g.resample(lr, rows, cols)?;
    g.add(body, residual)
}

/// Super-resolve one raster: body output plus bicubic upsampling, clamped.
///
/// With every learned parameter zero the result equals
/// [`bicubic::bicubic_upsample`] exactly.
pub fn sasr_forward(lr_image: &Raster, params: &ParamSet<f32>, arch: &SasrArch) -> Result<Raster> {
    arch.validate()?;
    if arch.in_channels != 3 {
        return Err(Error::Shape(format!(
            "rasters have 3 channels, network expects {}",
            arch.in_channels
        )));
    }
    bicubic::check_scale(arch.scale)?;
    let mut g = Graph::<f32>::new();
    let x = g.constant(lr_image.to_tensor());
    let bound = params.bind(&mut g, false);
    let body = body_graph(&mut g, x, &bound, arch)?;
    let body = Raster::batch_from_tensor(g.value(body))?.remove(0);
    let mut out = bicubic::upsample_unclamped(lr_image, arch.scale)?;
    if (body.height(), body.width()) != (out.height(), out.width()) {
        return Err(Error::Shape(
            "network output does not match upsampled size".into(),
        ));
    }
    for (o, &b) in out.data_mut().iter_mut().zip(body.data()) {
        *o += b;
    }
    out.clamp_unit();
    Ok(out)
}
