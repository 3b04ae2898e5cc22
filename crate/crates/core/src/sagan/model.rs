//! Generator and discriminator networks.
//!
//! The generator is a U-Net over a noise field concatenated with constant
//! condition planes: `depth` stride-2 convolutions down, one attention block
//! at the bottleneck, and `depth` stride-2 transposed convolutions up with
//! skip connections. The discriminator is a stride-2 convolution stack with
//! one attention block and a linear logit head.
//!
//! Every generator instance normalization is followed by a per-channel
//! scale and shift that are linear in the condition vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ConditionVector;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_tensor, Bound, ParamSet};
use crate::raster::Raster;
use crate::sagan::attention::{self_attention_graph, AttentionConfig, Footprint};
use crate::tensor::{Real, Tensor};

const LEAK: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const MAX_WIDTH_MULTIPLIER: usize = 8;
/// The discriminator attends at the first stage whose side is at most this.
const DISCRIMINATOR_ATTENTION_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub image_side: usize,
    pub noise_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub flip_augment: bool,
    #[serde(default = "default_footprint")]
    pub footprint: Footprint,
}

fn default_footprint() -> Footprint {
    Footprint::Global
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            noise_channels: 8,
            base_channels: 64,
            depth: 4,
            learning_rate_g: 2e-4,
            learning_rate_d: 2e-4,
            batch_size: 16,
            steps: 2000,
            seed: 0,
            flip_augment: false,
            footprint: Footprint::Global,
        }
    }
}

impl GanConfig {
    /// Side 256, six stages.
    pub fn full() -> Self {
        Self {
            image_side: 256,
            depth: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!("depth {} out of range", self.depth)));
        }
        let unit = 1usize << self.depth;
        if self.image_side % unit != 0 || self.image_side / unit < 4 {
            return Err(Error::Config(format!(
                "image side {} is not 2^{} times a bottleneck of at least 4",
                self.image_side, self.depth
            )));
        }
        if self.noise_channels == 0 || self.base_channels == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "noise channels, base channels and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate_g > 0.0 && self.learning_rate_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn bottleneck_side(&self) -> usize {
        self.image_side >> self.depth
    }

    /// Output channels of encoder stage `i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels * (1usize << i).min(MAX_WIDTH_MULTIPLIER)
    }

    /// Index of the discriminator stage followed by attention.
    pub fn discriminator_attention_stage(&self) -> usize {
        (0..self.depth)
            .find(|&i| self.image_side >> (i + 1) <= DISCRIMINATOR_ATTENTION_SIDE)
            .unwrap_or(self.depth - 1)
    }

    pub fn attention(&self, channels: usize) -> AttentionConfig {
        AttentionConfig {
            footprint: self.footprint,
            key_dim: (channels / 8).max(1),
            value_dim: channels,
        }
    }

    /// Fresh generator parameters.
    pub fn init_generator<T: Real, R: Rng + ?Sized>(
        &self,
        condition_len: usize,
        rng: &mut R,
    ) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut p = ParamSet::new();
        let mut cin = self.noise_channels + condition_len;
        for i in 0..self.depth {
            let c = self.stage_channels(i);
            p.insert(
                format!("enc{i}.w"),
                normal_tensor(rng, &[c, cin, 4, 4], INIT_STD),
            );
            p.insert(format!("enc{i}.b"), Tensor::zeros(&[c]));
            if i > 0 {
                insert_condition_affine(&mut p, &format!("enc{i}"), condition_len, c);
            }
            cin = c;
        }
        let bottleneck = self.stage_channels(self.depth - 1);
        p.extend_prefixed(
            "",
            self.attention(bottleneck).init("attn", bottleneck, rng)?,
        );
        for i in (0..self.depth).rev() {
            let input = if i == self.depth - 1 {
                bottleneck
            } else {
                2 * self.stage_channels(i)
            };
            let output = if i == 0 {
                3
            } else {
                self.stage_channels(i - 1)
            };
            p.insert(
                format!("dec{i}.w"),
                normal_tensor(rng, &[input, output, 4, 4], INIT_STD),
            );
            p.insert(format!("dec{i}.b"), Tensor::zeros(&[output]));
            if i > 0 {
                insert_condition_affine(&mut p, &format!("dec{i}"), condition_len, output);
            }
        }
        Ok(p)
    }

    /// Fresh discriminator parameters.
    pub fn init_discriminator<T: Real, R: Rng + ?Sized>(
        &self,
        condition_len: usize,
        rng: &mut R,
    ) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut p = ParamSet::new();
        let mut cin = 3 + condition_len;
        let attn_stage = self.discriminator_attention_stage();
        for i in 0..self.depth {
            let c = self.stage_channels(i);
            p.insert(
                format!("conv{i}.w"),
                normal_tensor(rng, &[c, cin, 4, 4], INIT_STD),
            );
            p.insert(format!("conv{i}.b"), Tensor::zeros(&[c]));
            if i == attn_stage {
                p.extend_prefixed("", self.attention(c).init("attn", c, rng)?);
            }
            cin = c;
        }
        let b = self.bottleneck_side();
        p.insert("fc.w", normal_tensor(rng, &[cin * b * b, 1], INIT_STD));
        p.insert("fc.b", Tensor::zeros(&[1]));
        Ok(p)
    }
}

fn insert_condition_affine<T: Real>(
    p: &mut ParamSet<T>,
    prefix: &str,
    condition_len: usize,
    channels: usize,
) {
    p.insert(
        format!("{prefix}.gamma"),
        Tensor::zeros(&[condition_len, channels]),
    );
    p.insert(
        format!("{prefix}.beta"),
        Tensor::zeros(&[condition_len, channels]),
    );
}

/// `[N, len]` matrix of concatenated one-hot conditions.
pub fn condition_matrix<T: Real>(conditions: &[ConditionVector]) -> Result<Tensor<T>> {
    let len = conditions.first().map_or(0, ConditionVector::len);
    if conditions.iter().any(|c| c.len() != len) {
        return Err(Error::Shape(
            "conditions of differing lengths in one batch".into(),
        ));
    }
    let data = conditions
        .iter()
        .flat_map(|c| c.concatenated())
        .map(|v| T::lit(f64::from(v)))
        .collect();
    Tensor::from_vec(&[conditions.len(), len], data)
}

/// Instance normalization followed by `x * (1 + c·gamma) + c·beta`.
fn conditional_norm<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    condition: Var,
    bound: &Bound,
    prefix: &str,
) -> Result<Var> {
    let h = g.instance_norm(x, NORM_EPS)?;
    let gamma = g.linear(condition, bound.var(&format!("{prefix}.gamma"))?, None)?;
    let beta = g.linear(condition, bound.var(&format!("{prefix}.beta"))?, None)?;
    let scaled = g.scale_channels(h, gamma)?;
    let h = g.add(h, scaled)?;
    let ones = Tensor::from_vec(g.shape(x), vec![T::lit(1.0); g.value(x).len()])?;
    let ones = g.constant(ones);
    let shift = g.scale_channels(ones, beta)?;
    g.add(h, shift)
}

/// `[N, len, side, side]` constant planes, plane `k` of sample `n` filled with
/// component `k` of `conditions[n]`.
pub fn condition_planes<T: Real>(conditions: &[ConditionVector], side: usize) -> Result<Tensor<T>> {
    let len = conditions.first().map_or(0, ConditionVector::len);
    if conditions.iter().any(|c| c.len() != len) {
        return Err(Error::Shape(
            "conditions of differing lengths in one batch".into(),
        ));
    }
    let plane = side * side;
    let mut data = Vec::with_capacity(conditions.len() * len * plane);
    for c in conditions {
        for v in c.concatenated() {
            data.extend(std::iter::repeat_n(T::lit(f64::from(v)), plane));
        }
    }
    Tensor::from_vec(&[conditions.len(), len, side, side], data)
}

/// Network input: noise channels followed by condition planes.
pub fn generator_input<T: Real>(
    noise: &Tensor<T>,
    conditions: &[ConditionVector],
) -> Result<Tensor<T>> {
    let (n, nz, h, w) = match *noise.shape() {
        [n, nz, h, w] if h == w => (n, nz, h, w),
        ref s => {
            return Err(Error::Shape(format!(
                "noise must be [N, C, S, S], got {s:?}"
            )))
        }
    };
    if conditions.len() != n {
        return Err(Error::Shape(format!(
            "{n} noise fields with {} conditions",
            conditions.len()
        )));
    }
    let planes = condition_planes::<T>(conditions, h)?;
    let nc = planes.dim(1);
    let hw = h * w;
    let mut data = Vec::with_capacity(n * (nz + nc) * hw);
    for i in 0..n {
        data.extend_from_slice(&noise.data()[i * nz * hw..(i + 1) * nz * hw]);
        data.extend_from_slice(&planes.data()[i * nc * hw..(i + 1) * nc * hw]);
    }
    Tensor::from_vec(&[n, nz + nc, h, w], data)
}

fn expect_input(
    g: &Graph<impl Real>,
    x: Var,
    channels: usize,
    side: usize,
    what: &str,
) -> Result<()> {
    match *g.shape(x) {
        [_, c, h, w] if c == channels && h == side && w == side => Ok(()),
        ref s => Err(Error::Shape(format!(
            "{what} expects [N, {channels}, {side}, {side}], got {s:?}"
        ))),
    }
}

/// Generator on a prepared input (see [`generator_input`]) and the matching
/// `[N, len]` condition matrix; returns `[N, 3, S, S]` in `[-1, 1]`.
pub fn generator_graph<T: Real>(
    g: &mut Graph<T>,
    input: Var,
    condition: Var,
    bound: &Bound,
    config: &GanConfig,
) -> Result<Var> {
    let condition_len = match *g.shape(condition) {
        [n, len] if n == g.shape(input)[0] => len,
        ref s => {
            return Err(Error::Shape(format!(
                "condition matrix {s:?} for generator input {:?}",
                g.shape(input)
            )))
        }
    };
    expect_input(
        g,
        input,
        config.noise_channels + condition_len,
        config.image_side,
        "generator",
    )?;
    let conv = |g: &mut Graph<T>, x: Var, name: &str| -> Result<Var> {
        let w = bound.var(&format!("{name}.w"))?;
        let b = bound.var(&format!("{name}.b"))?;
        g.conv2d(x, w, Some(b), 2, 1)
    };
    let mut skips = Vec::with_capacity(config.depth);
    let mut h = input;
    for i in 0..config.depth {
        h = conv(g, h, &format!("enc{i}"))?;
        if i > 0 {
            h = conditional_norm(g, h, condition, bound, &format!("enc{i}"))?;
        }
        h = g.leaky_relu(h, LEAK);
        skips.push(h);
    }
    let bottleneck = config.stage_channels(config.depth - 1);
    h = self_attention_graph(g, h, bound, "attn", &config.attention(bottleneck))?;
    for i in (0..config.depth).rev() {
        if i != config.depth - 1 {
            h = g.concat_channels(&[h, skips[i]])?;
        }
        let w = bound.var(&format!("dec{i}.w"))?;
        let b = bound.var(&format!("dec{i}.b"))?;
        h = g.conv_transpose2d(h, w, Some(b), 2, 1)?;
        if i > 0 {
            h = conditional_norm(g, h, condition, bound, &format!("dec{i}"))?;
            h = g.relu(h);
        }
    }
    Ok(g.tanh(h))
}

/// Discriminator logits `[N, 1]` for `[N, 3 + condition_len, S, S]` input.
pub fn discriminator_graph<T: Real>(
    g: &mut Graph<T>,
    input: Var,
    condition_len: usize,
    bound: &Bound,
    config: &GanConfig,
) -> Result<Var> {
    expect_input(
        g,
        input,
        3 + condition_len,
        config.image_side,
        "discriminator",
    )?;
    let attn_stage = config.discriminator_attention_stage();
    let mut h = input;
    for i in 0..config.depth {
        let w = bound.var(&format!("conv{i}.w"))?;
        let b = bound.var(&format!("conv{i}.b"))?;
        h = g.conv2d(h, w, Some(b), 2, 1)?;
        h = g.leaky_relu(h, LEAK);
        if i == attn_stage {
            h = self_attention_graph(
                g,
                h,
                bound,
                "attn",
                &config.attention(config.stage_channels(i)),
            )?;
        }
    }
    let n = g.shape(h)[0];
    let flat: usize = g.shape(h)[1..].iter().product();
    let h = g.reshape(h, &[n, flat])?;
    g.linear(h, bound.var("fc.w")?, Some(bound.var("fc.b")?))
}

/// Concatenate image channels with condition planes.
pub fn discriminator_input<T: Real>(
    images: &Tensor<T>,
    conditions: &[ConditionVector],
) -> Result<Tensor<T>> {
    if images.shape().len() != 4 || images.dim(1) != 3 {
        return Err(Error::Shape(format!(
            "images must be [N, 3, S, S], got {:?}",
            images.shape()
        )));
    }
    generator_input(images, conditions)
}

/// Generate one image from a `side x side x noise_channels` noise field
/// given as `[1, noise_channels, side, side]`.
pub fn generator_forward(
    noise: &Tensor<f32>,
    condition: &ConditionVector,
    params: &ParamSet<f32>,
    config: &GanConfig,
) -> Result<Raster> {
    if noise.shape()
        != [
            1,
            config.noise_channels,
            config.image_side,
            config.image_side,
        ]
    {
        return Err(Error::Shape(format!(
            "noise of shape {:?} for a side {} generator with {} noise channels",
            noise.shape(),
            config.image_side,
            config.noise_channels
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(generator_input(noise, std::slice::from_ref(condition))?);
    let c = g.constant(condition_matrix(std::slice::from_ref(condition))?);
    let bound = params.bind(&mut g, false);
    let y = generator_graph(&mut g, x, c, &bound, config)?;
    Ok(Raster::batch_from_tensor(g.value(y))?.remove(0))
}

/// Probability that `image` is real under `condition`.
pub fn discriminator_forward(
    image: &Raster,
    condition: &ConditionVector,
    params: &ParamSet<f32>,
    config: &GanConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(discriminator_input(
        &image.to_tensor::<f32>(),
        std::slice::from_ref(condition),
    )?);
    let bound = params.bind(&mut g, false);
    let logit = discriminator_graph(&mut g, x, condition.len(), &bound, config)?;
    let z = f64::from(g.value(logit).data()[0]);
    Ok(1.0 / (1.0 + (-z).exp()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> GanConfig {
        GanConfig {
            image_side: 16,
            noise_channels: 2,
            base_channels: 4,
            depth: 2,
            batch_size: 2,
            ..GanConfig::default()
        }
    }

    fn cond(c: usize, s: usize) -> ConditionVector {
        ConditionVector::from_indices(c, 2, s, 3).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        assert!(GanConfig::full().validate().is_ok());
        assert!(GanConfig {
            image_side: 48,
            ..GanConfig::default()
        }
        .validate()
        .is_err());
        assert!(GanConfig {
            image_side: 32,
            depth: 4,
            ..GanConfig::default()
        }
        .validate()
        .is_err());
        assert!(GanConfig {
            learning_rate_d: 0.0,
            ..GanConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(GanConfig::default().bottleneck_side(), 4);
        assert_eq!(GanConfig::full().discriminator_attention_stage(), 2);
        assert_eq!(GanConfig::default().discriminator_attention_stage(), 0);
    }

    #[test]
    fn generator_output_in_range() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p: ParamSet<f32> = cfg.init_generator(5, &mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v *= 200.0;
            }
        }
        let noise = normal_tensor(&mut rng, &[1, 2, 16, 16], 1.0);
        let out = generator_forward(&noise, &cond(1, 2), &p, &cfg).unwrap();
        assert_eq!((out.height(), out.width()), (16, 16));
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let again = generator_forward(&noise, &cond(1, 2), &p, &cfg).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn generator_rejects_bad_noise() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: ParamSet<f32> = cfg.init_generator(5, &mut rng).unwrap();
        let noise = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(matches!(
            generator_forward(&noise, &cond(0, 0), &p, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_head_gives_half() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: ParamSet<f32> = cfg.init_discriminator(5, &mut rng).unwrap();
        p.zero_prefix("fc.");
        let img = Raster::from_fn(16, 16, |y, x| [y as f32 / 16.0, -(x as f32) / 16.0, 0.3]);
        assert_eq!(
            discriminator_forward(&img, &cond(0, 1), &p, &cfg).unwrap(),
            0.5
        );
    }

    #[test]
    fn discriminator_in_open_interval() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: ParamSet<f32> = cfg.init_discriminator(5, &mut rng).unwrap();
        let img = Raster::filled(16, 16, [1.0, -1.0, 0.0]);
        let d = discriminator_forward(&img, &cond(1, 0), &p, &cfg).unwrap();
        assert!(d > 0.0 && d < 1.0);
        let wrong = Raster::filled(8, 8, [0.0; 3]);
        assert!(matches!(
            discriminator_forward(&wrong, &cond(1, 0), &p, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_stage_discriminator_matches_hand_computation() {
        // Side 8, one stage with 1 output channel; attention output zeroed so
        // the block is the identity.
        let cfg = GanConfig {
            image_side: 8,
            noise_channels: 1,
            base_channels: 1,
            depth: 1,
            ..GanConfig::default()
        };
        let c = ConditionVector::from_indices(0, 1, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p: ParamSet<f64> = cfg.init_discriminator(2, &mut rng).unwrap();
        p.zero_prefix("attn.wo");
        p.zero_prefix("attn.bo");
        let kernel: Vec<f64> = (0..5 * 16)
            .map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5)
            .collect();
        p.insert(
            "conv0.w",
            Tensor::from_vec(&[1, 5, 4, 4], kernel.clone()).unwrap(),
        );
        p.insert("conv0.b", Tensor::from_vec(&[1], vec![0.1]).unwrap());
        let head: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 10.0).collect();
        p.insert("fc.w", Tensor::from_vec(&[16, 1], head.clone()).unwrap());
        p.insert("fc.b", Tensor::from_vec(&[1], vec![-0.2]).unwrap());

        let img = Raster::from_fn(8, 8, |y, x| {
            [
                (y as f32 - x as f32) / 8.0,
                0.5,
                (x * y) as f32 / 64.0 - 0.5,
            ]
        });
        let input_at = |ch: usize, y: isize, x: isize| -> f64 {
            if !(0..8).contains(&y) || !(0..8).contains(&x) {
                return 0.0;
            }
            if ch < 3 {
                f64::from(img.pixel(y as usize, x as usize)[ch])
            } else {
                1.0
            }
        };
        let mut logit = -0.2;
        for oy in 0..4 {
            for ox in 0..4 {
                let mut acc = 0.1;
                for ch in 0..5 {
                    for ky in 0..4 {
                        for kx in 0..4 {
                            let y = (2 * oy + ky) as isize - 1;
                            let x = (2 * ox + kx) as isize - 1;
                            acc += kernel[ch * 16 + ky * 4 + kx] * input_at(ch, y, x);
                        }
                    }
                }
                let act = if acc > 0.0 { acc } else { 0.2 * acc };
                logit += head[oy * 4 + ox] * act;
            }
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(discriminator_input(&img.to_tensor::<f64>(), &[c]).unwrap());
        let bound = p.bind(&mut g, false);
        let out = discriminator_graph(&mut g, x, 2, &bound, &cfg).unwrap();
        assert!((g.value(out).data()[0] - logit).abs() < 1e-12);
    }

    #[test]
    fn condition_affine_starts_as_identity() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: ParamSet<f64> = cfg.init_generator(5, &mut rng).unwrap();
        assert!(p
            .get("dec1.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let mut g = Graph::<f64>::new();
        let x = g.constant(normal_tensor(&mut rng, &[2, 4, 3, 3], 1.0));
        let c = g.constant(condition_matrix(&[cond(0, 1), cond(1, 2)]).unwrap());
        let bound = p.bind(&mut g, false);
        let plain = g.instance_norm(x, NORM_EPS).unwrap();
        let conditioned = conditional_norm(&mut g, x, c, &bound, "dec1").unwrap();
        assert_eq!(g.value(plain), g.value(conditioned));
    }

    #[test]
    fn condition_affine_scales_and_shifts_by_label() {
        let mut p = ParamSet::<f64>::new();
        p.insert(
            "n.gamma",
            Tensor::from_vec(&[5, 1], vec![0.0, 1.0, 0.0, 0.0, 0.0]).unwrap(),
        );
        p.insert(
            "n.beta",
            Tensor::from_vec(&[5, 1], vec![0.0, 0.0, 0.0, 0.0, 3.0]).unwrap(),
        );
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 1.0, 3.0]).unwrap());
        let c = g.constant(condition_matrix(&[cond(1, 0), cond(0, 2)]).unwrap());
        let bound = p.bind(&mut g, false);
        let y = conditional_norm(&mut g, x, c, &bound, "n").unwrap();
        let z = 1.0 / (1.0 + NORM_EPS).sqrt();
        let expected = [-2.0 * z, 2.0 * z, 3.0 - z, 3.0 + z];
        for (a, b) in g.value(y).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn condition_matrix_rows_are_one_hot_pairs() {
        let m = condition_matrix::<f32>(&[cond(1, 2), cond(0, 0)]).unwrap();
        assert_eq!(m.shape(), &[2, 5]);
        assert_eq!(
            m.data(),
            &[0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert!(condition_matrix::<f32>(&[
            cond(0, 0),
            ConditionVector::from_indices(0, 1, 0, 1).unwrap()
        ])
        .is_err());
    }

    #[test]
    fn condition_planes_carry_label_index() {
        let noise = Tensor::<f32>::zeros(&[2, 2, 4, 4]);
        let input = generator_input(&noise, &[cond(1, 2), cond(0, 1)]).unwrap();
        assert_eq!(input.shape(), &[2, 7, 4, 4]);
        let plane_value = |n: usize, k: usize| input.data()[((n * 7) + k) * 16 + 5];
        for (n, (country, style)) in [(1, 2), (0, 1)].into_iter().enumerate() {
            let countries: Vec<f32> = (2..4).map(|k| plane_value(n, k)).collect();
            let styles: Vec<f32> = (4..7).map(|k| plane_value(n, k)).collect();
            let argmax = |v: &[f32]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&countries), country);
            assert_eq!(argmax(&styles), style);
        }
    }
}
