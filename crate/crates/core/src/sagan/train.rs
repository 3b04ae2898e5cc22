use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::{encode_condition, ConditionVector, Corpus, Vocabularies};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{normal_tensor, Adam, AdamConfig, ParamSet};
use crate::raster::Raster;
use crate::sagan::model::{
    condition_matrix, discriminator_graph, discriminator_input, generator_forward, generator_graph,
    generator_input, GanConfig,
};
use crate::sasr::train::check_shapes;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;
const BETA1: f64 = 0.5;
const BETA2: f64 = 0.999;

/// `(g_loss, d_loss)` for one pair of discriminator outputs, with the
/// non-saturating generator loss `-log d_fake`.
pub fn gan_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    let r = d_real.clamp(EPS, 1.0 - EPS);
    let f = d_fake.clamp(EPS, 1.0 - EPS);
    (-f.ln(), -r.ln() - (1.0 - f).ln())
}

/// Batch means of [`gan_losses`].
pub fn gan_losses_batch(d_real: &[f64], d_fake: &[f64]) -> Result<(f64, f64)> {
    if d_real.len() != d_fake.len() || d_real.is_empty() {
        return Err(Error::Shape(format!(
            "{} real and {} fake outputs",
            d_real.len(),
            d_fake.len()
        )));
    }
    let n = d_real.len() as f64;
    let (g, d) = d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| gan_losses(r, f))
        .fold((0.0, 0.0), |acc, (g, d)| (acc.0 + g, acc.1 + d));
    Ok((g / n, d / n))
}

/// The minimax value `log d_real + log(1 - d_fake)`.
pub fn value_function(d_real: f64, d_fake: f64) -> f64 {
    let (_, d) = gan_losses(d_real, d_fake);
    -d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLogRow {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// CSV with header `step,d_loss,g_loss`.
pub fn log_to_csv(rows: &[GanLogRow]) -> String {
    let mut out = String::from("step,d_loss,g_loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.step, r.d_loss, r.g_loss);
    }
    out
}

pub fn write_log(path: &Path, rows: &[GanLogRow]) -> Result<()> {
    std::fs::write(path, log_to_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanCheckpoint {
    pub generator: ParamSet<f32>,
    pub discriminator: ParamSet<f32>,
    pub config: GanConfig,
    pub vocabularies: Vocabularies,
    pub optimizer_g: Adam<f32>,
    pub optimizer_d: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub steps_done: usize,
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    config: GanConfig,
    vocabularies: Vocabularies,
    adam_g: AdamConfig,
    adam_g_step: u64,
    adam_d: AdamConfig,
    adam_d_step: u64,
    rng: ChaCha8Rng,
    steps_done: usize,
}

impl GanCheckpoint {
    pub fn initialize(config: &GanConfig, vocabularies: Vocabularies) -> Result<Self> {
        config.validate()?;
        if vocabularies.country.is_empty() || vocabularies.style.is_empty() {
            return Err(Error::Config("empty label vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cl = vocabularies.condition_len();
        let generator = config.init_generator(cl, &mut rng)?;
        let discriminator = config.init_discriminator(cl, &mut rng)?;
        Ok(Self {
            optimizer_g: Adam::new(
                AdamConfig::new(config.learning_rate_g, BETA1, BETA2),
                &generator,
            ),
            optimizer_d: Adam::new(
                AdamConfig::new(config.learning_rate_d, BETA1, BETA2),
                &discriminator,
            ),
            generator,
            discriminator,
            config: config.clone(),
            vocabularies,
            rng,
            steps_done: 0,
        })
    }

    pub fn condition_len(&self) -> usize {
        self.vocabularies.condition_len()
    }

    /// Generate one image from an explicit noise field.
    pub fn generate(&self, noise: &Tensor<f32>, condition: &ConditionVector) -> Result<Raster> {
        self.check_condition(condition)?;
        generator_forward(noise, condition, &self.generator, &self.config)
    }

    /// Probability that `image` is real.
    pub fn discriminate(&self, image: &Raster, condition: &ConditionVector) -> Result<f64> {
        self.check_condition(condition)?;
        super::model::discriminator_forward(image, condition, &self.discriminator, &self.config)
    }

    fn check_condition(&self, condition: &ConditionVector) -> Result<()> {
        if condition.country_onehot.len() != self.vocabularies.country.len()
            || condition.style_onehot.len() != self.vocabularies.style.len()
        {
            return Err(Error::Shape(format!(
                "condition lengths ({}, {}) for vocabularies ({}, {})",
                condition.country_onehot.len(),
                condition.style_onehot.len(),
                self.vocabularies.country.len(),
                self.vocabularies.style.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = GanMeta {
            config: self.config.clone(),
            vocabularies: self.vocabularies.clone(),
            adam_g: self.optimizer_g.config.clone(),
            adam_g_step: self.optimizer_g.step,
            adam_d: self.optimizer_d.config.clone(),
            adam_d_step: self.optimizer_d.step,
            rng: self.rng.clone(),
            steps_done: self.steps_done,
        };
        checkpoint::write(
            dir,
            "gan",
            &[
                ("generator", &self.generator),
                ("discriminator", &self.discriminator),
                ("adam_g_m", &self.optimizer_g.first),
                ("adam_g_v", &self.optimizer_g.second),
                ("adam_d_m", &self.optimizer_d.first),
                ("adam_d_v", &self.optimizer_d.second),
            ],
            serde_json::to_value(meta)?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (header, mut groups) = checkpoint::read(dir, "gan")?;
        let meta: GanMeta = serde_json::from_value(header.meta)?;
        meta.config.validate()?;
        let cl = meta.vocabularies.condition_len();
        let mut probe = ChaCha8Rng::seed_from_u64(0);
        let generator = checkpoint::take_group(&mut groups, "generator");
        check_shapes(
            dir,
            &meta.config.init_generator(cl, &mut probe)?,
            &generator,
        )?;
        let discriminator = checkpoint::take_group(&mut groups, "discriminator");
        check_shapes(
            dir,
            &meta.config.init_discriminator(cl, &mut probe)?,
            &discriminator,
        )?;
        Ok(Self {
            generator,
            discriminator,
            optimizer_g: Adam {
                config: meta.adam_g,
                step: meta.adam_g_step,
                first: checkpoint::take_group(&mut groups, "adam_g_m"),
                second: checkpoint::take_group(&mut groups, "adam_g_v"),
            },
            optimizer_d: Adam {
                config: meta.adam_d,
                step: meta.adam_d_step,
                first: checkpoint::take_group(&mut groups, "adam_d_m"),
                second: checkpoint::take_group(&mut groups, "adam_d_v"),
            },
            config: meta.config,
            vocabularies: meta.vocabularies,
            rng: meta.rng,
            steps_done: meta.steps_done,
        })
    }
}

/// Train from scratch for `config.steps` steps.
pub fn train(corpus: &Corpus, config: &GanConfig) -> Result<(GanCheckpoint, Vec<GanLogRow>)> {
    let ckpt = GanCheckpoint::initialize(config, corpus.vocabularies())?;
    continue_gan(ckpt, corpus, config.steps)
}

fn divergence(step: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        step,
        detail: detail.into(),
    }
}

/// Run `steps` further alternating updates: one discriminator step, then
/// one generator step, per batch.
pub fn continue_gan(
    mut ckpt: GanCheckpoint,
    corpus: &Corpus,
    steps: usize,
) -> Result<(GanCheckpoint, Vec<GanLogRow>)> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let config = ckpt.config.clone();
    let side = config.image_side;
    if let Some(r) = corpus.records.iter().find(|r| r.side() != side) {
        return Err(Error::Shape(format!(
            "record {} has side {}, config expects {side}",
            r.source_path,
            r.side()
        )));
    }
    let vocab = ckpt.vocabularies.clone();
    let conditions: Vec<ConditionVector> = corpus
        .records
        .iter()
        .map(|r| vocab.encode(&r.country_label, &r.style_label))
        .collect::<Result<_>>()?;
    let cl = vocab.condition_len();
    let batch = config.batch_size;
    let noise_shape = [batch, config.noise_channels, side, side];
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(steps);

    for _ in 0..steps {
        let step = ckpt.steps_done;
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut ckpt.rng);
                order.reverse();
            }
            picks.push(order.pop().expect("refilled above"));
        }
        let reals: Vec<Raster> = picks
            .iter()
            .map(|&i| {
                let img = &corpus.records[i].pixels;
                if config.flip_augment && ckpt.rng.random_bool(0.5) {
                    img.flip_horizontal()
                } else {
                    img.clone()
                }
            })
            .collect();
        let conds: Vec<ConditionVector> = picks.iter().map(|&i| conditions[i].clone()).collect();
        let real_input = discriminator_input(&Raster::batch_to_tensor::<f32>(&reals)?, &conds)?;

        // Discriminator step: generator frozen.
        let z: Tensor<f32> = normal_tensor(&mut ckpt.rng, &noise_shape, 1.0);
        let mut g = Graph::new();
        let gen_bound = ckpt.generator.bind(&mut g, false);
        let dis_bound = ckpt.discriminator.bind(&mut g, true);
        let z_in = g.constant(generator_input(&z, &conds)?);
        let cond_in = g.constant(condition_matrix(&conds)?);
        let fake = generator_graph(&mut g, z_in, cond_in, &gen_bound, &config)?;
        let planes = g.constant(super::model::condition_planes(&conds, side)?);
        let fake_in = g.concat_channels(&[fake, planes])?;
        let real_in = g.constant(real_input);
        let both = g.concat_batch(&[real_in, fake_in])?;
        let logits = discriminator_graph(&mut g, both, cl, &dis_bound, &config)?;
        let mut targets = vec![1.0f32; batch];
        targets.extend(std::iter::repeat_n(0.0, batch));
        // Mean over 2B samples; doubled to give E[-log D(x)] + E[-log(1 - D(G(z)))].
        let bce = g.bce_with_logits(logits, targets, None)?;
        let d_loss = g.scale(bce, 2.0);
        let d_value = f64::from(g.value(d_loss).data()[0]);
        if !d_value.is_finite() {
            return Err(divergence(step, format!("discriminator loss {d_value}")));
        }
        let mut grads = g.backward(d_loss)?;
        let grads = dis_bound.gradients(&g, &mut grads);
        ckpt.optimizer_d.update(&mut ckpt.discriminator, &grads)?;

        // Generator step: discriminator frozen, fresh noise.
        let z: Tensor<f32> = normal_tensor(&mut ckpt.rng, &noise_shape, 1.0);
        let mut g = Graph::new();
        let gen_bound = ckpt.generator.bind(&mut g, true);
        let dis_bound = ckpt.discriminator.bind(&mut g, false);
        let z_in = g.constant(generator_input(&z, &conds)?);
        let cond_in = g.constant(condition_matrix(&conds)?);
        let fake = generator_graph(&mut g, z_in, cond_in, &gen_bound, &config)?;
        let planes = g.constant(super::model::condition_planes(&conds, side)?);
        let fake_in = g.concat_channels(&[fake, planes])?;
        let logits = discriminator_graph(&mut g, fake_in, cl, &dis_bound, &config)?;
        let g_loss = g.bce_with_logits(logits, vec![1.0; batch], None)?;
        let g_value = f64::from(g.value(g_loss).data()[0]);
        if !g_value.is_finite() {
            return Err(divergence(step, format!("generator loss {g_value}")));
        }
        let mut grads = g.backward(g_loss)?;
        let grads = gen_bound.gradients(&g, &mut grads);
        ckpt.optimizer_g.update(&mut ckpt.generator, &grads)?;

        if !ckpt.generator.all_finite() || !ckpt.discriminator.all_finite() {
            return Err(divergence(step, "non-finite parameters"));
        }
        ckpt.steps_done += 1;
        log.push(GanLogRow {
            step,
            d_loss: d_value,
            g_loss: g_value,
        });
    }
    Ok((ckpt, log))
}

/// One image per condition, noise drawn in order from a stream seeded by `seed`.
pub fn sample_conditions(
    ckpt: &GanCheckpoint,
    conditions: &[ConditionVector],
    seed: u64,
) -> Result<Vec<Raster>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [
        1,
        ckpt.config.noise_channels,
        ckpt.config.image_side,
        ckpt.config.image_side,
    ];
    conditions
        .iter()
        .map(|c| {
            let z: Tensor<f32> = normal_tensor(&mut rng, &shape, 1.0);
            ckpt.generate(&z, c)
        })
        .collect()
}

/// `n` images under one condition.
pub fn sample(
    ckpt: &GanCheckpoint,
    n: usize,
    condition: &ConditionVector,
    seed: u64,
) -> Result<Vec<Raster>> {
    if n == 0 {
        return Err(Error::Range("sample count must be at least 1".into()));
    }
    sample_conditions(ckpt, &vec![condition.clone(); n], seed)
}

/// Conditions cycling through every (country, style) pair, country fastest.
pub fn cycle_conditions(vocabularies: &Vocabularies, n: usize) -> Result<Vec<ConditionVector>> {
    let (nc, ns) = (vocabularies.country.len(), vocabularies.style.len());
    if nc == 0 || ns == 0 {
        return Err(Error::Config("empty label vocabulary".into()));
    }
    (0..n)
        .map(|i| ConditionVector::from_indices(i % nc, nc, (i / nc) % ns, ns))
        .collect()
}

/// Condition of every record, under the corpus vocabularies.
pub fn corpus_conditions(corpus: &Corpus) -> Result<Vec<ConditionVector>> {
    corpus
        .records
        .iter()
        .map(|r| encode_condition(r, corpus))
        .collect()
}
