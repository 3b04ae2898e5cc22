use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::raster::Raster;
use crate::sasr::bicubic::{bicubic_downsample, resize_operators};
use crate::sasr::net::{forward_graph, sasr_forward, SasrArch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrConfig {
    pub scale: usize,
    pub conv_layers: usize,
    pub channels: usize,
    pub attention_reduction: usize,
    pub learning_rate: f64,
    pub lambda_degradation: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            conv_layers: 8,
            channels: 64,
            attention_reduction: 8,
            learning_rate: 1e-4,
            lambda_degradation: 0.1,
            steps: 3000,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be 2, 3 or 4, got {}",
                self.scale
            )));
        }
        if self.conv_layers < 2 {
            return Err(Error::Config(
                "at least 2 convolution layers required".into(),
            ));
        }
        if self.channels < 8 {
            return Err(Error::Config("at least 8 channels required".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lambda_degradation >= 0.0) || self.batch_size == 0
        {
            return Err(Error::Config(
                "learning rate and batch size must be positive".into(),
            ));
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> SasrArch {
        SasrArch {
            in_channels: 3,
            conv_layers: self.conv_layers,
            channels: self.channels,
            reduction: self.attention_reduction,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrLogRow {
    pub step: usize,
    pub loss: f64,
    pub degradation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrCheckpoint {
    pub params: ParamSet<f32>,
    pub config: SrConfig,
    pub optimizer: Adam<f32>,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct SrMeta {
    config: SrConfig,
    adam: AdamConfig,
    adam_step: u64,
    rng: ChaCha8Rng,
}

impl SrCheckpoint {
    pub fn initialize(config: &SrConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config.arch().init(&mut rng)?;
        let optimizer = Adam::new(AdamConfig::new(config.learning_rate, 0.9, 0.999), &params);
        Ok(Self {
            params,
            config: config.clone(),
            optimizer,
            rng,
        })
    }

    pub fn super_resolve(&self, image: &Raster) -> Result<Raster> {
        sasr_forward(image, &self.params, &self.config.arch())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = SrMeta {
            config: self.config.clone(),
            adam: self.optimizer.config.clone(),
            adam_step: self.optimizer.step,
            rng: self.rng.clone(),
        };
        checkpoint::write(
            dir,
            "sasr",
            &[
                ("params", &self.params),
                ("adam_m", &self.optimizer.first),
                ("adam_v", &self.optimizer.second),
            ],
            serde_json::to_value(meta)?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (header, mut groups) = checkpoint::read(dir, "sasr")?;
        let meta: SrMeta = serde_json::from_value(header.meta)?;
        let params = checkpoint::take_group(&mut groups, "params");
        let expected = meta
            .config
            .arch()
            .init::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0))?;
        check_shapes(dir, &expected, &params)?;
        let optimizer = Adam {
            config: meta.adam,
            step: meta.adam_step,
            first: checkpoint::take_group(&mut groups, "adam_m"),
            second: checkpoint::take_group(&mut groups, "adam_v"),
        };
        Ok(Self {
            params,
            config: meta.config,
            optimizer,
            rng: meta.rng,
        })
    }
}

pub(crate) fn check_shapes(
    dir: &Path,
    expected: &ParamSet<f32>,
    got: &ParamSet<f32>,
) -> Result<()> {
    let bad = |reason: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason,
    };
    if expected.len() != got.len() {
        return Err(bad(format!(
            "{} parameters, config implies {}",
            got.len(),
            expected.len()
        )));
    }
    for (name, t) in expected.iter() {
        let g = got
            .get(name)
            .map_err(|_| bad(format!("missing parameter {name}")))?;
        if g.shape() != t.shape() {
            return Err(bad(format!(
                "{name} has shape {:?}, expected {:?}",
                g.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// `(X, Y = DS(X))` pairs from the corpus.
pub fn training_pairs(corpus: &Corpus, scale: usize) -> Result<Vec<(Raster, Raster)>> {
    corpus
        .records
        .iter()
        .map(|r| Ok((r.pixels.clone(), bicubic_downsample(&r.pixels, scale)?)))
        .collect()
}

/// Train from the corpus; returns the checkpoint and one log row per step.
pub fn train_sr(corpus: &Corpus, config: &SrConfig) -> Result<(SrCheckpoint, Vec<SrLogRow>)> {
    let ckpt = SrCheckpoint::initialize(config)?;
    continue_sr(ckpt, corpus, config.steps)
}

/// Run `steps` further updates on an existing checkpoint.
pub fn continue_sr(
    mut ckpt: SrCheckpoint,
    corpus: &Corpus,
    steps: usize,
) -> Result<(SrCheckpoint, Vec<SrLogRow>)> {
    if corpus.is_empty() {
        return Err(Error::Config("super-resolution corpus is empty".into()));
    }
    let config = ckpt.config.clone();
    let pairs = training_pairs(corpus, config.scale)?;
    let arch = config.arch();
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut ckpt.rng);
                order.reverse();
            }
            batch.push(order.pop().expect("refilled above"));
        }
        let hr: Vec<Raster> = batch.iter().map(|&i| pairs[i].0.clone()).collect();
        let lr: Vec<Raster> = batch.iter().map(|&i| pairs[i].1.clone()).collect();

        let mut g = Graph::<f32>::new();
        let x = g.constant(Raster::batch_to_tensor(&lr)?);
        let target = g.constant(Raster::batch_to_tensor(&hr)?);
        let bound = ckpt.params.bind(&mut g, true);
        let z = forward_graph(&mut g, x, &bound, &arch)?;
        let fidelity = g.mse(z, target)?;
        let (h, w) = (g.shape(z)[2], g.shape(z)[3]);
        let (rows, cols) = resize_operators(h, w, h / config.scale, w / config.scale);
        let degraded = g.resample(z, rows, cols)?;
        let degradation = g.mse(degraded, x)?;
        let weighted = g.scale(degradation, config.lambda_degradation);
        let loss = g.add(fidelity, weighted)?;
        let loss_value = f64::from(g.value(loss).data()[0]);
        let degradation_value = f64::from(g.value(degradation).data()[0]);
        if !loss_value.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {loss_value}"),
            });
        }
        let mut grads = g.backward(loss)?;
        let grads = bound.gradients(&g, &mut grads);
        ckpt.optimizer.update(&mut ckpt.params, &grads)?;
        if !ckpt.params.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters".into(),
            });
        }
        log.push(SrLogRow {
            step,
            loss: loss_value,
            degradation_loss: degradation_value,
        });
    }
    Ok((ckpt, log))
}
