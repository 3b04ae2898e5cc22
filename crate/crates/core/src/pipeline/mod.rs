//! End-to-end orchestration: ingest, features, GAN training and sampling,
//! super-resolution, graph ordering, mosaic and frames.

pub mod cache;
pub mod stages;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atelier::{compose_mosaic, render_frames, FrameSchedule, MosaicSpec};
use crate::corpus::{self, Corpus};
use crate::error::{Error, Result};
use crate::gradseq::{
    default_start, embed, read_ordering, sequence, write_ordering, EmbedConfig, Ordering,
};
use crate::raster::Raster;
use crate::sagan::{self, GanCheckpoint, GanConfig};
use crate::sasr::{self, SrCheckpoint, SrConfig};
use cache::{cached, mark_done, stage_key, StageMarker};
use stages::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Dominant colors per image.
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Neighbors per node before symmetrization.
    pub k: usize,
    pub embed: EmbedConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub frames_per_transition: usize,
    pub fps: u32,
    pub synchronous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest_path: PathBuf,
    pub gan: GanConfig,
    pub sample_count: usize,
    pub sr: SrConfig,
    pub sr_holdout_fraction: f64,
    pub features: FeatureConfig,
    pub graph: GraphConfig,
    pub mosaic: MosaicSpec,
    pub schedule: ScheduleConfig,
    /// Seeds sampling, splits, k-means and tile phases.
    pub seed: u64,
    /// Use these checkpoints instead of training.
    #[serde(default)]
    pub reuse_gan_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub reuse_sr_checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    /// Paper-scale shape: 256-pixel samples, x4 super-resolution, 14 x 14 tiles of 1024.
    fn default() -> Self {
        Self {
            manifest_path: PathBuf::from("manifest.jsonl"),
            gan: GanConfig {
                image_side: 256,
                depth: 6,
                ..GanConfig::default()
            },
            sample_count: 196,
            sr: SrConfig::default(),
            sr_holdout_fraction: 0.1,
            features: FeatureConfig { k: 8 },
            graph: GraphConfig {
                k: 8,
                embed: EmbedConfig::default(),
            },
            mosaic: MosaicSpec::new(14, 14, 1024),
            schedule: ScheduleConfig {
                frames_per_transition: 24,
                fps: 24,
                synchronous: false,
            },
            seed: 0,
            reuse_gan_checkpoint: None,
            reuse_sr_checkpoint: None,
        }
    }
}

impl PipelineConfig {
    /// Desk-scale profile: 64-pixel samples, x2 super-resolution, small networks.
    pub fn toy() -> Self {
        Self {
            gan: GanConfig {
                image_side: 64,
                noise_channels: 4,
                base_channels: 8,
                depth: 4,
                batch_size: 8,
                steps: 150,
                ..GanConfig::default()
            },
            sr: SrConfig {
                scale: 2,
                conv_layers: 4,
                channels: 16,
                attention_reduction: 4,
                learning_rate: 1e-3,
                steps: 150,
                batch_size: 4,
                ..SrConfig::default()
            },
            sr_holdout_fraction: 0.2,
            features: FeatureConfig { k: 4 },
            graph: GraphConfig {
                k: 8,
                embed: EmbedConfig {
                    steps: 200,
                    ..EmbedConfig::default()
                },
            },
            mosaic: MosaicSpec::new(14, 14, 128),
            schedule: ScheduleConfig {
                frames_per_transition: 2,
                fps: 24,
                synchronous: false,
            },
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "default" => Ok(Self::default()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (toy, default)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        self.sr.validate()?;
        self.mosaic.validate()?;
        if self.sample_count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if self.mosaic.tiles() != self.sample_count {
            return Err(Error::Config(format!(
                "{}x{} mosaic for {} samples",
                self.mosaic.rows, self.mosaic.cols, self.sample_count
            )));
        }
        let painted = self.gan.image_side * self.sr.scale;
        if self.mosaic.tile_side != painted {
            return Err(Error::Config(format!(
                "mosaic tile side {} but paintings are {painted} pixels",
                self.mosaic.tile_side
            )));
        }
        if self.features.k == 0 {
            return Err(Error::Config("feature k must be at least 1".into()));
        }
        if self.sample_count > 1 && (self.graph.k == 0 || self.graph.k >= self.sample_count) {
            return Err(Error::Config(format!(
                "graph k = {} outside 1..{}",
                self.graph.k, self.sample_count
            )));
        }
        if self.schedule.frames_per_transition == 0 || self.schedule.fps == 0 {
            return Err(Error::Config(
                "frames per transition and fps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        if cfg.manifest_path.is_relative() {
            cfg.manifest_path = path
                .parent()
                .unwrap_or(Path::new("."))
                .join(&cfg.manifest_path);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub seconds: f64,
    pub cached: bool,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub gan: u64,
    pub sr: u64,
    pub embed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub stages: Vec<StageReport>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn corpus_manifest(&self) -> PathBuf {
        self.corpus().join("manifest.jsonl")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn gan(&self) -> PathBuf {
        self.root.join("gan")
    }
    pub fn gan_checkpoint(&self) -> PathBuf {
        self.gan().join("checkpoint")
    }
    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }
    pub fn sr(&self) -> PathBuf {
        self.root.join("sr")
    }
    pub fn sr_checkpoint(&self) -> PathBuf {
        self.sr().join("checkpoint")
    }
    pub fn paintings(&self) -> PathBuf {
        self.root.join("paintings")
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph")
    }
    pub fn sequence(&self) -> PathBuf {
        self.root.join("sequence")
    }
    pub fn ordering(&self) -> PathBuf {
        self.root.join("ordering.json")
    }
    pub fn compose(&self) -> PathBuf {
        self.root.join("compose")
    }
    pub fn mosaic(&self) -> PathBuf {
        self.root.join("mosaic.png")
    }
    pub fn frames(&self) -> PathBuf {
        self.root.join("frames")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

struct Runner {
    stages: Vec<StageReport>,
}

impl Runner {
    /// Run `body` in a fresh `dir` unless a marker with the same key exists.
    fn stage<F>(
        &mut self,
        name: &'static str,
        dir: &Path,
        config: serde_json::Value,
        inputs: &[&Path],
        body: F,
    ) -> Result<()>
    where
        F: FnOnce() -> Result<serde_json::Value>,
    {
        let wrap = |e: Error| e.in_stage(name);
        let key = stage_key(name, &config, inputs).map_err(wrap)?;
        if let Some(marker) = cached(dir, &key) {
            self.stages.push(StageReport {
                stage: name.into(),
                seconds: marker.seconds,
                cached: true,
                summary: marker.summary,
            });
            return Ok(());
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
        }
        std::fs::create_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
        let start = Instant::now();
        let summary = body().map_err(wrap)?;
        let marker = StageMarker {
            stage: name.into(),
            key,
            seconds: start.elapsed().as_secs_f64(),
            summary,
        };
        mark_done(dir, &marker).map_err(wrap)?;
        self.stages.push(StageReport {
            stage: name.into(),
            seconds: marker.seconds,
            cached: false,
            summary: marker.summary,
        });
        Ok(())
    }
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    std::fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in std::fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let entry = entry.map_err(|e| Error::io(from, e))?;
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}

fn load_corpus(layout: &RunLayout, side: usize) -> Result<Corpus> {
    corpus::load_manifest(&layout.corpus_manifest(), side)
}

fn last_mean(values: impl Iterator<Item = f64>, window: usize) -> f64 {
    let v: Vec<f64> = values.collect();
    let tail = &v[v.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

/// Execute every stage in order under `run_dir`, reusing stages whose
/// inputs and configuration are unchanged, and write `report.json`.
pub fn run_pipeline(config: &PipelineConfig, run_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let layout = RunLayout::new(run_dir);
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let started = Instant::now();
    let mut runner = Runner { stages: Vec::new() };
    let side = config.gan.image_side;

    let manifest_files =
        manifest_inputs(&config.manifest_path).map_err(|e| e.in_stage("ingest"))?;
    let manifest_refs: Vec<&Path> = manifest_files.iter().map(PathBuf::as_path).collect();
    runner.stage(
        "ingest",
        &layout.corpus(),
        json!({ "side": side }),
        &manifest_refs,
        || {
            let corpus = ingest(&config.manifest_path, side, &layout.corpus())?;
            Ok(json!({
                "records": corpus.len(),
                "countries": corpus.country_vocab,
                "styles": corpus.style_vocab,
            }))
        },
    )?;

    let corpus_dir = layout.corpus();
    runner.stage(
        "extract-features",
        &layout.features(),
        json!({ "k": config.features.k, "seed": config.seed }),
        &[&corpus_dir],
        || {
            let images = list_images(&[corpus_dir.join("images")])?;
            let records = extract_features(&images, config.features.k, config.seed)?;
            write_features(&layout.features().join("corpus.jsonl"), &records)?;
            Ok(json!({ "images": records.len(), "dims": records.first().map_or(0, |r| r.style_vector.len()) }))
        },
    )?;

    let reuse_gan: Vec<&Path> = config
        .reuse_gan_checkpoint
        .iter()
        .map(PathBuf::as_path)
        .collect();
    runner.stage(
        "train-gan",
        &layout.gan(),
        json!({ "gan": config.gan, "reuse": config.reuse_gan_checkpoint.is_some() }),
        &[&[corpus_dir.as_path()], reuse_gan.as_slice()].concat(),
        || {
            if let Some(src) = &config.reuse_gan_checkpoint {
                let ckpt = GanCheckpoint::load(src)?;
                ckpt.save(&layout.gan_checkpoint())?;
                return Ok(json!({ "reused": src, "steps": ckpt.steps_done }));
            }
            let corpus = load_corpus(&layout, side)?;
            let (ckpt, log) = sagan::train(&corpus, &config.gan)?;
            ckpt.save(&layout.gan_checkpoint())?;
            sagan::write_log(&layout.gan().join("log.csv"), &log)?;
            Ok(json!({
                "steps": log.len(),
                "final_d_loss": log.last().map(|r| r.d_loss),
                "final_g_loss": log.last().map(|r| r.g_loss),
                "mean_d_loss_last_100": last_mean(log.iter().map(|r| r.d_loss), 100),
                "mean_g_loss_last_100": last_mean(log.iter().map(|r| r.g_loss), 100),
            }))
        },
    )?;

    let gan_ckpt_dir = layout.gan_checkpoint();
    runner.stage(
        "sample",
        &layout.samples(),
        json!({ "count": config.sample_count, "seed": config.seed }),
        &[&gan_ckpt_dir],
        || {
            let ckpt = GanCheckpoint::load(&gan_ckpt_dir)?;
            let conditions = sagan::cycle_conditions(&ckpt.vocabularies, config.sample_count)?;
            let images = sagan::sample_conditions(&ckpt, &conditions, config.seed)?;
            save_rasters(&layout.samples(), "sample", &images)?;
            let labels: Vec<(&str, &str)> = conditions
                .iter()
                .map(|c| ckpt.vocabularies.decode(c).unwrap_or(("", "")))
                .collect();
            write_json(&layout.samples().join("conditions.json"), &labels)?;
            Ok(json!({ "samples": images.len() }))
        },
    )?;

    let reuse_sr: Vec<&Path> = config
        .reuse_sr_checkpoint
        .iter()
        .map(PathBuf::as_path)
        .collect();
    runner.stage(
        "train-sr",
        &layout.sr(),
        json!({ "sr": config.sr, "holdout": config.sr_holdout_fraction, "seed": config.seed, "reuse": config.reuse_sr_checkpoint.is_some() }),
        &[&[corpus_dir.as_path()], reuse_sr.as_slice()].concat(),
        || {
            let corpus = load_corpus(&layout, side)?;
            let (train, holdout) = corpus::split(&corpus, config.sr_holdout_fraction, config.seed)?;
            let (ckpt, summary) = if let Some(src) = &config.reuse_sr_checkpoint {
                (SrCheckpoint::load(src)?, json!({ "reused": src }))
            } else {
                let (ckpt, log) = sasr::train_sr(&train, &config.sr)?;
                let mut csv = String::from("step,loss,degradation_loss\n");
                for r in &log {
                    csv.push_str(&format!("{},{},{}\n", r.step, r.loss, r.degradation_loss));
                }
                let path = layout.sr().join("log.csv");
                std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
                (ckpt, json!({ "steps": log.len(), "final_loss": log.last().map(|r| r.loss) }))
            };
            ckpt.save(&layout.sr_checkpoint())?;
            let eval_set = if holdout.is_empty() { &train } else { &holdout };
            let images: Vec<Raster> = eval_set.records.iter().map(|r| r.pixels.clone()).collect();
            let eval = evaluate_sr(&ckpt, &images)?;
            write_json(&layout.sr().join("eval.json"), &eval)?;
            Ok(json!({ "training": summary, "evaluation": eval, "held_out": !holdout.is_empty() }))
        },
    )?;

    let (samples_dir, sr_ckpt_dir) = (layout.samples(), layout.sr_checkpoint());
    runner.stage(
        "super-resolve",
        &layout.paintings(),
        json!({}),
        &[&samples_dir, &sr_ckpt_dir],
        || {
            let ckpt = SrCheckpoint::load(&sr_ckpt_dir)?;
            let inputs = list_images(&[samples_dir.clone()])?;
            let mut out = Vec::with_capacity(inputs.len());
            for p in &inputs {
                out.push(ckpt.super_resolve(&Raster::load(p)?)?);
            }
            save_rasters(&layout.paintings(), "painting", &out)?;
            Ok(json!({ "paintings": out.len(), "side": out.first().map_or(0, Raster::height) }))
        },
    )?;

    let paintings_dir = layout.paintings();
    runner.stage(
        "build-graph",
        &layout.graph(),
        json!({ "features": config.features, "k": config.graph.k, "seed": config.seed }),
        &[&paintings_dir],
        || {
            let images = list_images(&[paintings_dir.clone()])?;
            let records = extract_features(&images, config.features.k, config.seed)?;
            write_features(&layout.graph().join("features.jsonl"), &records)?;
            let k = config.graph.k.min(records.len().saturating_sub(1)).max(1);
            let graph = graph_from_features(&records, k)?;
            write_json(&layout.graph().join("graph.json"), &graph)?;
            let edges: usize = graph
                .adjacency
                .iter()
                .flatten()
                .map(|&a| a as usize)
                .sum::<usize>()
                / 2;
            Ok(json!({ "nodes": records.len(), "edges": edges }))
        },
    )?;

    let graph_dir = layout.graph();
    runner.stage(
        "sequence",
        &layout.sequence(),
        json!({ "embed": config.graph.embed }),
        &[&graph_dir],
        || {
            let graph: GraphFile = read_json(&graph_dir.join("graph.json"))?;
            let graph = graph.to_graph()?;
            let (embedding, losses) = embed(&graph, &config.graph.embed)?;
            let start = default_start(&embedding);
            let ordering = sequence(&embedding, start)?;
            write_ordering(
                &layout.sequence().join("ordering.json"),
                &ordering,
                embedding.dims(),
            )?;
            let rows: Vec<&[f64]> = (0..embedding.len()).map(|i| embedding.row(i)).collect();
            write_json(&layout.sequence().join("embedding.json"), &rows)?;
            write_json(&layout.sequence().join("losses.json"), &losses)?;
            Ok(json!({
                "start": start,
                "initial_loss": losses.first(),
                "final_loss": losses.last(),
            }))
        },
    )?;
    let seq_ordering = layout.sequence().join("ordering.json");
    std::fs::copy(&seq_ordering, layout.ordering())
        .map_err(|e| Error::io(layout.ordering(), e).in_stage("sequence"))?;

    let load_ordering = || -> Result<Ordering> {
        Ok(Ordering {
            sequence: read_ordering(&seq_ordering)?.order,
        })
    };
    let load_paintings = || load_rasters(&list_images(&[paintings_dir.clone()])?);

    runner.stage(
        "compose",
        &layout.compose(),
        json!({ "mosaic": config.mosaic }),
        &[&paintings_dir, &seq_ordering],
        || {
            let ordering = load_ordering()?;
            let paintings = load_paintings()?;
            let tiles: Vec<Raster> = ordering
                .sequence
                .iter()
                .map(|&i| paintings[i].clone())
                .collect();
            let mosaic = compose_mosaic(&tiles, &config.mosaic)?;
            mosaic.save_png(&layout.compose().join("mosaic.png"))?;
            Ok(json!({ "height": mosaic.height(), "width": mosaic.width() }))
        },
    )?;
    std::fs::copy(layout.compose().join("mosaic.png"), layout.mosaic())
        .map_err(|e| Error::io(layout.mosaic(), e).in_stage("compose"))?;

    runner.stage(
        "render",
        &layout.frames(),
        json!({ "schedule": config.schedule, "mosaic": config.mosaic, "seed": config.seed }),
        &[&paintings_dir, &seq_ordering],
        || {
            let ordering = load_ordering()?;
            let paintings = load_paintings()?;
            let schedule = FrameSchedule::new(
                ordering,
                config.schedule.frames_per_transition,
                config.seed,
                config.schedule.synchronous,
            )?;
            let manifest = render_frames(
                &paintings,
                &schedule,
                &config.mosaic,
                config.schedule.fps,
                &layout.frames(),
            )?;
            Ok(json!({ "frames": manifest.frame_count }))
        },
    )?;

    let report = RunReport {
        config: config.clone(),
        seeds: Seeds {
            global: config.seed,
            gan: config.gan.seed,
            sr: config.sr.seed,
            embed: config.graph.embed.seed,
        },
        stages: runner.stages,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&layout.report(), &report)?;
    Ok(report)
}

/// Copy a checkpoint directory (used when re-running from saved models).
pub fn copy_checkpoint(from: &Path, to: &Path) -> Result<()> {
    copy_dir(from, to)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        PipelineConfig::toy().validate().unwrap();
        PipelineConfig::default().validate().unwrap();
        assert!(PipelineConfig::profile("nope").is_err());
    }

    #[test]
    fn mosaic_must_match_samples() {
        let mut c = PipelineConfig::toy();
        c.sample_count = 4;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.mosaic = MosaicSpec::new(2, 2, 128);
        c.graph.k = 2;
        c.validate().unwrap();
        c.mosaic.tile_side = 64;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = PipelineConfig::toy();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
