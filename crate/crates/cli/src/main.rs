use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impasto::atelier::{compose_mosaic, render_frames, FrameSchedule, MosaicSpec};
use impasto::corpus::{self, ConditionVector};
use impasto::gradseq::{
    default_start, embed, read_ordering, sequence, write_ordering, EmbedConfig, Ordering,
};
use impasto::pipeline::stages::{
    extract_features, features_to_jsonl, graph_from_features, ingest, list_images, load_rasters,
    read_features, read_json, save_rasters, write_json, write_toy_corpus, GraphFile,
};
use impasto::pipeline::{run_pipeline, PipelineConfig};
use impasto::raster::Raster;
use impasto::sagan::{self, GanCheckpoint, GanConfig};
use impasto::sasr::{self, SrCheckpoint, SrConfig};
use impasto::{Error, Result};

#[derive(Parser)]
#[command(
    name = "impasto",
    version,
    about = "Conditional generative painting pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize manifest images to a square side and write a normalized corpus.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one JSON style record per image.
    ExtractFeatures {
        /// Image files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Dominant colors per image.
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the conditional GAN on a manifest.
    TrainGan {
        #[arg(long)]
        manifest: PathBuf,
        /// GanConfig JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from this checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: GanOverrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw images from a GAN checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 196)]
        count: usize,
        /// Fix the country label; cycles through all labels when omitted.
        #[arg(long, requires = "style")]
        country: Option<String>,
        #[arg(long, requires = "country")]
        style: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the super-resolution network on a manifest.
    TrainSr {
        #[arg(long)]
        manifest: PathBuf,
        /// Side the manifest images are resized to.
        #[arg(long, default_value_t = 64)]
        side: usize,
        /// SrConfig JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction held out for the PSNR report.
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upscale one image with a trained checkpoint.
    SuperResolve {
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Build the symmetrized kNN style graph from extracted features.
    BuildGraph {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the graph and write the gradual-change ordering.
    Sequence {
        #[arg(long)]
        graph: PathBuf,
        /// Start node; defaults to the node nearest the embedding centroid.
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Arrange images in ordering order as a grid.
    Compose {
        #[command(flatten)]
        layout: LayoutArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the cross-fading frame sequence.
    Render {
        #[command(flatten)]
        layout: LayoutArgs,
        #[arg(long, default_value_t = 24)]
        fps: u32,
        #[arg(long, default_value_t = 24)]
        frames_per_transition: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// All tiles change together instead of with seeded phase offsets.
        #[arg(long)]
        synchronous: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage end to end.
    Run {
        /// PipelineConfig JSON.
        #[arg(long, conflicts_with = "profile")]
        config: Option<PathBuf>,
        /// Built-in profile: toy or default.
        #[arg(long)]
        profile: Option<String>,
        /// Corpus manifest; the toy profile writes a synthetic one when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gan_steps: Option<usize>,
        #[arg(long)]
        sr_steps: Option<usize>,
        #[arg(long)]
        reuse_gan: Option<PathBuf>,
        #[arg(long)]
        reuse_sr: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic spiked-disk corpus with a manifest.
    MakeToyCorpus {
        #[arg(long, default_value_t = 60)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GanOverrides {
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    noise_channels: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LayoutArgs {
    /// Directory (or files) holding the images to arrange.
    #[arg(long, required = true, num_args = 1..)]
    images: Vec<PathBuf>,
    /// ordering.json; images are used in listing order when omitted.
    #[arg(long)]
    ordering: Option<PathBuf>,
    #[arg(long, default_value_t = 14)]
    rows: usize,
    #[arg(long, default_value_t = 14)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    gutter: usize,
}

impl LayoutArgs {
    fn load(&self) -> Result<(Vec<Raster>, Ordering, MosaicSpec)> {
        let images = load_rasters(&list_images(&self.images)?)?;
        let first = images
            .first()
            .ok_or_else(|| Error::Config("no images found".into()))?;
        let spec = MosaicSpec {
            gutter: self.gutter,
            ..MosaicSpec::new(self.rows, self.cols, first.height())
        };
        let ordering = match &self.ordering {
            Some(p) => Ordering {
                sequence: read_ordering(p)?.order,
            },
            None => Ordering {
                sequence: (0..images.len()).collect(),
            },
        };
        if !ordering.is_permutation(images.len()) {
            return Err(Error::Config(format!(
                "ordering does not cover the {} images",
                images.len()
            )));
        }
        Ok((images, ordering, spec))
    }
}

fn apply_gan_overrides(cfg: &mut GanConfig, o: &GanOverrides) {
    if let Some(v) = o.side {
        cfg.image_side = v;
    }
    if let Some(v) = o.depth {
        cfg.depth = v;
    }
    if let Some(v) = o.base_channels {
        cfg.base_channels = v;
    }
    if let Some(v) = o.noise_channels {
        cfg.noise_channels = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn stage_name(command: &Command) -> &'static str {
    match command {
        Command::Ingest { .. } => "ingest",
        Command::ExtractFeatures { .. } => "extract-features",
        Command::TrainGan { .. } => "train-gan",
        Command::Sample { .. } => "sample",
        Command::TrainSr { .. } => "train-sr",
        Command::SuperResolve { .. } => "super-resolve",
        Command::BuildGraph { .. } => "build-graph",
        Command::Sequence { .. } => "sequence",
        Command::Compose { .. } => "compose",
        Command::Render { .. } => "render",
        Command::Run { .. } => "run",
        Command::MakeToyCorpus { .. } => "make-toy-corpus",
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            manifest,
            side,
            out,
        } => {
            let corpus = ingest(&manifest, side, &out)?;
            eprintln!("ingested {} images into {}", corpus.len(), out.display());
        }
        Command::ExtractFeatures {
            inputs,
            k,
            seed,
            out,
        } => {
            let records = extract_features(&list_images(&inputs)?, k, seed)?;
            let text = features_to_jsonl(&records)?;
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::TrainGan {
            manifest,
            config,
            resume,
            overrides,
            out,
        } => {
            let (ckpt, log) = match resume {
                Some(dir) => {
                    let ckpt = GanCheckpoint::load(&dir)?;
                    let corpus = corpus::load_manifest(&manifest, ckpt.config.image_side)?;
                    let steps = overrides.steps.unwrap_or(ckpt.config.steps);
                    sagan::continue_gan(ckpt, &corpus, steps)?
                }
                None => {
                    let mut cfg: GanConfig = match &config {
                        Some(p) => read_json(p)?,
                        None => GanConfig::default(),
                    };
                    apply_gan_overrides(&mut cfg, &overrides);
                    cfg.validate()?;
                    let corpus = corpus::load_manifest(&manifest, cfg.image_side)?;
                    sagan::train(&corpus, &cfg)?
                }
            };
            ckpt.save(&out)?;
            sagan::write_log(&out.join("log.csv"), &log)?;
            if let Some(last) = log.last() {
                eprintln!(
                    "step {}: d_loss {:.4} g_loss {:.4}",
                    last.step, last.d_loss, last.g_loss
                );
            }
        }
        Command::Sample {
            checkpoint,
            count,
            country,
            style,
            seed,
            out,
        } => {
            let ckpt = GanCheckpoint::load(&checkpoint)?;
            let conditions: Vec<ConditionVector> = match (country, style) {
                (Some(c), Some(s)) => vec![ckpt.vocabularies.encode(&c, &s)?; count],
                _ => sagan::cycle_conditions(&ckpt.vocabularies, count)?,
            };
            let images = sagan::sample_conditions(&ckpt, &conditions, seed)?;
            save_rasters(&out, "sample", &images)?;
            eprintln!("wrote {} samples to {}", images.len(), out.display());
        }
        Command::TrainSr {
            manifest,
            side,
            config,
            resume,
            scale,
            steps,
            seed,
            holdout,
            out,
        } => {
            let corpus = corpus::load_manifest(&manifest, side)?;
            let (train, held) = corpus::split(&corpus, holdout, seed.unwrap_or(0))?;
            let (ckpt, log) = match resume {
                Some(dir) => {
                    let ckpt = SrCheckpoint::load(&dir)?;
                    let n = steps.unwrap_or(ckpt.config.steps);
                    sasr::continue_sr(ckpt, &train, n)?
                }
                None => {
                    let mut cfg: SrConfig = match &config {
                        Some(p) => read_json(p)?,
                        None => SrConfig::default(),
                    };
                    cfg.scale = scale.unwrap_or(cfg.scale);
                    cfg.steps = steps.unwrap_or(cfg.steps);
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    sasr::train_sr(&train, &cfg)?
                }
            };
            ckpt.save(&out)?;
            write_json(&out.join("log.json"), &log)?;
            if !held.is_empty() {
                let images: Vec<Raster> = held.records.iter().map(|r| r.pixels.clone()).collect();
                let eval = impasto::pipeline::stages::evaluate_sr(&ckpt, &images)?;
                write_json(&out.join("eval.json"), &eval)?;
                eprintln!(
                    "held-out PSNR {:.3} dB vs bicubic {:.3} dB (delta {:+.3})",
                    eval.psnr_model, eval.psnr_bicubic, eval.psnr_delta
                );
            }
        }
        Command::SuperResolve {
            scale,
            checkpoint,
            input,
            output,
        } => {
            let ckpt = SrCheckpoint::load(&checkpoint)?;
            if ckpt.config.scale != scale {
                return Err(Error::Config(format!(
                    "checkpoint was trained for x{}, asked for x{scale}",
                    ckpt.config.scale
                )));
            }
            ckpt.super_resolve(&Raster::load(&input)?)?
                .save_png(&output)?;
        }
        Command::BuildGraph { features, k, out } => {
            let records = read_features(&features)?;
            write_json(&out, &graph_from_features(&records, k)?)?;
        }
        Command::Sequence {
            graph,
            start,
            hidden,
            dims,
            steps,
            seed,
            out,
        } => {
            let file: GraphFile = read_json(&graph)?;
            let graph = file.to_graph()?;
            let defaults = EmbedConfig::default();
            let cfg = EmbedConfig {
                hidden_dim: hidden.unwrap_or(defaults.hidden_dim),
                out_dim: dims.unwrap_or(defaults.out_dim),
                steps: steps.unwrap_or(defaults.steps),
                seed: seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let (embedding, _) = embed(&graph, &cfg)?;
            let start = start.unwrap_or_else(|| default_start(&embedding));
            let ordering = sequence(&embedding, start)?;
            write_ordering(&out, &ordering, embedding.dims())?;
        }
        Command::Compose { layout, out } => {
            let (images, ordering, spec) = layout.load()?;
            let tiles: Vec<Raster> = ordering
                .sequence
                .iter()
                .map(|&i| images[i].clone())
                .collect();
            compose_mosaic(&tiles, &spec)?.save_png(&out)?;
        }
        Command::Render {
            layout,
            fps,
            frames_per_transition,
            seed,
            synchronous,
            out,
        } => {
            let (images, ordering, spec) = layout.load()?;
            let schedule = FrameSchedule::new(ordering, frames_per_transition, seed, synchronous)?;
            let manifest = render_frames(&images, &schedule, &spec, fps, &out)?;
            eprintln!(
                "rendered {} frames to {}",
                manifest.frame_count,
                out.display()
            );
        }
        Command::Run {
            config,
            profile,
            manifest,
            seed,
            gan_steps,
            sr_steps,
            reuse_gan,
            reuse_sr,
            out,
        } => {
            let mut cfg = match (&config, &profile) {
                (Some(p), _) => PipelineConfig::load(p)?,
                (None, Some(name)) => PipelineConfig::profile(name)?,
                (None, None) => PipelineConfig::default(),
            };
            match manifest {
                Some(m) => cfg.manifest_path = m,
                None if config.is_none() && profile.as_deref() == Some("toy") => {
                    let dir = out.join("toy_corpus");
                    cfg.manifest_path = write_toy_corpus(&dir, 60, cfg.gan.image_side, cfg.seed)?;
                }
                None => {}
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = gan_steps {
                cfg.gan.steps = s;
            }
            if let Some(s) = sr_steps {
                cfg.sr.steps = s;
            }
            cfg.reuse_gan_checkpoint = reuse_gan.or(cfg.reuse_gan_checkpoint);
            cfg.reuse_sr_checkpoint = reuse_sr.or(cfg.reuse_sr_checkpoint);
            let report = run_pipeline(&cfg, &out)?;
            for s in &report.stages {
                eprintln!(
                    "{:<17} {:>9.2}s{}",
                    s.stage,
                    s.seconds,
                    if s.cached { " (cached)" } else { "" }
                );
            }
            eprintln!("report: {}", out.join("report.json").display());
        }
        Command::MakeToyCorpus {
            count,
            side,
            seed,
            out,
        } => {
            let manifest = write_toy_corpus(&out, count, side, seed)?;
            eprintln!("wrote {count} images; manifest {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                tagged @ Error::Stage { .. } => tagged,
                other => other.in_stage(stage),
            };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
