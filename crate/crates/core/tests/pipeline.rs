mod common;

use std::path::Path;

use common::*;
use impasto::atelier::MosaicSpec;
use impasto::gradseq::{read_ordering, EmbedConfig};
use impasto::pipeline::stages::write_toy_corpus;
use impasto::pipeline::{
    run_pipeline, FeatureConfig, GraphConfig, PipelineConfig, RunReport, ScheduleConfig,
};
use impasto::sagan::GanConfig;
use impasto::sasr::SrConfig;
use impasto::Error;

fn miniature(manifest: &Path) -> PipelineConfig {
    PipelineConfig {
        manifest_path: manifest.to_path_buf(),
        gan: GanConfig {
            image_side: 16,
            noise_channels: 2,
            base_channels: 4,
            depth: 2,
            batch_size: 2,
            steps: 3,
            ..GanConfig::default()
        },
        sample_count: 4,
        sr: SrConfig {
            scale: 2,
            conv_layers: 2,
            channels: 8,
            attention_reduction: 4,
            learning_rate: 1e-3,
            steps: 3,
            batch_size: 2,
            ..SrConfig::default()
        },
        sr_holdout_fraction: 0.25,
        features: FeatureConfig { k: 3 },
        graph: GraphConfig {
            k: 2,
            embed: EmbedConfig {
                hidden_dim: 8,
                out_dim: 2,
                steps: 20,
                ..EmbedConfig::default()
            },
        },
        mosaic: MosaicSpec::new(2, 2, 32),
        schedule: ScheduleConfig {
            frames_per_transition: 2,
            fps: 12,
            synchronous: false,
        },
        seed: 4,
        reuse_gan_checkpoint: None,
        reuse_sr_checkpoint: None,
    }
}

fn downstream_hashes(run: &Path) -> Vec<String> {
    vec![
        hash_dir(&run.join("samples")),
        hash_dir(&run.join("paintings")),
        sha256_hex(&std::fs::read(run.join("ordering.json")).unwrap()),
        sha256_hex(&std::fs::read(run.join("mosaic.png")).unwrap()),
        hash_dir(&run.join("frames")),
    ]
}

fn fresh(report: &RunReport) -> Vec<&str> {
    report
        .stages
        .iter()
        .filter(|s| !s.cached)
        .map(|s| s.stage.as_str())
        .collect()
}

#[test]
fn miniature_run_produces_every_artifact_and_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(&tmp.path().join("corpus"), 9, 16, 1).unwrap();
    let cfg = miniature(&manifest);
    let run = tmp.path().join("run");
    let report = run_pipeline(&cfg, &run).unwrap();
    assert_eq!(report.stages.len(), 10);
    assert_eq!(fresh(&report).len(), 10);
    let ordering = read_ordering(&run.join("ordering.json")).unwrap();
    let mut sorted = ordering.order.clone();
    sorted.sort();
    assert_eq!(sorted, vec![0, 1, 2, 3]);
    assert_eq!(ordering.embedding_dims, 2);
    let mosaic = impasto::raster::Raster::load(&run.join("mosaic.png")).unwrap();
    assert_eq!((mosaic.height(), mosaic.width()), (64, 64));
    assert_eq!(
        std::fs::read_dir(run.join("samples"))
            .unwrap()
            .filter(|e| e
                .as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png"))
            .count(),
        4
    );
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved["config"]["seed"], 4);
    assert_eq!(saved["seeds"]["global"], 4);
    assert!(saved["stages"][4]["summary"]["evaluation"]["psnr_delta"].is_number());

    let again = run_pipeline(&cfg, &run).unwrap();
    assert!(fresh(&again).is_empty());

    // Changing only the frame schedule reruns only rendering.
    let mut tweaked = cfg.clone();
    tweaked.schedule.frames_per_transition = 3;
    let third = run_pipeline(&tweaked, &run).unwrap();
    assert_eq!(fresh(&third), vec!["render"]);
}

#[test]
fn reused_checkpoints_give_identical_downstream_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(&tmp.path().join("corpus"), 9, 16, 2).unwrap();
    let base = tmp.path().join("base");
    run_pipeline(&miniature(&manifest), &base).unwrap();
    let mut cfg = miniature(&manifest);
    cfg.reuse_gan_checkpoint = Some(base.join("gan/checkpoint"));
    cfg.reuse_sr_checkpoint = Some(base.join("sr/checkpoint"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&cfg, &a).unwrap();
    run_pipeline(&cfg, &b).unwrap();
    assert_eq!(downstream_hashes(&a), downstream_hashes(&b));
    assert_eq!(downstream_hashes(&a), downstream_hashes(&base));
}

#[test]
fn failures_name_the_stage_and_keep_earlier_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = miniature(&tmp.path().join("missing.jsonl"));
    match run_pipeline(&cfg, &tmp.path().join("run")) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "ingest"),
        other => panic!("expected an ingest stage error, got {other:?}"),
    }

    let manifest = write_toy_corpus(&tmp.path().join("corpus"), 9, 16, 3).unwrap();
    let mut cfg = miniature(&manifest);
    cfg.reuse_gan_checkpoint = Some(tmp.path().join("no-such-checkpoint"));
    let run = tmp.path().join("run2");
    match run_pipeline(&cfg, &run) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "train-gan"),
        other => panic!("expected a train-gan stage error, got {other:?}"),
    }
    assert!(run.join("corpus/manifest.jsonl").is_file());
    assert!(run.join("features/corpus.jsonl").is_file());
}

#[test]
fn invalid_layout_is_rejected_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_toy_corpus(&tmp.path().join("corpus"), 4, 16, 0).unwrap();
    let mut cfg = miniature(&manifest);
    cfg.mosaic = MosaicSpec::new(3, 3, 32);
    assert!(matches!(
        run_pipeline(&cfg, &tmp.path().join("run")),
        Err(Error::Config(_))
    ));
    assert!(!tmp.path().join("run").exists());
}
