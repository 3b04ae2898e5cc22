//! Individual pipeline stages over explicit file paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, resolve_entry, write_manifest, Corpus, ManifestEntry};
use crate::error::{Error, Result};
use crate::gradseq::{build_graph_from_rows, StyleGraph};
use crate::palette::{style_vector, StyleLayout};
use crate::raster::Raster;
use crate::sasr::{bicubic_downsample, bicubic_upsample, psnr, SrCheckpoint};
use crate::synthetic::spiked_disk_corpus;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// PNG and JPEG files among `inputs`, directories expanded one level, sorted
/// within each directory.
pub fn list_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let is_image = |p: &Path| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
    };
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

pub fn load_rasters(paths: &[PathBuf]) -> Result<Vec<Raster>> {
    paths.iter().map(|p| Raster::load(p)).collect()
}

/// Save as `<prefix>_<index:03>.png` under `dir`.
pub fn save_rasters(dir: &Path, prefix: &str, images: &[Raster]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("{prefix}_{i:03}.png"));
            img.save_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// Write the corpus images and a relative-path manifest under `out`;
/// returns the manifest path.
pub fn write_corpus(corpus: &Corpus, out: &Path) -> Result<PathBuf> {
    let images = out.join("images");
    create_dir(&images)?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, r) in corpus.records.iter().enumerate() {
        let name = format!("img_{i:04}.png");
        r.pixels.save_png(&images.join(&name))?;
        entries.push(ManifestEntry {
            path: format!("images/{name}"),
            country: r.country_label.clone(),
            style: r.style_label.clone(),
        });
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Resize every manifest entry to `side` and write the result under `out`.
pub fn ingest(manifest: &Path, side: usize, out: &Path) -> Result<Corpus> {
    let corpus = corpus::load_manifest(manifest, side)?;
    write_corpus(&corpus, out)?;
    Ok(corpus)
}

/// Synthetic spiked-disk corpus on disk, for desk-scale runs without data.
pub fn write_toy_corpus(out: &Path, n: usize, side: usize, seed: u64) -> Result<PathBuf> {
    write_corpus(&spiked_disk_corpus(n, side, seed)?, out)
}

/// Manifest file and every image it references, for content hashing.
pub fn manifest_inputs(manifest: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![manifest.to_path_buf()];
    for e in corpus::read_manifest(manifest)? {
        let p = resolve_entry(manifest, &e);
        if p.exists() {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub path: String,
    pub style_vector: Vec<f64>,
    pub layout: StyleLayout,
}

pub fn extract_features(paths: &[PathBuf], k: usize, seed: u64) -> Result<Vec<FeatureRecord>> {
    paths
        .iter()
        .map(|p| {
            let v = style_vector(&Raster::load(p)?, k, seed)?;
            Ok(FeatureRecord {
                path: p.to_string_lossy().into_owned(),
                style_vector: v.values,
                layout: v.layout,
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn features_to_jsonl(records: &[FeatureRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    std::fs::write(path, features_to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Serialized graph: feature rows and 0/1 adjacency rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<u8>>,
}

impl GraphFile {
    pub fn from_graph(graph: &StyleGraph, k: usize) -> Self {
        let n = graph.len();
        let d = graph.features.dim(1);
        Self {
            k,
            features: graph
                .features
                .data()
                .chunks(d.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
            adjacency: graph.adjacency.chunks(n).map(<[u8]>::to_vec).collect(),
        }
    }

    pub fn to_graph(&self) -> Result<StyleGraph> {
        let n = self.features.len();
        let d = self.features.first().map_or(0, Vec::len);
        let features = crate::tensor::Tensor::from_vec(&[n, d], self.features.concat())?;
        StyleGraph::from_adjacency(features, self.adjacency.concat())
    }
}

pub fn graph_from_features(records: &[FeatureRecord], k: usize) -> Result<GraphFile> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.style_vector.clone()).collect();
    Ok(GraphFile::from_graph(&build_graph_from_rows(&rows, k)?, k))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrEvaluation {
    pub images: usize,
    pub psnr_model: f64,
    pub psnr_bicubic: f64,
    pub psnr_delta: f64,
}

/// Mean PSNR of the model and of plain bicubic upsampling against the
/// originals, on `DS(x)` inputs.
pub fn evaluate_sr(ckpt: &SrCheckpoint, images: &[Raster]) -> Result<SrEvaluation> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let f = ckpt.config.scale;
    let (mut model, mut baseline) = (0.0, 0.0);
    for x in images {
        let y = bicubic_downsample(x, f)?;
        model += psnr(&ckpt.super_resolve(&y)?, x)?;
        baseline += psnr(&bicubic_upsample(&y, f)?, x)?;
    }
    let n = images.len() as f64;
    Ok(SrEvaluation {
        images: images.len(),
        psnr_model: model / n,
        psnr_bicubic: baseline / n,
        psnr_delta: (model - baseline) / n,
    })
}
