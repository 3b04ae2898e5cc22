//! Labeled image corpora: ingestion, JSON Lines manifests, one-hot
//! conditions and seeded train/holdout splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::sasr::bicubic;

pub const MIN_SIDE: usize = 8;

/// One corpus image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasRecord {
    pub pixels: Raster,
    pub country_label: String,
    pub style_label: String,
    pub source_path: String,
}

impl CanvasRecord {
    pub fn new(
        pixels: Raster,
        country: impl Into<String>,
        style: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let record = Self {
            pixels,
            country_label: country.into(),
            style_label: style.into(),
            source_path: source.into(),
        };
        if record.country_label.is_empty() || record.style_label.is_empty() {
            return Err(Error::Config(format!(
                "record {} has an empty label",
                record.source_path
            )));
        }
        if record.pixels.height() != record.pixels.width() {
            return Err(Error::Shape(format!(
                "record {} is {}x{}, expected square",
                record.source_path,
                record.pixels.height(),
                record.pixels.width()
            )));
        }
        Ok(record)
    }

    pub fn side(&self) -> usize {
        self.pixels.height()
    }
}

/// One-hot country and style indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub country_onehot: Vec<f32>,
    pub style_onehot: Vec<f32>,
}

impl ConditionVector {
    pub fn from_indices(
        country: usize,
        countries: usize,
        style: usize,
        styles: usize,
    ) -> Result<Self> {
        if country >= countries || style >= styles {
            return Err(Error::Range(format!(
                "condition ({country}, {style}) outside vocabularies of size ({countries}, {styles})"
            )));
        }
        let onehot = |i: usize, n: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            country_onehot: onehot(country, countries),
            style_onehot: onehot(style, styles),
        })
    }

    pub fn len(&self) -> usize {
        self.country_onehot.len() + self.style_onehot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All components, country first.
    pub fn concatenated(&self) -> Vec<f32> {
        self.country_onehot
            .iter()
            .chain(&self.style_onehot)
            .copied()
            .collect()
    }

    pub fn country_index(&self) -> usize {
        argmax(&self.country_onehot)
    }

    pub fn style_index(&self) -> usize {
        argmax(&self.style_onehot)
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Ordered records plus the sorted label vocabularies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub records: Vec<CanvasRecord>,
    pub country_vocab: Vec<String>,
    pub style_vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub country: Vec<String>,
    pub style: Vec<String>,
}

impl Corpus {
    pub fn from_records(records: Vec<CanvasRecord>) -> Self {
        let country: BTreeSet<_> = records.iter().map(|r| r.country_label.clone()).collect();
        let style: BTreeSet<_> = records.iter().map(|r| r.style_label.clone()).collect();
        Self {
            records,
            country_vocab: country.into_iter().collect(),
            style_vocab: style.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocabularies(&self) -> Vocabularies {
        Vocabularies {
            country: self.country_vocab.clone(),
            style: self.style_vocab.clone(),
        }
    }

    /// Keep `records`, sharing this corpus's vocabularies.
    fn with_records(&self, records: Vec<CanvasRecord>) -> Self {
        Self {
            records,
            country_vocab: self.country_vocab.clone(),
            style_vocab: self.style_vocab.clone(),
        }
    }
}

impl Vocabularies {
    pub fn encode(&self, country: &str, style: &str) -> Result<ConditionVector> {
        let c = self
            .country
            .binary_search_by(|v| v.as_str().cmp(country))
            .map_err(|_| Error::Vocab {
                label: country.to_string(),
                vocabulary: "country",
            })?;
        let s = self
            .style
            .binary_search_by(|v| v.as_str().cmp(style))
            .map_err(|_| Error::Vocab {
                label: style.to_string(),
                vocabulary: "style",
            })?;
        ConditionVector::from_indices(c, self.country.len(), s, self.style.len())
    }

    /// Labels named by the argmax of each one-hot.
    pub fn decode(&self, condition: &ConditionVector) -> Option<(&str, &str)> {
        Some((
            self.country.get(condition.country_index())?.as_str(),
            self.style.get(condition.style_index())?.as_str(),
        ))
    }

    pub fn condition_len(&self) -> usize {
        self.country.len() + self.style.len()
    }
}

/// One-hot condition for a record under the corpus vocabularies.
pub fn encode_condition(record: &CanvasRecord, corpus: &Corpus) -> Result<ConditionVector> {
    corpus
        .vocabularies()
        .encode(&record.country_label, &record.style_label)
}

fn check_side(side: usize) -> Result<()> {
    if side < MIN_SIDE {
        return Err(Error::Config(format!(
            "side must be at least {MIN_SIDE}, got {side}"
        )));
    }
    Ok(())
}

/// Decode, bicubic-resize to `side x side`, map to `[-1, 1]`.
pub fn ingest_raster(path: &Path, side: usize) -> Result<Raster> {
    check_side(side)?;
    let raw = Raster::load(path)?;
    resize_square(&raw, side)
}

/// Bicubic resize an arbitrary raster to `side x side`, clamped to `[-1, 1]`.
pub fn resize_square(raw: &Raster, side: usize) -> Result<Raster> {
    let mut out = if raw.height() == side && raw.width() == side {
        raw.clone()
    } else {
        bicubic::resize(raw, side, side)?
    };
    out.clamp_unit();
    Ok(out)
}

/// Ingest one labeled image file.
pub fn ingest_image(path: &Path, side: usize, country: &str, style: &str) -> Result<CanvasRecord> {
    let pixels = ingest_raster(path, side)?;
    CanvasRecord::new(pixels, country, style, path.to_string_lossy())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub country: String,
    pub style: String,
}

/// Parse a JSON Lines manifest without touching the images. Blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        let field = |name: &str| -> Result<String> {
            match value.get(name).and_then(|v| v.as_str()) {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                Some(_) => Err(Error::Manifest {
                    line: line_no,
                    reason: format!("field {name:?} is empty"),
                }),
                None => Err(Error::Manifest {
                    line: line_no,
                    reason: format!("missing string field {name:?}"),
                }),
            }
        };
        out.push(ManifestEntry {
            path: field("path")?,
            country: field("country")?,
            style: field("style")?,
        });
    }
    Ok(out)
}

/// Resolve a manifest path relative to the manifest's directory.
pub fn resolve_entry(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Load every manifest record at `side x side`, in manifest order.
pub fn load_manifest(path: &Path, side: usize) -> Result<Corpus> {
    check_side(side)?;
    let entries = read_manifest(path)?;
    let mut records = Vec::with_capacity(entries.len());
    for (line, entry) in manifest_lines(path)?.into_iter().zip(&entries) {
        let file = resolve_entry(path, entry);
        if !file.is_file() {
            return Err(Error::Manifest {
                line,
                reason: format!("file {} does not exist", file.display()),
            });
        }
        records.push(ingest_image(&file, side, &entry.country, &entry.style)?);
    }
    Ok(Corpus::from_records(records))
}

fn manifest_lines(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect())
}

/// Write entries as JSON Lines.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Partition into `(train, holdout)` with `floor(N * fraction)` holdout records.
///
/// Assignment depends only on `seed` and `N`; each half keeps manifest order.
pub fn split(corpus: &Corpus, holdout_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let n = corpus.len();
    let holdout = (n as f64 * holdout_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_holdout = vec![false; n];
    for &i in &order[..holdout] {
        is_holdout[i] = true;
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (rec, h) in corpus.records.iter().zip(is_holdout) {
        if h {
            held.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    Ok((corpus.with_records(train), corpus.with_records(held)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(country: &str, style: &str, tag: f32) -> CanvasRecord {
        CanvasRecord::new(
            Raster::filled(8, 8, [tag, 0.0, 0.0]),
            country,
            style,
            format!("{tag}"),
        )
        .unwrap()
    }

    fn save(dir: &Path, name: &str, img: &image::RgbImage) -> PathBuf {
        let p = dir.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn all_black_maps_to_minus_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = save(dir.path(), "black.png", &image::RgbImage::new(10, 10));
        let r = ingest_raster(&p, 8).unwrap();
        assert_eq!((r.height(), r.width()), (8, 8));
        assert!(r.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn all_white_maps_to_plus_one() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(256, 256, image::Rgb([255, 255, 255]));
        let p = save(dir.path(), "white.png", &img);
        let r = ingest_raster(&p, 256).unwrap();
        assert_eq!(r.height(), 256);
        assert!(r.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkerboard_survives_identity_resize() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_fn(8, 8, |x, y| {
            if (x + y) % 2 == 0 {
                image::Rgb([0, 0, 0])
            } else {
                image::Rgb([255, 255, 255])
            }
        });
        let p = save(dir.path(), "check.png", &img);
        let r = ingest_raster(&p, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expected = if (x + y) % 2 == 0 { -1.0 } else { 1.0 };
                assert_eq!(r.pixel(y, x), [expected; 3]);
            }
        }
    }

    #[test]
    fn two_by_two_checkerboard_at_side_two() {
        // the public op enforces side >= 8; the resize core is exercised directly
        let raw = Raster::from_rgb8(&image::RgbImage::from_fn(2, 2, |x, y| {
            if (x + y) % 2 == 0 {
                image::Rgb([0, 0, 0])
            } else {
                image::Rgb([255, 255, 255])
            }
        }));
        let r = resize_square(&raw, 2).unwrap();
        assert_eq!(r.pixel(0, 0), [-1.0; 3]);
        assert_eq!(r.pixel(0, 1), [1.0; 3]);
        assert_eq!(r.pixel(1, 0), [1.0; 3]);
        assert_eq!(r.pixel(1, 1), [-1.0; 3]);
    }

    #[test]
    fn small_side_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = save(dir.path(), "b.png", &image::RgbImage::new(10, 10));
        assert!(matches!(ingest_raster(&p, 7), Err(Error::Config(_))));
    }

    #[test]
    fn undecodable_file_is_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        fs::write(&p, b"not an image").unwrap();
        assert!(matches!(ingest_raster(&p, 8), Err(Error::Ingest { .. })));
    }

    #[test]
    fn reingest_is_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_fn(37, 23, |x, y| {
            image::Rgb([(x * 7) as u8, (y * 11) as u8, ((x * y) % 256) as u8])
        });
        let p = save(dir.path(), "src.png", &img);
        let first = ingest_raster(&p, 16).unwrap();
        let q = dir.path().join("again.png");
        first.save_png(&q).unwrap();
        let second = ingest_raster(&q, 16).unwrap();
        for (a, b) in first.data().iter().zip(second.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn manifest_vocabularies_are_sorted_unique() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), "a.png", &image::RgbImage::new(8, 8));
        let lines = [
            r#"{"path": "a.png", "country": "US", "style": "monet"}"#,
            r#"{"path": "a.png", "country": "TW", "style": "degas"}"#,
            r#"{"path": "a.png", "country": "CH", "style": "monet"}"#,
            r#"{"path": "a.png", "country": "TW", "style": "renoir"}"#,
        ];
        let m = dir.path().join("m.jsonl");
        fs::write(&m, lines.join("\n")).unwrap();
        let c = load_manifest(&m, 8).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.country_vocab, ["CH", "TW", "US"]);
        assert_eq!(c.style_vocab, ["degas", "monet", "renoir"]);
        assert_eq!(c.records[0].country_label, "US");
    }

    #[test]
    fn empty_manifest_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "").unwrap();
        let c = load_manifest(&m, 8).unwrap();
        assert!(c.is_empty() && c.country_vocab.is_empty() && c.style_vocab.is_empty());
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), "a.png", &image::RgbImage::new(8, 8));
        let m = dir.path().join("m.jsonl");
        fs::write(
            &m,
            "{\"path\": \"a.png\", \"country\": \"US\", \"style\": \"x\"}\n{\"path\": \"a.png\", \"style\": \"x\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&m, 8),
            Err(Error::Manifest { line: 2, .. })
        ));
        fs::write(
            &m,
            "\n{\"path\": \"gone.png\", \"country\": \"US\", \"style\": \"x\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&m, 8),
            Err(Error::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn one_hot_positions() {
        let corpus = Corpus::from_records(vec![
            rec("US", "renoir", 0.0),
            rec("TW", "monet", 0.1),
            rec("CH", "degas", 0.2),
        ]);
        let c = encode_condition(&corpus.records[1], &corpus).unwrap();
        assert_eq!(c.country_onehot, [0.0, 1.0, 0.0]);
        assert_eq!(c.style_onehot, [0.0, 1.0, 0.0]);
        let single = Corpus::from_records(vec![rec("US", "x", 0.0)]);
        let c = encode_condition(&single.records[0], &single).unwrap();
        assert_eq!(c.country_onehot, [1.0]);
    }

    #[test]
    fn unknown_label_is_vocab_error() {
        let corpus = Corpus::from_records(vec![rec("US", "renoir", 0.0)]);
        let stranger = rec("FR", "renoir", 0.0);
        assert!(matches!(
            encode_condition(&stranger, &corpus),
            Err(Error::Vocab { .. })
        ));
    }

    #[test]
    fn decode_inverts_encode() {
        let v = Vocabularies {
            country: vec!["CH".into(), "TW".into(), "US".into()],
            style: vec!["degas".into(), "monet".into()],
        };
        for c in &v.country {
            for s in &v.style {
                let cond = v.encode(c, s).unwrap();
                assert_eq!(v.decode(&cond), Some((c.as_str(), s.as_str())));
            }
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let corpus =
            Corpus::from_records((0..10).map(|i| rec("US", "x", i as f32 / 10.0)).collect());
        let (a, b) = split(&corpus, 0.2, 7).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&corpus, 0.2, 7).unwrap();
        assert_eq!((a, b), (a2, b2));
        let one = Corpus::from_records(vec![rec("US", "x", 0.0)]);
        let (a, b) = split(&one, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 0));
        assert_eq!(b.country_vocab, ["US"]);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let corpus = Corpus::default();
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(split(&corpus, f, 0), Err(Error::Config(_))));
        }
    }
}
