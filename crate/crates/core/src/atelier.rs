//! Mosaic composition and the gradual-change frame sequence.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradseq::Ordering;
use crate::raster::Raster;

/// Gutter pixels are black.
const GUTTER_VALUE: f32 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicSpec {
    pub rows: usize,
    pub cols: usize,
    pub tile_side: usize,
    #[serde(default)]
    pub gutter: usize,
}

impl MosaicSpec {
    pub fn new(rows: usize, cols: usize, tile_side: usize) -> Self {
        Self {
            rows,
            cols,
            tile_side,
            gutter: 0,
        }
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile_side + self.rows.saturating_sub(1) * self.gutter
    }

    pub fn width(&self) -> usize {
        self.cols * self.tile_side + self.cols.saturating_sub(1) * self.gutter
    }

    /// Top-left pixel of tile `(r, c)`.
    pub fn origin(&self, r: usize, c: usize) -> (usize, usize) {
        let step = self.tile_side + self.gutter;
        (r * step, c * step)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.tile_side == 0 {
            return Err(Error::Config(
                "mosaic rows, cols and tile side must be positive".into(),
            ));
        }
        Ok(())
    }

    fn check_tiles(&self, tiles: &[Raster]) -> Result<()> {
        self.validate()?;
        if tiles.len() != self.tiles() {
            return Err(Error::Shape(format!(
                "{} tiles for a {}x{} mosaic",
                tiles.len(),
                self.rows,
                self.cols
            )));
        }
        if let Some((i, t)) = tiles
            .iter()
            .enumerate()
            .find(|(_, t)| t.height() != self.tile_side || t.width() != self.tile_side)
        {
            return Err(Error::Shape(format!(
                "tile {i} is {}x{}, expected side {}",
                t.height(),
                t.width(),
                self.tile_side
            )));
        }
        Ok(())
    }
}

fn blit(dst: &mut Raster, tile: &Raster, top: usize, left: usize) {
    let (w, s) = (dst.width(), tile.width());
    let data = dst.data_mut();
    for y in 0..tile.height() {
        let d = ((top + y) * w + left) * 3;
        data[d..d + 3 * s].copy_from_slice(&tile.data()[y * s * 3..(y + 1) * s * 3]);
    }
}

/// Row-major placement of `tiles`.
pub fn compose_mosaic(tiles: &[Raster], spec: &MosaicSpec) -> Result<Raster> {
    spec.check_tiles(tiles)?;
    let mut out = Raster::filled(spec.height(), spec.width(), [GUTTER_VALUE; 3]);
    for (i, tile) in tiles.iter().enumerate() {
        let (top, left) = spec.origin(i / spec.cols, i % spec.cols);
        blit(&mut out, tile, top, left);
    }
    Ok(out)
}

/// Tile `(r, c)` cut back out of a mosaic.
pub fn crop_tile(mosaic: &Raster, spec: &MosaicSpec, r: usize, c: usize) -> Result<Raster> {
    if r >= spec.rows || c >= spec.cols {
        return Err(Error::Range(format!(
            "tile ({r}, {c}) outside {}x{}",
            spec.rows, spec.cols
        )));
    }
    let (top, left) = spec.origin(r, c);
    mosaic.crop(top, left, spec.tile_side, spec.tile_side)
}

/// `(1 - t) a + t b` per pixel.
pub fn interpolate_frames(a: &Raster, b: &Raster, t: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("blend weight {t} outside [0, 1]")));
    }
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "blending {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((1.0 - t) * f64::from(x) + t * f64::from(y)) as f32)
        .collect();
    Raster::new(a.height(), a.width(), data)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub ordering: Ordering,
    pub frames_per_transition: usize,
    pub total_frames: usize,
    pub per_tile_phase: Vec<usize>,
    pub seed: u64,
}

/// What tile `p` shows at frame `t`: two ordering entries and a blend weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileState {
    pub current: usize,
    pub next: usize,
    pub weight: f64,
}

impl FrameSchedule {
    /// `(N - 1) * frames_per_transition` frames; phases uniform in
    /// `[0, N * frames_per_transition)` unless `synchronous`.
    pub fn new(
        ordering: Ordering,
        frames_per_transition: usize,
        seed: u64,
        synchronous: bool,
    ) -> Result<Self> {
        let n = ordering.sequence.len();
        if n == 0 || !ordering.is_permutation(n) {
            return Err(Error::Config(
                "schedule needs a non-empty permutation".into(),
            ));
        }
        if frames_per_transition == 0 {
            return Err(Error::Config(
                "frames per transition must be at least 1".into(),
            ));
        }
        let per_tile_phase = if synchronous {
            vec![0; n]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| rng.random_range(0..n * frames_per_transition))
                .collect()
        };
        Ok(Self {
            ordering,
            frames_per_transition,
            total_frames: (n - 1) * frames_per_transition,
            per_tile_phase,
            seed,
        })
    }

    pub fn tiles(&self) -> usize {
        self.ordering.sequence.len()
    }

    pub fn tile_state(&self, tile: usize, frame: usize) -> TileState {
        let n = self.tiles();
        let fpt = self.frames_per_transition;
        let tau = frame + self.per_tile_phase[tile];
        let segment = tau / fpt;
        TileState {
            current: self.ordering.sequence[(tile + segment) % n],
            next: self.ordering.sequence[(tile + segment + 1) % n],
            weight: (tau % fpt) as f64 / fpt as f64,
        }
    }
}

/// Mosaic shown at frame `t`.
pub fn render_frame(
    images: &[Raster],
    schedule: &FrameSchedule,
    spec: &MosaicSpec,
    t: usize,
) -> Result<Raster> {
    spec.check_tiles(images)?;
    if schedule.tiles() != images.len() {
        return Err(Error::Shape(format!(
            "schedule over {} paintings, {} given",
            schedule.tiles(),
            images.len()
        )));
    }
    let mut out = Raster::filled(spec.height(), spec.width(), [GUTTER_VALUE; 3]);
    for p in 0..images.len() {
        let s = schedule.tile_state(p, t);
        let tile = interpolate_frames(&images[s.current], &images[s.next], s.weight)?;
        let (top, left) = spec.origin(p / spec.cols, p % spec.cols);
        blit(&mut out, &tile, top, left);
    }
    Ok(out)
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesManifest {
    pub fps: u32,
    pub frame_count: usize,
    pub tile_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_side: usize,
    pub gutter: usize,
    pub frames_per_transition: usize,
    pub seed: u64,
    pub synchronous: bool,
    pub per_tile_phase: Vec<usize>,
    pub order: Vec<usize>,
    pub files: Vec<String>,
}

/// Write every frame as a numbered PNG plus `frames.json` into `dir`.
pub fn render_frames(
    images: &[Raster],
    schedule: &FrameSchedule,
    spec: &MosaicSpec,
    fps: u32,
    dir: &Path,
) -> Result<FramesManifest> {
    if fps == 0 {
        return Err(Error::Config("fps must be at least 1".into()));
    }
    spec.check_tiles(images)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(schedule.total_frames);
    for t in 0..schedule.total_frames {
        let name = frame_name(t);
        let wrap = |e: Error| Error::Frame {
            frame: t,
            source: Box::new(e),
        };
        let frame = render_frame(images, schedule, spec, t).map_err(wrap)?;
        frame.save_png(&dir.join(&name)).map_err(wrap)?;
        files.push(name);
    }
    let manifest = FramesManifest {
        fps,
        frame_count: schedule.total_frames,
        tile_count: images.len(),
        rows: spec.rows,
        cols: spec.cols,
        tile_side: spec.tile_side,
        gutter: spec.gutter,
        frames_per_transition: schedule.frames_per_transition,
        seed: schedule.seed,
        synchronous: schedule.per_tile_phase.iter().all(|&p| p == 0),
        per_tile_phase: schedule.per_tile_phase.clone(),
        order: schedule.ordering.sequence.clone(),
        files,
    };
    let path = dir.join("frames.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(side: usize, v: f32) -> Raster {
        Raster::filled(side, side, [v, -v, v * 0.5])
    }

    #[test]
    fn single_tile_is_identity() {
        let t = Raster::from_fn(5, 5, |y, x| [y as f32 * 0.1, x as f32 * 0.1, 0.0]);
        assert_eq!(
            compose_mosaic(std::slice::from_ref(&t), &MosaicSpec::new(1, 1, 5)).unwrap(),
            t
        );
    }

    #[test]
    fn quadrants_crop_back() {
        let tiles: Vec<Raster> = (0..4).map(|i| solid(3, i as f32 * 0.25)).collect();
        let spec = MosaicSpec::new(2, 2, 3);
        let m = compose_mosaic(&tiles, &spec).unwrap();
        assert_eq!((m.height(), m.width()), (6, 6));
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(crop_tile(&m, &spec, r, c).unwrap(), tiles[r * 2 + c]);
            }
        }
    }

    #[test]
    fn gutter_geometry() {
        let tiles: Vec<Raster> = (0..6).map(|i| solid(4, i as f32 * 0.1)).collect();
        let spec = MosaicSpec {
            gutter: 2,
            ..MosaicSpec::new(2, 3, 4)
        };
        let m = compose_mosaic(&tiles, &spec).unwrap();
        assert_eq!((m.height(), m.width()), (10, 16));
        assert_eq!(crop_tile(&m, &spec, 1, 2).unwrap(), tiles[5]);
        assert_eq!(m.pixel(4, 0), [-1.0; 3]);
    }

    #[test]
    fn mosaic_shape_errors() {
        let spec = MosaicSpec::new(2, 2, 3);
        assert!(matches!(
            compose_mosaic(&[solid(3, 0.0)], &spec),
            Err(Error::Shape(_))
        ));
        let mut tiles: Vec<Raster> = (0..4).map(|_| solid(3, 0.0)).collect();
        tiles[2] = solid(4, 0.0);
        assert!(matches!(
            compose_mosaic(&tiles, &spec),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Raster::filled(2, 2, [-1.0; 3]);
        let b = Raster::filled(2, 2, [1.0; 3]);
        assert_eq!(interpolate_frames(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_frames(&a, &b, 1.0).unwrap(), b);
        assert_eq!(
            interpolate_frames(&a, &b, 0.5).unwrap(),
            Raster::filled(2, 2, [0.0; 3])
        );
        assert!(matches!(
            interpolate_frames(&a, &b, 1.5),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            interpolate_frames(&a, &b, -0.1),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn unit_transition_shifts_ordering() {
        let order = Ordering {
            sequence: vec![2, 0, 3, 1],
        };
        let s = FrameSchedule::new(order.clone(), 1, 0, true).unwrap();
        assert_eq!(s.total_frames, 3);
        let tiles: Vec<Raster> = (0..4).map(|i| solid(2, i as f32 * 0.25)).collect();
        let spec = MosaicSpec::new(2, 2, 2);
        for k in 0..3 {
            let frame = render_frame(&tiles, &s, &spec, k).unwrap();
            let shifted: Vec<Raster> = (0..4)
                .map(|p| tiles[order.sequence[(p + k) % 4]].clone())
                .collect();
            assert_eq!(frame, compose_mosaic(&shifted, &spec).unwrap());
        }
    }

    #[test]
    fn two_paintings_four_steps() {
        let s = FrameSchedule::new(
            Ordering {
                sequence: vec![0, 1],
            },
            4,
            0,
            true,
        )
        .unwrap();
        assert_eq!(s.total_frames, 4);
        let weights: Vec<f64> = (0..4).map(|t| s.tile_state(0, t).weight).collect();
        assert_eq!(weights, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn phases_in_range_and_seeded() {
        let order = Ordering {
            sequence: (0..9).collect(),
        };
        let a = FrameSchedule::new(order.clone(), 3, 7, false).unwrap();
        let b = FrameSchedule::new(order, 3, 7, false).unwrap();
        assert_eq!(a, b);
        assert!(a.per_tile_phase.iter().all(|&p| p < 27));
        assert!(a.per_tile_phase.iter().any(|&p| p != 0));
    }
}
