//! Procedural images for desk-scale experiments.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::color::hsv_to_rgb;
use crate::corpus::{CanvasRecord, Corpus};
use crate::error::Result;
use crate::raster::Raster;

/// Hue (degrees) of each spiked-disk class.
pub const SPIKE_HUES: [f64; 3] = [30.0, 140.0, 250.0];
pub const SPIKE_LABELS: [&str; 3] = ["amber", "green", "violet"];

fn to_signed(rgb: [f64; 3]) -> [f32; 3] {
    rgb.map(|v| (2.0 * v - 1.0) as f32)
}

/// A colored disk with radial spikes on a dark teal background.
pub fn spiked_disk<R: Rng + ?Sized>(side: usize, hue: f64, rng: &mut R) -> Raster {
    let s = side as f64;
    let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let radius = rng.random_range(0.16..0.24) * s;
    let reach = radius * rng.random_range(1.5..1.9);
    let spikes = rng.random_range(5..10usize);
    let phase = rng.random_range(0.0..2.0 * PI);
    let half_width = rng.random_range(0.10..0.16);
    let color = hsv_to_rgb([
        hue + rng.random_range(-8.0..8.0),
        rng.random_range(0.75..0.95),
        rng.random_range(0.75..0.95),
    ]);
    let background = hsv_to_rgb([191.0, 0.6, 0.2]);
    Raster::from_fn(side, side, |y, x| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        let r = dx.hypot(dy);
        let angle = dy.atan2(dx) - phase;
        let sector = 2.0 * PI / spikes as f64;
        let off = (angle.rem_euclid(sector) - sector / 2.0).abs() / (sector / 2.0);
        let on_spike = r < reach && off > 1.0 - half_width * (1.0 - r / reach);
        if r < radius || on_spike {
            to_signed(color)
        } else {
            to_signed(background)
        }
    })
}

/// `n` spiked disks cycling through the three hue classes (country label)
/// under a single style label.
pub fn spiked_disk_corpus(n: usize, side: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let class = i % SPIKE_HUES.len();
            let img = spiked_disk(side, SPIKE_HUES[class], &mut rng);
            CanvasRecord::new(
                img,
                SPIKE_LABELS[class],
                "spiked",
                format!("synthetic/disk_{i:04}"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::from_records(records))
}

/// Smooth multi-frequency texture with a few hard-edged shapes.
pub fn texture<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Raster {
    struct Wave {
        fx: f64,
        fy: f64,
        phase: f64,
        amp: [f64; 3],
    }
    let waves: Vec<Wave> = (0..6)
        .map(|_| {
            let freq = rng.random_range(1.0..9.0);
            let theta = rng.random_range(0.0..PI);
            Wave {
                fx: freq * theta.cos(),
                fy: freq * theta.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amp: [0; 3].map(|_| rng.random_range(-0.25..0.25)),
            }
        })
        .collect();
    let shapes: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.25),
                [0; 3].map(|_| rng.random_range(-0.4..0.4)),
            )
        })
        .collect();
    let base = [0; 3].map(|_| rng.random_range(-0.3..0.3));
    let s = side as f64;
    Raster::from_fn(side, side, |y, x| {
        let u = (x as f64 + 0.5) / s;
        let v = (y as f64 + 0.5) / s;
        let mut px = base;
        for w in &waves {
            let t = (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin();
            for c in 0..3 {
                px[c] += w.amp[c] * t;
            }
        }
        for &(sx, sy, r, shift) in &shapes {
            if (u - sx).hypot(v - sy) < r {
                for c in 0..3 {
                    px[c] += shift[c];
                }
            }
        }
        px.map(|p| p.clamp(-1.0, 1.0) as f32)
    })
}

/// `n` textures under placeholder labels.
pub fn texture_corpus(n: usize, side: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            CanvasRecord::new(
                texture(side, &mut rng),
                "none",
                "texture",
                format!("synthetic/texture_{i:04}"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::from_records(records))
}

/// Random rectangles of random colors on a random background.
pub fn blocks<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Raster {
    fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
        [0; 3].map(|_| rng.random_range(-1.0f32..1.0))
    }
    let mut img = Raster::filled(side, side, color(rng));
    let count = 2 + (side / 8).min(6);
    for _ in 0..count {
        let c = color(rng);
        let y0 = rng.random_range(0..side);
        let x0 = rng.random_range(0..side);
        let h = rng.random_range(1..=side - y0);
        let w = rng.random_range(1..=side - x0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.set_pixel(y, x, c);
            }
        }
    }
    img
}
