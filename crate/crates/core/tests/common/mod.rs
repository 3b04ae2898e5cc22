#![allow(dead_code)]

use impasto::raster::Raster;
use impasto::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_raster<R: Rng>(rng: &mut R, h: usize, w: usize) -> Raster {
    Raster::from_fn(h, w, |_, _| {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]
    })
}

/// Keys cubic convolution, a = -0.5, written out independently.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Direct 2-D convolution resize: every output pixel is the normalized
/// weighted sum over the full support of the (possibly stretched) kernel
/// centred on its pixel-centre preimage, with mirrored borders.
pub fn naive_resize(img: &Raster, out_h: usize, out_w: usize) -> Raster {
    let (h, w) = (img.height(), img.width());
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let (stretch_y, stretch_x) = (sy.max(1.0), sx.max(1.0));
    Raster::from_fn(out_h, out_w, |oy, ox| {
        let cy = (oy as f64 + 0.5) * sy - 0.5;
        let cx = (ox as f64 + 0.5) * sx - 0.5;
        let (ry, rx) = (2.0 * stretch_y, 2.0 * stretch_x);
        let mut acc = [0.0f64; 3];
        let mut total = 0.0;
        for v in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
            let wy = cubic((v as f64 - cy) / stretch_y);
            if wy == 0.0 {
                continue;
            }
            for u in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                let wx = cubic((u as f64 - cx) / stretch_x);
                if wx == 0.0 {
                    continue;
                }
                let p = img.pixel(mirror(v, h), mirror(u, w));
                for c in 0..3 {
                    acc[c] += wy * wx * f64::from(p[c]);
                }
                total += wy * wx;
            }
        }
        [
            (acc[0] / total) as f32,
            (acc[1] / total) as f32,
            (acc[2] / total) as f32,
        ]
    })
}

pub fn naive_downsample(img: &Raster, f: usize) -> Raster {
    naive_resize(img, img.height() / f, img.width() / f)
}

pub fn naive_upsample(img: &Raster, f: usize) -> Raster {
    let mut out = naive_resize(img, img.height() * f, img.width() * f);
    for v in out.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    out
}

pub fn max_abs_diff(a: &Raster, b: &Raster) -> f64 {
    assert_eq!((a.height(), a.width()), (b.height(), b.width()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .fold(0.0, f64::max)
}

/// One rectified graph convolution computed node by node:
/// `h'_i = ReLU(sum_{j in N(i) + i} h_j W / sqrt(d_i d_j))`.
pub fn brute_gcn(adj: &[Vec<bool>], h: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let degree: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).filter(|&j| j != i && adj[i][j]).count() as f64)
        .collect();
    let out_dim = w[0].len();
    (0..n)
        .map(|i| {
            let mut acc = vec![0.0; out_dim];
            for j in 0..n {
                if i != j && !adj[i][j] {
                    continue;
                }
                let c = (degree[i] * degree[j]).sqrt();
                for (o, a) in acc.iter_mut().enumerate() {
                    let hw: f64 = h[j].iter().zip(w).map(|(x, row)| x * row[o]).sum();
                    *a += hw / c;
                }
            }
            acc.into_iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_vec(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

pub fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, d) = (t.dim(0), t.dim(1));
    (0..n)
        .map(|i| t.data()[i * d..(i + 1) * d].to_vec())
        .collect()
}

/// Random symmetric adjacency without self loops.
pub fn random_adjacency<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let e = rng.random_bool(p);
            adj[i][j] = e;
            adj[j][i] = e;
        }
    }
    adj
}

pub fn flatten_adjacency(adj: &[Vec<bool>]) -> Vec<u8> {
    adj.iter()
        .flat_map(|r| r.iter().map(|&b| b as u8))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Hash of every file in `dir` except the stage marker, which records timings.
pub fn hash_dir(dir: &std::path::Path) -> String {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "stage.json"))
        .collect();
    files.sort();
    let mut all = Vec::new();
    for f in files {
        all.extend_from_slice(f.file_name().unwrap().to_string_lossy().as_bytes());
        all.extend_from_slice(&std::fs::read(&f).unwrap());
    }
    sha256_hex(&all)
}
