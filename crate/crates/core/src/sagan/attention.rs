//! Self-attention over feature-map locations.
//!
//! For location `i` the block aggregates `m_i = sum_{j in R(i)} a(x_i, x_j) * b(x_j)`
//! where `a` is a softmax over scaled query/key dot products (one scalar per
//! pair, shared by all channels) and `b` is a learned value projection
//! followed by an output projection back to the input width. The block
//! returns `x + m`.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttentionMask, Graph, Var};
use crate::params::{normal_tensor, Bound, ParamSet};
use crate::tensor::{Real, Tensor};

/// Which locations each query aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    Global,
    /// Chebyshev window of the given radius on the location grid.
    Window(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub footprint: Footprint,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl AttentionConfig {
    pub fn global(key_dim: usize, value_dim: usize) -> Self {
        Self {
            footprint: Footprint::Global,
            key_dim,
            value_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim == 0 || self.value_dim == 0 {
            return Err(Error::Config(
                "attention key and value widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Visibility mask for an `h x w` grid; `None` means every pair is visible.
    pub fn mask(&self, h: usize, w: usize) -> Result<Option<AttentionMask>> {
        match self.footprint {
            Footprint::Global => Ok(None),
            Footprint::Window(r) => {
                if r >= h.max(w) {
                    return Err(Error::Config(format!(
                        "window radius {r} reaches past the {h}x{w} grid"
                    )));
                }
                let l = h * w;
                let mut m = vec![false; l * l];
                for i in 0..l {
                    let (yi, xi) = (i / w, i % w);
                    for j in 0..l {
                        let (yj, xj) = (j / w, j % w);
                        m[i * l + j] = yi.abs_diff(yj) <= r && xi.abs_diff(xj) <= r;
                    }
                }
                Ok(Some(Rc::new(m)))
            }
        }
    }

    /// Parameters for a block over `channels` input features, named
    /// `wq bq wk bk wv bv wo bo` under `prefix`.
    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<ParamSet<T>> {
        self.validate()?;
        let (c, dk, dv) = (channels, self.key_dim, self.value_dim);
        let std = 0.02;
        let mut p = ParamSet::new();
        p.insert(format!("{prefix}.wq"), normal_tensor(rng, &[c, dk], std));
        p.insert(format!("{prefix}.bq"), Tensor::zeros(&[dk]));
        p.insert(format!("{prefix}.wk"), normal_tensor(rng, &[c, dk], std));
        p.insert(format!("{prefix}.bk"), Tensor::zeros(&[dk]));
        p.insert(format!("{prefix}.wv"), normal_tensor(rng, &[c, dv], std));
        p.insert(format!("{prefix}.bv"), Tensor::zeros(&[dv]));
        p.insert(format!("{prefix}.wo"), normal_tensor(rng, &[dv, c], std));
        p.insert(format!("{prefix}.bo"), Tensor::zeros(&[c]));
        Ok(p)
    }
}

/// Attention block on an NCHW feature map.
pub fn self_attention_graph<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    bound: &Bound,
    prefix: &str,
    config: &AttentionConfig,
) -> Result<Var> {
    let (n, c, h, w) = match *g.shape(x) {
        [n, c, h, w] => (n, c, h, w),
        ref s => return Err(Error::Shape(format!("attention expects NCHW, got {s:?}"))),
    };
    let l = h * w;
    let mask = config.mask(h, w)?;
    let locs = g.to_locations(x)?;
    let flat = g.reshape(locs, &[n * l, c])?;
    let p = |name: &str| bound.var(&format!("{prefix}.{name}"));
    let project = |g: &mut Graph<T>, wn: &str, bn: &str, width: usize| -> Result<Var> {
        let y = g.linear(flat, p(wn)?, Some(p(bn)?))?;
        g.reshape(y, &[n, l, width])
    };
    let q = project(g, "wq", "bq", config.key_dim)?;
    let k = project(g, "wk", "bk", config.key_dim)?;
    let v = project(g, "wv", "bv", config.value_dim)?;
    let attended = g.attention(q, k, v, mask.as_ref())?;
    let attended = g.reshape(attended, &[n * l, config.value_dim])?;
    let m = g.linear(attended, p("wo")?, Some(p("bo")?))?;
    let m = g.reshape(m, &[n, l, c])?;
    let m = g.from_locations(m, h, w)?;
    g.add(x, m)
}

/// Apply the block to `L x C` features laid out on an `h x w` grid
/// (`h * w == L`). Parameters are named `wq bq wk bk wv bv wo bo`.
pub fn self_attention<T: Real>(
    features: &Tensor<T>,
    grid: (usize, usize),
    params: &ParamSet<T>,
    config: &AttentionConfig,
) -> Result<Tensor<T>> {
    config.validate()?;
    let (l, c) = match *features.shape() {
        [l, c] if l >= 1 && c >= 1 => (l, c),
        ref s => return Err(Error::Shape(format!("features must be L x C, got {s:?}"))),
    };
    if grid.0 * grid.1 != l {
        return Err(Error::Shape(format!(
            "{}x{} grid for {l} locations",
            grid.0, grid.1
        )));
    }
    let mut g = Graph::new();
    let mut scoped = ParamSet::new();
    for (k, v) in params.iter() {
        scoped.insert(format!("sa.{k}"), v.clone());
    }
    let bound = scoped.bind(&mut g, false);
    let nchw = features.transpose2().reshape(&[1, c, grid.0, grid.1])?;
    let x = g.constant(nchw);
    let y = self_attention_graph(&mut g, x, &bound, "sa", config)?;
    Ok(g.value(y).clone().reshape(&[c, l])?.transpose2())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn identity_params(c: usize, dk: usize) -> ParamSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        p.insert("wq", normal_tensor(&mut rng, &[c, dk], 1.0));
        p.insert("bq", Tensor::zeros(&[dk]));
        p.insert("wk", normal_tensor(&mut rng, &[c, dk], 1.0));
        p.insert("bk", Tensor::zeros(&[dk]));
        p.insert("wv", Tensor::eye(c));
        p.insert("bv", Tensor::zeros(&[c]));
        p.insert("wo", Tensor::eye(c));
        p.insert("bo", Tensor::zeros(&[c]));
        p
    }

    #[test]
    fn singleton_footprint_doubles_input() {
        let x = Tensor::from_vec(&[6, 2], (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let cfg = AttentionConfig {
            footprint: Footprint::Window(0),
            key_dim: 2,
            value_dim: 2,
        };
        let y = self_attention(&x, (2, 3), &identity_params(2, 2), &cfg).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_location_hand_computation() {
        // C = 1, d_k = 1, wq = 1, wk = 2, value/output identity.
        let mut p = identity_params(1, 1);
        p.insert("wq", Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        p.insert("wk", Tensor::from_vec(&[1, 1], vec![2.0]).unwrap());
        let x = Tensor::from_vec(&[2, 1], vec![1.0, -0.5]).unwrap();
        let y = self_attention(&x, (1, 2), &p, &AttentionConfig::global(1, 1)).unwrap();
        let xs = [1.0f64, -0.5];
        for i in 0..2 {
            let q = xs[i];
            let s: Vec<f64> = xs.iter().map(|&xj| q * 2.0 * xj).collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            let m: f64 = s.iter().zip(xs).map(|(v, xj)| v.exp() / z * xj).sum();
            assert!((y.data()[i] - (xs[i] + m)).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AttentionConfig::global(2, 3);
        let raw: ParamSet<f64> = cfg.init("sa", 5, &mut rng).unwrap();
        let mut p = ParamSet::new();
        for (k, v) in raw.iter() {
            p.insert(k.trim_start_matches("sa."), v.clone());
        }
        let x = normal_tensor(&mut rng, &[12, 5], 1.0);
        let y = self_attention(&x, (3, 4), &p, &cfg).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn window_too_large_is_config_error() {
        let cfg = AttentionConfig {
            footprint: Footprint::Window(4),
            key_dim: 1,
            value_dim: 1,
        };
        assert!(matches!(cfg.mask(4, 4), Err(Error::Config(_))));
        assert!(cfg.mask(5, 5).is_ok());
    }

    #[test]
    fn zero_widths_rejected() {
        assert!(AttentionConfig::global(0, 1).validate().is_err());
        assert!(AttentionConfig::global(1, 0).validate().is_err());
    }
}
