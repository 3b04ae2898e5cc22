//! Named parameter sets, initialization and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Real, Tensor};

/// Parameter tensors keyed by dotted name, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Zero every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in &mut self.tensors {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Put every tensor on the tape; `trainable` decides whether they get gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Merge another set in, prefixing its names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet<T>) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

/// Parameters placed on a [`Graph`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients for every bound parameter; absent gradients become zeros.
    pub fn gradients<T: Real>(
        &self,
        g: &Graph<T>,
        grads: &mut Gradients<T>,
    ) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (k.clone(), t)
            })
            .collect()
    }
}

/// Tensor of i.i.d. `N(0, std^2)` draws.
pub fn normal_tensor<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    std: f64,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamSet<T>,
    pub second: ParamSet<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |p: &ParamSet<T>| {
            let mut z = ParamSet::new();
            for (k, v) in p.iter() {
                z.insert(k.clone(), Tensor::zeros(v.shape()));
            }
            z
        };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn update(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let correction1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let correction2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Shape(format!("no gradient for {name}")))?;
            let m = self.first.get_mut(name)?;
            let v = self.second.get_mut(name)?;
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / correction1;
                let vhat = *vv / correction2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[2], vec![1.0f64, -1.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), &p);
        let mut g = BTreeMap::new();
        g.insert(
            "w".to_string(),
            Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap(),
        );
        opt.update(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::from_vec(&[1], vec![5.0f64]).unwrap());
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), &p);
        for _ in 0..500 {
            let x = p.get("x").unwrap().data()[0];
            let mut g = BTreeMap::new();
            g.insert("x".to_string(), Tensor::scalar(2.0 * (x - 2.0)));
            opt.update(&mut p, &g).unwrap();
        }
        assert!((p.get("x").unwrap().data()[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn normal_tensor_is_seeded() {
        let a: Tensor<f32> = normal_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[4, 4], 0.02);
        let b: Tensor<f32> = normal_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[4, 4], 0.02);
        assert_eq!(a, b);
    }
}
