//! Style-similarity graph, GCN auto-encoder embeddings and the
//! gradual-change ordering.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::palette::StyleVector;
use crate::params::{Adam, AdamConfig, ParamSet};
use crate::tensor::{Real, Tensor};

/// Symmetrized kNN graph over feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleGraph {
    /// `N x D` node features.
    pub features: Tensor<f64>,
    /// Row-major `N x N`, entries 0 or 1, zero diagonal.
    pub adjacency: Vec<u8>,
    /// Row sums of adjacency plus self-loop.
    pub degrees: Vec<usize>,
    pub norm_adjacency: Tensor<f64>,
}

impl StyleGraph {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j] == 1
    }

    /// Build from an explicit symmetric 0/1 adjacency.
    pub fn from_adjacency(features: Tensor<f64>, adjacency: Vec<u8>) -> Result<Self> {
        let n = features.shape().first().copied().unwrap_or(0);
        if features.shape().len() != 2 || adjacency.len() != n * n {
            return Err(Error::Shape(format!(
                "features {:?} with {} adjacency entries",
                features.shape(),
                adjacency.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[i * n + j];
                if a > 1 || a != adjacency[j * n + i] || (i == j && a != 0) {
                    return Err(Error::Shape(
                        "adjacency must be symmetric 0/1 with an empty diagonal".into(),
                    ));
                }
            }
        }
        let degrees = (0..n)
            .map(|i| {
                1 + adjacency[i * n..(i + 1) * n]
                    .iter()
                    .map(|&a| a as usize)
                    .sum::<usize>()
            })
            .collect();
        let mut g = Self {
            features,
            adjacency,
            degrees,
            norm_adjacency: Tensor::zeros(&[n, n]),
        };
        g.norm_adjacency = normalize_adjacency(&g);
        Ok(g)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized k-nearest-neighbor graph over `rows`.
pub fn build_graph_from_rows(rows: &[Vec<f64>], k: usize) -> Result<StyleGraph> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "graph needs at least 2 nodes, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!("k = {k} outside 1..{n}")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows of differing lengths".into()));
    }
    let mut adjacency = vec![0u8; n * n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (squared_distance(&rows[i], &rows[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &others[..k] {
            adjacency[i * n + j] = 1;
            adjacency[j * n + i] = 1;
        }
    }
    let features = Tensor::from_vec(&[n, d], rows.concat())?;
    StyleGraph::from_adjacency(features, adjacency)
}

pub fn build_graph(style_vectors: &[StyleVector], k: usize) -> Result<StyleGraph> {
    let rows: Vec<Vec<f64>> = style_vectors.iter().map(|v| v.values.clone()).collect();
    build_graph_from_rows(&rows, k)
}

/// `D^{-1/2} (E + I) D^{-1/2}` with `D` the row sums of `E + I`.
pub fn normalize_adjacency(graph: &StyleGraph) -> Tensor<f64> {
    let n = graph.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let a = if i == j {
                1.0
            } else {
                f64::from(graph.adjacency[i * n + j])
            };
            if a != 0.0 {
                out.set2(
                    i,
                    j,
                    a / ((graph.degrees[i] * graph.degrees[j]) as f64).sqrt(),
                );
            }
        }
    }
    out
}

/// `ReLU(A H W)`.
pub fn gcn_layer<T: Real>(h: &Tensor<T>, a_norm: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let n = h.shape().first().copied().unwrap_or(0);
    if a_norm.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {n} nodes",
            a_norm.shape()
        )));
    }
    let y = a_norm.matmul(h)?.matmul(w)?;
    Ok(y.map(|v| v.max(T::zero())))
}

/// One propagation `A H W` on the tape, optionally rectified.
pub fn gcn_graph<T: Real>(g: &mut Graph<T>, a: Var, h: Var, w: Var, rectify: bool) -> Result<Var> {
    let ah = g.matmul(a, h)?;
    let y = g.matmul(ah, w)?;
    Ok(if rectify { g.relu(y) } else { y })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            out_dim: 16,
            steps: 500,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    /// `N x F`.
    pub z: Tensor<f64>,
}

impl NodeEmbedding {
    pub fn len(&self) -> usize {
        self.z.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.z.dim(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.dims();
        &self.z.data()[i * f..(i + 1) * f]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        squared_distance(self.row(i), self.row(j)).sqrt()
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-r..r)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("sized above")
}

/// Encoder `Z = A ReLU(A V W1) W2`.
pub fn encoder_graph(g: &mut Graph<f64>, graph: &StyleGraph, w1: Var, w2: Var) -> Result<Var> {
    let a = g.constant(graph.norm_adjacency.clone());
    let v = g.constant(graph.features.clone());
    let h = gcn_graph(g, a, v, w1, true)?;
    gcn_graph(g, a, h, w2, false)
}

/// Class-balanced reconstruction loss of `sigmoid(Z Z^T)` against `E + I`.
fn reconstruction_loss(g: &mut Graph<f64>, graph: &StyleGraph, z: Var) -> Result<Var> {
    let n = graph.len();
    let zt = g.transpose(z)?;
    let logits = g.matmul(z, zt)?;
    let mut targets = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || graph.edge(i, j) {
                targets[i * n + j] = 1.0;
            }
        }
    }
    let total = (n * n) as f64;
    let positives = targets.iter().sum::<f64>();
    let negatives = total - positives;
    let pos_weight = if positives > 0.0 {
        negatives / positives
    } else {
        1.0
    };
    let norm = if negatives > 0.0 {
        total / (2.0 * negatives)
    } else {
        1.0
    };
    let weights = targets
        .iter()
        .map(|&t| if t == 1.0 { pos_weight } else { 1.0 })
        .collect();
    let flat = g.reshape(logits, &[n * n])?;
    let bce = g.bce_with_logits(flat, targets, Some(weights))?;
    Ok(g.scale(bce, norm))
}

/// Train the graph auto-encoder; returns the embedding and per-step losses.
pub fn embed(graph: &StyleGraph, config: &EmbedConfig) -> Result<(NodeEmbedding, Vec<f64>)> {
    if config.out_dim < 2 || config.hidden_dim == 0 {
        return Err(Error::Config(
            "embedding needs at least 2 output and 1 hidden dimensions".into(),
        ));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let d = graph.features.dim(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    params.insert("w1", glorot(&mut rng, d, config.hidden_dim));
    params.insert("w2", glorot(&mut rng, config.hidden_dim, config.out_dim));
    let mut adam = Adam::new(AdamConfig::new(config.learning_rate, 0.9, 0.999), &params);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let z = encoder_graph(&mut g, graph, bound.var("w1")?, bound.var("w2")?)?;
        let loss = reconstruction_loss(&mut g, graph, z)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("auto-encoder loss {value}"),
            });
        }
        losses.push(value);
        let mut grads = g.backward(loss)?;
        let grads = bound.gradients(&g, &mut grads);
        adam.update(&mut params, &grads)?;
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let z = encoder_graph(&mut g, graph, bound.var("w1")?, bound.var("w2")?)?;
    let z = g.value(z).clone();
    if !z.all_finite() {
        return Err(Error::Divergence {
            step: config.steps,
            detail: "non-finite embedding".into(),
        });
    }
    Ok((NodeEmbedding { z }, losses))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    pub sequence: Vec<usize>,
}

impl Ordering {
    pub fn is_permutation(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        self.sequence.len() == n
            && self
                .sequence
                .iter()
                .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
    }
}

/// Node closest to the mean embedding (lowest index on ties).
pub fn default_start(embedding: &NodeEmbedding) -> usize {
    let (n, f) = (embedding.len(), embedding.dims());
    let mut centroid = vec![0.0; f];
    for i in 0..n {
        for (c, v) in centroid.iter_mut().zip(embedding.row(i)) {
            *c += v / n as f64;
        }
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let d = squared_distance(embedding.row(i), &centroid);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Greedy nearest-unvisited walk from `start`; ties go to the lowest index.
pub fn sequence(embedding: &NodeEmbedding, start: usize) -> Result<Ordering> {
    let n = embedding.len();
    if start >= n {
        return Err(Error::Range(format!("start node {start} of {n}")));
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    visited[current] = true;
    order.push(current);
    for _ in 1..n {
        let mut next = None;
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !visited[j] {
                let d = squared_distance(embedding.row(current), embedding.row(j));
                if d < best {
                    best = d;
                    next = Some(j);
                }
            }
        }
        current = next.expect("an unvisited node remains");
        visited[current] = true;
        order.push(current);
    }
    Ok(Ordering { sequence: order })
}

/// Sum of consecutive Euclidean distances along `order`.
pub fn path_length(embedding: &NodeEmbedding, order: &[usize]) -> f64 {
    order
        .windows(2)
        .map(|w| embedding.distance(w[0], w[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingFile {
    pub order: Vec<usize>,
    pub start: usize,
    pub embedding_dims: usize,
}

pub fn write_ordering(path: &Path, ordering: &Ordering, embedding_dims: usize) -> Result<()> {
    let file = OrderingFile {
        order: ordering.sequence.clone(),
        start: ordering.sequence.first().copied().unwrap_or(0),
        embedding_dims,
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ordering(path: &Path) -> Result<OrderingFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x, 0.0]).collect()
    }

    #[test]
    fn two_nodes() {
        let g = build_graph_from_rows(&points(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(g.adjacency, vec![0, 1, 1, 0]);
        assert_eq!(g.degrees, vec![2, 2]);
        assert!((g.norm_adjacency.at2(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn collinear_middle_joins_both_ends() {
        let g = build_graph_from_rows(&points(&[0.0, 1.0, 2.5]), 1).unwrap();
        assert!(g.edge(1, 0) && g.edge(1, 2));
        assert!(!g.edge(0, 2));
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(
            build_graph_from_rows(&points(&[0.0, 1.0]), 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_graph_from_rows(&points(&[0.0, 1.0]), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_graph_from_rows(&points(&[0.0]), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicates_use_index_order() {
        let g = build_graph_from_rows(&points(&[0.0, 0.0, 0.0, 5.0]), 1).unwrap();
        assert!(g.edge(0, 1) && g.edge(2, 0) && g.edge(3, 0));
    }

    #[test]
    fn isolated_node_keeps_self_loop() {
        let features = Tensor::zeros(&[3, 1]);
        let g = StyleGraph::from_adjacency(features, vec![0, 1, 0, 1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(g.norm_adjacency.at2(2, 2), 1.0);
        assert!((g.norm_adjacency.at2(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gcn_identity_and_kill() {
        let h = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        let eye = Tensor::<f64>::eye(2);
        assert_eq!(gcn_layer(&h, &eye, &eye).unwrap(), h);
        let neg = eye.map(|v| -v);
        assert!(gcn_layer(&h, &eye, &neg)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(
            gcn_layer(&h, &Tensor::eye(3), &eye),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn sequence_basics() {
        let e = NodeEmbedding {
            z: Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, 3.0, 0.0]).unwrap(),
        };
        assert_eq!(sequence(&e, 0).unwrap().sequence, vec![0, 1, 2]);
        assert_eq!(default_start(&e), 1);
        let one = NodeEmbedding {
            z: Tensor::zeros(&[1, 2]),
        };
        assert_eq!(sequence(&one, 0).unwrap().sequence, vec![0]);
        assert!(matches!(sequence(&one, 1), Err(Error::Range(_))));
    }

    #[test]
    fn zero_steps_is_seeded_forward() {
        let g = build_graph_from_rows(&points(&[0.0, 1.0, 2.0, 7.0]), 1).unwrap();
        let cfg = EmbedConfig {
            hidden_dim: 4,
            out_dim: 2,
            steps: 0,
            ..EmbedConfig::default()
        };
        let (a, losses) = embed(&g, &cfg).unwrap();
        let (b, _) = embed(&g, &cfg).unwrap();
        assert!(losses.is_empty());
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w1 = glorot(&mut rng, 2, 4);
        let w2 = glorot(&mut rng, 4, 2);
        let h = gcn_layer(&g.features, &g.norm_adjacency, &w1).unwrap();
        let z = g.norm_adjacency.matmul(&h).unwrap().matmul(&w2).unwrap();
        for (x, y) in a.z.data().iter().zip(z.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
