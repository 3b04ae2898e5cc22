//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value plus whatever
//! the backward pass needs. [`Graph::backward`] walks the tape in reverse.
//! Image tensors are `N x C x H x W`; matrices are 2-D row-major.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean `L x L` mask; `true` marks keys visible from a query.
pub type AttentionMask = Rc<Vec<bool>>;

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfold `batch` images (NCHW) into a `rows x (batch * positions)` matrix.
    fn im2col<T: Real>(&self, img: &[T], batch: usize) -> Vec<T> {
        let p = self.positions();
        let ncols = batch * p;
        let mut cols = vec![T::zero(); self.rows() * ncols];
        let plane = self.height * self.width;
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                    for n in 0..batch {
                        let src = &img[(n * self.channels + c) * plane..][..plane];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * self.width..][..self.width];
                            let dst = &mut dst_row[n * p + oy * self.out_w..][..self.out_w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.width as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatter-add columns back into images.
    fn col2im<T: Real>(&self, cols: &[T], batch: usize) -> Vec<T> {
        let p = self.positions();
        let ncols = batch * p;
        let plane = self.height * self.width;
        let mut img = vec![T::zero(); batch * self.channels * plane];
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for n in 0..batch {
                        let dst = &mut img[(n * self.channels + c) * plane..][..plane];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.height as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * self.width..][..self.width];
                            let src = &src_row[n * p + oy * self.out_w..][..self.out_w];
                            for (ox, &s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < self.width as isize {
                                    let d = &mut dst_row[ix as usize];
                                    *d = *d + s;
                                }
                            }
                        }
                    }
                }
            }
        }
        img
    }
}

/// `[N, C, P]` -> `[C, N * P]`.
fn batch_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..][..p].copy_from_slice(&x[(ni * c + ci) * p..][..p]);
        }
    }
    out
}

/// `[C, N * P]` -> `[N, C, P]`.
fn channel_to_batch_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[(ni * c + ci) * p..][..p].copy_from_slice(&x[ci * n * p + ni * p..][..p]);
        }
    }
    out
}

/// Reflect index into `0..n` without repeating the edge sample.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeometry,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: ConvGeometry,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    ConcatBatch {
        parts: Vec<Var>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    ToLocations {
        x: Var,
    },
    FromLocations {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<T>,
    },
    GlobalAvgPool {
        x: Var,
    },
    ScaleChannels {
        x: Var,
        g: Var,
    },
    Resample {
        x: Var,
        rows: Rc<Tensor<T>>,
        cols: Rc<Tensor<T>>,
    },
    Scale {
        x: Var,
        c: T,
    },
    MeanSquaredError {
        a: Var,
        b: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
        weights: Option<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A tape of tensor operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims4(&self, v: Var, what: &str) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => Err(shape_err(format!("{what} expects NCHW input, got {s:?}"))),
        }
    }

    fn dims2(&self, v: Var, what: &str) -> Result<[usize; 2]> {
        match *self.shape(v) {
            [r, c] => Ok([r, c]),
            ref s => Err(shape_err(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    fn check_bias(&self, b: Option<Var>, len: usize, what: &str) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != len {
                return Err(shape_err(format!(
                    "{what} bias has {} entries, expected {len}",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    /// 2-D convolution with zero padding. `w` is `[C_out, C_in, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, ci, h, wd] = self.dims4(x, "conv2d")?;
        let [co, wci, k, k2] = self.dims4(w, "conv2d weight")?;
        if wci != ci || k != k2 || stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(format!(
                "conv2d input {:?} weight {:?} stride {stride} pad {pad}",
                self.shape(x),
                self.shape(w)
            )));
        }
        self.check_bias(b, co, "conv2d")?;
        let geo = ConvGeometry {
            channels: ci,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = geo.im2col(self.value(x).data(), n);
        let p = geo.positions();
        let mut out = vec![T::zero(); co * n * p];
        T::gemm(
            co,
            geo.rows(),
            n * p,
            T::one(),
            self.value(w).data(),
            (geo.rows() as isize, 1),
            &cols,
            ((n * p) as isize, 1),
            T::zero(),
            &mut out,
            ((n * p) as isize, 1),
        );
        let mut out = channel_to_batch_major(&out, n, co, p);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, co, p);
        }
        let value = Tensor::from_vec(&[n, co, geo.out_h, geo.out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geo, cols }, &inputs))
    }

    /// Transposed convolution. `w` is `[C_in, C_out, k, k]`; output side is
    /// `(side - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [n, ci, h, wd] = self.dims4(x, "conv_transpose2d")?;
        let [wci, co, k, k2] = self.dims4(w, "conv_transpose2d weight")?;
        if wci != ci || k != k2 || stride == 0 || (h - 1) * stride + k < 2 * pad + 1 {
            return Err(shape_err(format!(
                "conv_transpose2d input {:?} weight {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        self.check_bias(b, co, "conv_transpose2d")?;
        let out_h = (h - 1) * stride + k - 2 * pad;
        let out_w = (wd - 1) * stride + k - 2 * pad;
        let geo = ConvGeometry {
            channels: co,
            height: out_h,
            width: out_w,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let p = h * wd;
        let xmat = batch_to_channel_major(self.value(x).data(), n, ci, p);
        let mut cols = vec![T::zero(); geo.rows() * n * p];
        // cols = W^T [Co*k*k, Ci] @ xmat [Ci, N*P]
        T::gemm(
            geo.rows(),
            ci,
            n * p,
            T::one(),
            self.value(w).data(),
            (1, geo.rows() as isize),
            &xmat,
            ((n * p) as isize, 1),
            T::zero(),
            &mut cols,
            ((n * p) as isize, 1),
        );
        let mut out = geo.col2im(&cols, n);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), n, co, out_h * out_w);
        }
        let value = Tensor::from_vec(&[n, co, out_h, out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geo }, &inputs))
    }

    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "reflect_pad")?;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ph * pw];
        for plane in 0..n * c {
            let s = &src[plane * h * w..][..h * w];
            let d = &mut out[plane * ph * pw..][..ph * pw];
            for y in 0..ph {
                let sy = reflect_index(y as isize - pad as isize, h);
                for xx in 0..pw {
                    let sx = reflect_index(xx as isize - pad as isize, w);
                    d[y * pw + xx] = s[sy * w + sx];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ph, pw], out)?;
        Ok(self.push(value, Op::ReflectPad { x, pad }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.dims4(parts[0], "concat")?;
        let mut total_c = 0;
        for &p in parts {
            let [n, c, h, w] = self.dims4(p, "concat")?;
            if n != first[0] || h != first[2] || w != first[3] {
                return Err(shape_err(format!(
                    "concat of {:?} and {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            total_c += c;
        }
        let [n, _, h, w] = first;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for ni in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[ni * c * plane..][..c * plane]);
            }
        }
        let value = Tensor::from_vec(&[n, total_c, h, w], out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Concatenate tensors of equal trailing shape along the leading axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut n = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p)[1..] != tail[..] {
                return Err(shape_err(format!(
                    "batch concat of {:?} and {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            n += self.shape(p)[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&tail);
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            value,
            Op::ConcatBatch {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "instance_norm")?;
        let plane = h * w;
        let eps = T::lit(eps);
        let count = T::lit(plane as f64);
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for chunk in out.chunks_mut(plane) {
            let mean = chunk.iter().copied().sum::<T>() / count;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            for v in chunk.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    /// `x [M, K] @ w [K, N] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [m, k] = self.dims2(x, "linear")?;
        let [wk, n] = self.dims2(w, "linear weight")?;
        if wk != k {
            return Err(shape_err(format!(
                "linear input {:?} weight {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        self.check_bias(b, n, "linear")?;
        let mut value = self.value(x).matmul(self.value(w))?;
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            for row in value.data_mut().chunks_mut(n) {
                for (v, &bb) in row.iter_mut().zip(&bias) {
                    *v = *v + bb;
                }
            }
        }
        debug_assert_eq!(value.shape(), &[m, n]);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.dims2(x, "transpose")?;
        let value = self.value(x).transpose2();
        Ok(self.push(value, Op::Transpose { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// `[N, C, H, W]` -> `[N, H*W, C]`.
    pub fn to_locations(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "to_locations")?;
        let l = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            for ci in 0..c {
                for li in 0..l {
                    out[(ni * l + li) * c + ci] = src[(ni * c + ci) * l + li];
                }
            }
        }
        let value = Tensor::from_vec(&[n, l, c], out)?;
        Ok(self.push(value, Op::ToLocations { x }, &[x]))
    }

    /// `[N, H*W, C]` -> `[N, C, H, W]`.
    pub fn from_locations(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, l, c) = match *self.shape(x) {
            [n, l, c] if l == h * w => (n, l, c),
            ref s => return Err(shape_err(format!("from_locations of {s:?} into {h}x{w}"))),
        };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            for li in 0..l {
                for ci in 0..c {
                    out[(ni * c + ci) * l + li] = src[(ni * l + li) * c + ci];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::FromLocations { x }, &[x]))
    }

    /// Scaled dot-product attention with a scalar weight per (query, key)
    /// pair. `q`, `k` are `[N, L, d_k]`, `v` is `[N, L, d_v]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let (n, l, dk) = match *self.shape(q) {
            [n, l, d] => (n, l, d),
            ref s => return Err(shape_err(format!("attention query {s:?}"))),
        };
        let dv = match *self.shape(v) {
            [vn, vl, d] if vn == n && vl == l => d,
            ref s => return Err(shape_err(format!("attention value {s:?}"))),
        };
        if self.shape(k) != [n, l, dk] {
            return Err(shape_err(format!("attention key {:?}", self.shape(k))));
        }
        if let Some(m) = mask {
            if m.len() != l * l {
                return Err(shape_err(format!("attention mask has {} entries", m.len())));
            }
        }
        let scale = T::one() / T::lit(dk as f64).sqrt();
        let mut probs = vec![T::zero(); n * l * l];
        let mut out = vec![T::zero(); n * l * dv];
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        for ni in 0..n {
            let p = &mut probs[ni * l * l..][..l * l];
            T::gemm(
                l,
                dk,
                l,
                scale,
                &qd[ni * l * dk..][..l * dk],
                (dk as isize, 1),
                &kd[ni * l * dk..][..l * dk],
                (1, dk as isize),
                T::zero(),
                p,
                (l as isize, 1),
            );
            for i in 0..l {
                let row = &mut p[i * l..][..l];
                let visible = |j: usize| mask.is_none_or(|m| m[i * l + j]);
                let mut max = T::neg_infinity();
                for (j, &s) in row.iter().enumerate() {
                    if visible(j) && s > max {
                        max = s;
                    }
                }
                let mut total = T::zero();
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if visible(j) {
                        (*s - max).exp()
                    } else {
                        T::zero()
                    };
                    total = total + *s;
                }
                for s in row.iter_mut() {
                    *s = *s / total;
                }
            }
            T::gemm(
                l,
                l,
                dv,
                T::one(),
                p,
                (l as isize, 1),
                &vd[ni * l * dv..][..l * dv],
                (dv as isize, 1),
                T::zero(),
                &mut out[ni * l * dv..][..l * dv],
                (dv as isize, 1),
            );
        }
        let value = Tensor::from_vec(&[n, l, dv], out)?;
        Ok(self.push(value, Op::Attention { q, k, v, probs }, &[q, k, v]))
    }

    /// `[N, C, H, W]` -> `[N, C]` channel means.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "global_avg_pool")?;
        let count = T::lit((h * w) as f64);
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / count)
            .collect();
        let value = Tensor::from_vec(&[n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }, &[x]))
    }

    /// Multiply each `[n, c]` plane of `x` by `g[n, c]`.
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "scale_channels")?;
        if self.shape(g) != [n, c] {
            return Err(shape_err(format!("channel gate {:?}", self.shape(g))));
        }
        let gate = self.value(g).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (plane, &gv) in out.chunks_mut(h * w).zip(&gate) {
            for v in plane.iter_mut() {
                *v = *v * gv;
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::ScaleChannels { x, g }, &[x, g]))
    }

    /// Separable linear resampling: each plane becomes `rows @ plane @ cols^T`.
    pub fn resample(&mut self, x: Var, rows: Rc<Tensor<T>>, cols: Rc<Tensor<T>>) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "resample")?;
        if rows.shape().len() != 2
            || rows.dim(1) != h
            || cols.shape().len() != 2
            || cols.dim(1) != w
        {
            return Err(shape_err(format!(
                "resample of {:?} with {:?} / {:?}",
                self.shape(x),
                rows.shape(),
                cols.shape()
            )));
        }
        let out = resample_planes(self.value(x).data(), n * c, h, w, &rows, &cols);
        let value = Tensor::from_vec(&[n, c, rows.dim(0), cols.dim(0)], out)?;
        Ok(self.push(value, Op::Resample { x, rows, cols }, &[x]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x, c }, &[x])
    }

    /// Mean over all elements of `(a - b)^2`, as a 1-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "mse of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let count = T::lit(self.value(a).len() as f64);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::MeanSquaredError { a, b },
            &[a, b],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// with optional per-element weights.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: Vec<T>,
        weights: Option<Vec<T>>,
    ) -> Result<Var> {
        let len = self.value(logits).len();
        if targets.len() != len || weights.as_ref().is_some_and(|w| w.len() != len) {
            return Err(shape_err(format!(
                "bce over {len} logits with {} targets",
                targets.len()
            )));
        }
        let count = T::lit(len as f64);
        let mut total = T::zero();
        for (i, (&x, &t)) in self.value(logits).data().iter().zip(&targets).enumerate() {
            let l = x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln();
            total = total + weights.as_ref().map_or(T::one(), |w| w[i]) * l;
        }
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a 1-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Vec<T>) -> Result<()> {
        let t = Tensor::from_vec(self.shape(v), g)?;
        self.accumulate(grads, v, t);
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geo, cols } => {
                let n = self.shape(*x)[0];
                let co = self.shape(*w)[0];
                let p = geo.positions();
                let dmat = batch_to_channel_major(dy.data(), n, co, p);
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); co * geo.rows()];
                    T::gemm(
                        co,
                        n * p,
                        geo.rows(),
                        T::one(),
                        &dmat,
                        ((n * p) as isize, 1),
                        cols,
                        (1, (n * p) as isize),
                        T::zero(),
                        &mut dw,
                        (geo.rows() as isize, 1),
                    );
                    self.accumulate_vec(grads, *w, dw)?;
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate_vec(grads, *b, channel_sums(dy.data(), n, co, p))?;
                    }
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); geo.rows() * n * p];
                    T::gemm(
                        geo.rows(),
                        co,
                        n * p,
                        T::one(),
                        self.value(*w).data(),
                        (1, geo.rows() as isize),
                        &dmat,
                        ((n * p) as isize, 1),
                        T::zero(),
                        &mut dcols,
                        ((n * p) as isize, 1),
                    );
                    self.accumulate_vec(grads, *x, geo.col2im(&dcols, n))?;
                }
            }
            Op::ConvTranspose2d { x, w, b, geo } => {
                let [n, ci, h, wd] = self.dims4(*x, "conv_transpose2d")?;
                let p = h * wd;
                let co = geo.channels;
                let dcols = geo.im2col(dy.data(), n);
                if self.wants(*w) {
                    let xmat = batch_to_channel_major(self.value(*x).data(), n, ci, p);
                    let mut dw = vec![T::zero(); ci * geo.rows()];
                    T::gemm(
                        ci,
                        n * p,
                        geo.rows(),
                        T::one(),
                        &xmat,
                        ((n * p) as isize, 1),
                        &dcols,
                        (1, (n * p) as isize),
                        T::zero(),
                        &mut dw,
                        (geo.rows() as isize, 1),
                    );
                    self.accumulate_vec(grads, *w, dw)?;
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let plane = geo.height * geo.width;
                        self.accumulate_vec(grads, *b, channel_sums(dy.data(), n, co, plane))?;
                    }
                }
                if self.wants(*x) {
                    let mut dxmat = vec![T::zero(); ci * n * p];
                    T::gemm(
                        ci,
                        geo.rows(),
                        n * p,
                        T::one(),
                        self.value(*w).data(),
                        (geo.rows() as isize, 1),
                        &dcols,
                        ((n * p) as isize, 1),
                        T::zero(),
                        &mut dxmat,
                        ((n * p) as isize, 1),
                    );
                    self.accumulate_vec(grads, *x, channel_to_batch_major(&dxmat, n, ci, p))?;
                }
            }
            Op::ReflectPad { x, pad } => {
                let [n, c, h, w] = self.dims4(*x, "reflect_pad")?;
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut dx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let s = &dy.data()[plane * ph * pw..][..ph * pw];
                    let d = &mut dx[plane * h * w..][..h * w];
                    for yy in 0..ph {
                        let sy = reflect_index(yy as isize - *pad as isize, h);
                        for xx in 0..pw {
                            let sx = reflect_index(xx as isize - *pad as isize, w);
                            d[sy * w + sx] = d[sy * w + sx] + s[yy * pw + xx];
                        }
                    }
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Concat { parts } => {
                let (n, total_c, h, w) = (y.dim(0), y.dim(1), y.dim(2), y.dim(3));
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut g = Vec::with_capacity(n * c * plane);
                        for ni in 0..n {
                            g.extend_from_slice(
                                &dy.data()[(ni * total_c + offset) * plane..][..c * plane],
                            );
                        }
                        self.accumulate_vec(grads, p, g)?;
                    }
                    offset += c;
                }
            }
            Op::ConcatBatch { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        self.accumulate_vec(grads, p, dy.data()[offset..offset + len].to_vec())?;
                    }
                    offset += len;
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let [_, _, h, w] = self.dims4(*x, "instance_norm")?;
                let plane = h * w;
                let count = T::lit(plane as f64);
                let mut dx = vec![T::zero(); y.len()];
                for (i, inv) in inv_std.iter().enumerate() {
                    let yy = &y.data()[i * plane..][..plane];
                    let g = &dy.data()[i * plane..][..plane];
                    let mean_g = g.iter().copied().sum::<T>() / count;
                    let mean_gy = g.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((d, &gv), &yv) in dx[i * plane..][..plane].iter_mut().zip(g).zip(yy) {
                        *d = *inv * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::LeakyRelu { x, slope } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&xv, &g)| if xv > T::zero() { g } else { g * *slope })
                    .collect();
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Tanh { x } => {
                let dx = y
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&t, &g)| g * (T::one() - t * t))
                    .collect();
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Sigmoid { x } => {
                let dx = y
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Linear { x, w, b } => {
                if self.wants(*x) {
                    let g = dy.matmul(&self.value(*w).transpose2())?;
                    self.accumulate(grads, *x, g);
                }
                if self.wants(*w) {
                    let g = self.value(*x).transpose2().matmul(dy)?;
                    self.accumulate(grads, *w, g);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let n = dy.dim(1);
                        let mut g = vec![T::zero(); n];
                        for row in dy.data().chunks(n) {
                            for (a, &v) in g.iter_mut().zip(row) {
                                *a = *a + v;
                            }
                        }
                        self.accumulate_vec(grads, *b, g)?;
                    }
                }
            }
            Op::Matmul { a, b } => {
                if self.wants(*a) {
                    let g = dy.matmul(&self.value(*b).transpose2())?;
                    self.accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = self.value(*a).transpose2().matmul(dy)?;
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Transpose { x } => {
                self.accumulate(grads, *x, dy.transpose2());
            }
            Op::Reshape { x } => {
                self.accumulate_vec(grads, *x, dy.data().to_vec())?;
            }
            Op::ToLocations { x } => {
                let [n, c, h, w] = self.dims4(*x, "to_locations")?;
                let l = h * w;
                let mut dx = vec![T::zero(); dy.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        for li in 0..l {
                            dx[(ni * c + ci) * l + li] = dy.data()[(ni * l + li) * c + ci];
                        }
                    }
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::FromLocations { x } => {
                let (n, l, c) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let mut dx = vec![T::zero(); dy.len()];
                for ni in 0..n {
                    for li in 0..l {
                        for ci in 0..c {
                            dx[(ni * l + li) * c + ci] = dy.data()[(ni * c + ci) * l + li];
                        }
                    }
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Attention { q, k, v, probs } => {
                let (n, l, dk) = (self.shape(*q)[0], self.shape(*q)[1], self.shape(*q)[2]);
                let dv = self.shape(*v)[2];
                let scale = T::one() / T::lit(dk as f64).sqrt();
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut dq = vec![T::zero(); n * l * dk];
                let mut dk_ = vec![T::zero(); n * l * dk];
                let mut dvv = vec![T::zero(); n * l * dv];
                let mut ds = vec![T::zero(); l * l];
                for ni in 0..n {
                    let p = &probs[ni * l * l..][..l * l];
                    let go = &dy.data()[ni * l * dv..][..l * dv];
                    // dP = dO @ V^T
                    T::gemm(
                        l,
                        dv,
                        l,
                        T::one(),
                        go,
                        (dv as isize, 1),
                        &vd[ni * l * dv..][..l * dv],
                        (1, dv as isize),
                        T::zero(),
                        &mut ds,
                        (l as isize, 1),
                    );
                    // dV = P^T @ dO
                    T::gemm(
                        l,
                        l,
                        dv,
                        T::one(),
                        p,
                        (1, l as isize),
                        go,
                        (dv as isize, 1),
                        T::zero(),
                        &mut dvv[ni * l * dv..][..l * dv],
                        (dv as isize, 1),
                    );
                    for i in 0..l {
                        let pr = &p[i * l..][..l];
                        let dr = &mut ds[i * l..][..l];
                        let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                        for (d, &pv) in dr.iter_mut().zip(pr) {
                            *d = pv * (*d - dot);
                        }
                    }
                    T::gemm(
                        l,
                        l,
                        dk,
                        scale,
                        &ds,
                        (l as isize, 1),
                        &kd[ni * l * dk..][..l * dk],
                        (dk as isize, 1),
                        T::zero(),
                        &mut dq[ni * l * dk..][..l * dk],
                        (dk as isize, 1),
                    );
                    T::gemm(
                        l,
                        l,
                        dk,
                        scale,
                        &ds,
                        (1, l as isize),
                        &qd[ni * l * dk..][..l * dk],
                        (dk as isize, 1),
                        T::zero(),
                        &mut dk_[ni * l * dk..][..l * dk],
                        (dk as isize, 1),
                    );
                }
                self.accumulate_vec(grads, *q, dq)?;
                self.accumulate_vec(grads, *k, dk_)?;
                self.accumulate_vec(grads, *v, dvv)?;
            }
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = self.dims4(*x, "global_avg_pool")?;
                let count = T::lit((h * w) as f64);
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g / count, h * w));
                }
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::ScaleChannels { x, g } => {
                let [_, _, h, w] = self.dims4(*x, "scale_channels")?;
                let plane = h * w;
                if self.wants(*x) {
                    let gate = self.value(*g).data();
                    let mut dx = dy.data().to_vec();
                    for (p, &gv) in dx.chunks_mut(plane).zip(gate) {
                        for v in p.iter_mut() {
                            *v = *v * gv;
                        }
                    }
                    self.accumulate_vec(grads, *x, dx)?;
                }
                if self.wants(*g) {
                    let dg = dy
                        .data()
                        .chunks(plane)
                        .zip(self.value(*x).data().chunks(plane))
                        .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| u * v).sum())
                        .collect();
                    self.accumulate_vec(grads, *g, dg)?;
                }
            }
            Op::Resample { x, rows, cols } => {
                let [n, c, _, _] = self.dims4(*x, "resample")?;
                let rows_t = rows.transpose2();
                let cols_t = cols.transpose2();
                let dx =
                    resample_planes(dy.data(), n * c, rows.dim(0), cols.dim(0), &rows_t, &cols_t);
                self.accumulate_vec(grads, *x, dx)?;
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, dy.map(|g| g * *c));
            }
            Op::MeanSquaredError { a, b } => {
                let g0 = dy.data()[0];
                let count = T::lit(self.value(*a).len() as f64);
                let two = T::lit(2.0);
                let diff: Vec<T> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&x, &y)| two * g0 * (x - y) / count)
                    .collect();
                if self.wants(*b) {
                    self.accumulate_vec(grads, *b, diff.iter().map(|&d| -d).collect())?;
                }
                self.accumulate_vec(grads, *a, diff)?;
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let g0 = dy.data()[0];
                let count = T::lit(targets.len() as f64);
                let dx = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(i, (&x, &t))| {
                        let w = weights.as_ref().map_or(T::one(), |w| w[i]);
                        g0 * w * (sigmoid(x) - t) / count
                    })
                    .collect();
                self.accumulate_vec(grads, *logits, dx)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], n: usize, c: usize, p: usize) {
    for ni in 0..n {
        for (ci, &b) in bias.iter().enumerate().take(c) {
            for v in &mut out[(ni * c + ci) * p..][..p] {
                *v = *v + b;
            }
        }
    }
}

fn channel_sums<T: Real>(dy: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            *o = *o + dy[(ni * c + ci) * p..][..p].iter().copied().sum::<T>();
        }
    }
    out
}

/// `rows [Ho, H] @ plane [H, W] @ cols^T [W, Wo]` for each plane.
fn resample_planes<T: Real>(
    src: &[T],
    planes: usize,
    h: usize,
    w: usize,
    rows: &Tensor<T>,
    cols: &Tensor<T>,
) -> Vec<T> {
    let (ho, wo) = (rows.dim(0), cols.dim(0));
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        T::gemm(
            h,
            w,
            wo,
            T::one(),
            &src[p * h * w..][..h * w],
            (w as isize, 1),
            cols.data(),
            (1, w as isize),
            T::zero(),
            &mut tmp,
            (wo as isize, 1),
        );
        T::gemm(
            ho,
            h,
            wo,
            T::one(),
            rows.data(),
            (h as isize, 1),
            &tmp,
            (wo as isize, 1),
            T::zero(),
            &mut out[p * ho * wo..][..ho * wo],
            (wo as isize, 1),
        );
    }
    out
}
