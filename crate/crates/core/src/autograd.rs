//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and what it needs for the backward rule. Inputs always precede the
//! nodes that consume them, so [`Graph::backward`] is a single reverse sweep.
//! Nodes whose inputs need no gradient are recorded as constants and skipped
//! by the sweep. Broadcasting is limited to scalar-by-tensor ([`Graph::scale_by`]);
//! everything else goes through explicit [`Graph::reshape`] and [`Graph::expand`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim, Error, Result};
use crate::kernels::{col2im_add, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride, padding and dilation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1, no padding, no dilation.
    pub const fn unit() -> Self {
        Self::new(1, 0, 1)
    }

    /// Stride `stride` with "same"-style padding for an odd `k`×`k` kernel.
    pub const fn same(k: usize, stride: usize) -> Self {
        Self::new(stride, k / 2, 1)
    }
}

/// Geometry of a dilated local-window attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub height: usize,
    pub width: usize,
    /// Sampled positions per axis; odd so the query sits at the centre.
    pub window: usize,
    /// Spacing between sampled positions.
    pub dilation: usize,
}

impl WindowSpec {
    /// Token index of every sampled key for every query, row-major over
    /// queries then window offsets; `None` where the offset leaves the map.
    pub fn neighbours(&self) -> Vec<Option<usize>> {
        let (h, w, win, r) = (
            self.height as isize,
            self.width as isize,
            self.window as isize,
            self.dilation as isize,
        );
        let half = win / 2;
        let mut out = Vec::with_capacity((h * w * win * win) as usize);
        for y in 0..h {
            for x in 0..w {
                for i in 0..win {
                    for j in 0..win {
                        let ky = y + (i - half) * r;
                        let kx = x + (j - half) * r;
                        out.push(
                            (ky >= 0 && ky < h && kx >= 0 && kx < w).then(|| (ky * w + kx) as usize),
                        );
                    }
                }
            }
        }
        out
    }
}

enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy {
        x: Var,
        s: Var,
    },
    Sigmoid(Var),
    Relu(Var),
    SumAll(Var),
    Mean {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Expand(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    UpsampleNearest {
        x: Var,
        factor: usize,
    },
    DepthToSpace {
        x: Var,
        factor: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        valid: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    WindowAttention {
        q: Var,
        k: Var,
        v: Var,
        neighbours: Vec<Option<usize>>,
        probs: Vec<T>,
        taps: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep.
pub struct Grads<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable parameter used by the graph, in first-use
    /// order. Parameters the loss does not depend on get zero tensors.
    pub fn into_param_grads(mut self, store: &ParamStore<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out = Vec::with_capacity(self.params.len());
        for &(id, var) in &self.params {
            if !store.get(id).requires_grad() {
                continue;
            }
            let g = self.nodes[var.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
            out.push((id, g));
        }
        out
    }
}

/// Tape of recorded operations.
pub struct Graph<'s, T: Scalar = f32> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(dim(op, format!("shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).portable_exp())
    } else {
        let e = x.portable_exp();
        e / (T::one() + e)
    }
}

fn buf<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input leaf that collects a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let store = self
            .store
            .expect("Graph::param needs a graph built with Graph::with_params");
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.requires_grad());
        self.param_vars.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(dim(
                "scale_by",
                format!("scale must hold one value, got {:?}", self.shape(s)),
            ));
        }
        let c = self.value(s).item();
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x, s]);
        Ok(self.push(t, Op::ScaleBy { x, s }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(stable_sigmoid);
        let rg = self.rg(&[x]);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(t, Op::SumAll(x), rg)
    }

    /// Mean over `axis`; the axis is removed (a vector reduces to shape `[1]`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim("mean", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        let inv = T::one() / T::from_usize(n);
        for o in 0..outer {
            for a in 0..n {
                let row = &src[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (dst, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Mean { x, axis }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| dim("concat", "nothing to concatenate"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim(
                    "concat",
                    format!("cannot join {s:?} to {base:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Repeats extents of size 1 up to `shape`. Ranks must agree.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src_shape = self.shape(x).to_vec();
        let ok = src_shape.len() == shape.len()
            && src_shape
                .iter()
                .zip(shape)
                .all(|(&s, &t)| s == t || s == 1);
        if !ok || shape.contains(&0) {
            return Err(dim("expand", format!("cannot expand {src_shape:?} to {shape:?}")));
        }
        let src = self.value(x).data();
        let out = Tensor::from_fn(shape, |i| src[expand_source(i, &src_shape, shape)]);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Expand(x), rg))
    }

    /// Slice `start..start+len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(dim(
                "narrow",
                format!("range {start}..{} invalid on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Narrow { x, axis, start }, rg))
    }

    /// Nearest-neighbour upsampling of a C×H×W map by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(dim("upsample", format!("need C×H×W and factor ≥ 1, got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let out = Tensor::from_fn(&[c, oh, ow], |i| {
            let ch = i / (oh * ow);
            let y = (i / ow) % oh / factor;
            let xx = i % ow / factor;
            src[(ch * h + y) * w + xx]
        });
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::UpsampleNearest { x, factor }, rg))
    }

    /// Rearranges (C·f²)×H×W into C×(H·f)×(W·f): sub-pixel upsampling.
    pub fn depth_to_space(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let ff = factor * factor;
        if s.len() != 3 || factor == 0 || !s[0].is_multiple_of(ff) {
            return Err(dim(
                "depth_to_space",
                format!("channels of {s:?} not divisible by {factor}²"),
            ));
        }
        let (c, h, w) = (s[0] / ff, s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let out = Tensor::from_fn(&[c, oh, ow], |i| src[d2s_source(i, c, h, w, factor)]);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::DepthToSpace { x, factor }, rg))
    }

    /// Normalises along `axis` to zero mean and unit variance, then applies
    /// the per-position affine `gamma`, `beta` (each of length `shape[axis]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim("layer_norm", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(dim(
                "layer_norm",
                format!(
                    "affine params {:?}/{:?} do not match axis extent {n}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut normed = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut out = vec![T::zero(); src.len()];
        let inv_n = T::one() / T::from_usize(n);
        let eps = T::from_f64(EPS);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let mean = (0..n).map(|a| src[idx(a)]).sum::<T>() * inv_n;
                let var = (0..n)
                    .map(|a| {
                        let d = src[idx(a)] - mean;
                        d * d
                    })
                    .sum::<T>()
                    * inv_n;
                let is = T::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = is;
                for a in 0..n {
                    let xh = (src[idx(a)] - mean) * is;
                    normed[idx(a)] = xh;
                    out[idx(a)] = xh * g[a] + b[a];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let m = (0..n).map(|a| src[idx(a)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for a in 0..n {
                    let e = (src[idx(a)] - m).portable_exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[idx(a)] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Mean pixel cross-entropy of K×H×W `logits` against an H×W label map.
    /// Pixels equal to `ignore` are skipped; with no valid pixel the loss is 0.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: Option<u8>) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 3 || labels.len() != s[1] * s[2] {
            return Err(dim(
                "cross_entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let (k, h, w) = (s[0], s[1], s[2]);
        let plane = h * w;
        let mut targets = Vec::with_capacity(plane);
        for (p, &l) in labels.iter().enumerate() {
            if Some(l) == ignore {
                targets.push(None);
            } else if (l as usize) < k {
                targets.push(Some(l as usize));
            } else {
                return Err(Error::Label {
                    row: p / w,
                    col: p % w,
                    label: l as u32,
                    classes: k,
                });
            }
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); src.len()];
        let mut total = 0.0f64;
        let mut valid = 0usize;
        for p in 0..plane {
            let m = (0..k).map(|c| src[c * plane + p]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for c in 0..k {
                let e = (src[c * plane + p] - m).portable_exp();
                probs[c * plane + p] = e;
                z += e;
            }
            for c in 0..k {
                probs[c * plane + p] /= z;
            }
            if let Some(t) = targets[p] {
                // -log softmax = logsumexp - logit
                total += (z.portable_ln() + m - src[t * plane + p]).as_f64();
                valid += 1;
            }
        }
        let loss = if valid > 0 {
            T::from_f64(total / valid as f64)
        } else {
            T::zero()
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                valid,
            },
            rg,
        ))
    }

    /// Cross-correlation of a C×H×W map with an O×C×kh×kw kernel, zero padded,
    /// plus an optional per-output-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] {
            return Err(dim(
                "conv2d",
                format!("input {si:?} incompatible with kernel {sk:?}"),
            ));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(dim("conv2d", "stride and dilation must be ≥ 1"));
        }
        let (o, c, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        let (h, w) = (si[1], si[2]);
        let span_h = spec.dilation * (kh - 1) + 1;
        let span_w = spec.dilation * (kw - 1) + 1;
        if span_h > h + 2 * spec.padding || span_w > w + 2 * spec.padding {
            return Err(dim(
                "conv2d",
                format!(
                    "dilated kernel footprint {span_h}×{span_w} exceeds padded input {}×{}",
                    h + 2 * spec.padding,
                    w + 2 * spec.padding
                ),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != o {
                return Err(dim(
                    "conv2d",
                    format!("bias {:?} does not match {o} output channels", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            dilation: spec.dilation,
            out_h: (h + 2 * spec.padding - span_h) / spec.stride + 1,
            out_w: (w + 2 * spec.padding - span_w) / spec.stride + 1,
        };
        let p = geom.out_len();
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            im2col(self.value(input).data(), &geom)
        };
        let col_src: &[T] = if geom.is_pointwise() {
            self.value(input).data()
        } else {
            &cols
        };
        let mut out = vec![T::zero(); o * p];
        if let Some(b) = bias {
            for (oc, &bv) in self.value(b).data().iter().enumerate() {
                out[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        gemm_nn(self.value(kernel).data(), col_src, &mut out, o, geom.patch_len(), p);
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        // Columns are only needed to form the kernel gradient.
        let cols = if self.requires_grad(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(&[o, geom.out_h, geom.out_w], out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Local self-attention over an H×W token grid: each query (row of `q`)
    /// attends to the `window`×`window` keys spaced `dilation` apart around
    /// its own position. Offsets outside the grid are masked out.
    pub fn window_attention(&mut self, q: Var, k: Var, v: Var, spec: WindowSpec) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        let n = spec.height * spec.width;
        if sq.len() != 2 || sq != sk || sv.len() != 2 || sv[0] != n || sq[0] != n {
            return Err(dim(
                "window_attention",
                format!("q {sq:?}, k {sk:?}, v {sv:?} do not describe a {}×{} grid", spec.height, spec.width),
            ));
        }
        if spec.window == 0 || spec.window.is_multiple_of(2) || spec.dilation == 0 {
            return Err(dim(
                "window_attention",
                format!("window {} must be odd and dilation {} ≥ 1", spec.window, spec.dilation),
            ));
        }
        if spec.window > spec.height || spec.window > spec.width {
            return Err(dim(
                "window_attention",
                format!(
                    "window {} exceeds feature extent {}×{}",
                    spec.window, spec.height, spec.width
                ),
            ));
        }
        let (d, dv) = (sq[1], sv[1]);
        let taps = spec.window * spec.window;
        let neighbours = spec.neighbours();
        let scale = T::one() / T::from_usize(d).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); n * taps];
        let mut out = vec![T::zero(); n * dv];
        for i in 0..n {
            let qi = &qd[i * d..(i + 1) * d];
            let row = &mut probs[i * taps..(i + 1) * taps];
            let mut m = T::neg_infinity();
            for (t, nb) in neighbours[i * taps..(i + 1) * taps].iter().enumerate() {
                if let Some(j) = *nb {
                    let kj = &kd[j * d..(j + 1) * d];
                    let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    row[t] = s;
                    if s > m {
                        m = s;
                    }
                }
            }
            let mut z = T::zero();
            for (t, nb) in neighbours[i * taps..(i + 1) * taps].iter().enumerate() {
                if nb.is_some() {
                    let e = (row[t] - m).portable_exp();
                    row[t] = e;
                    z += e;
                } else {
                    row[t] = T::zero();
                }
            }
            let oi = &mut out[i * dv..(i + 1) * dv];
            for (t, nb) in neighbours[i * taps..(i + 1) * taps].iter().enumerate() {
                if let Some(j) = *nb {
                    row[t] /= z;
                    let a = row[t];
                    for (o, &vv) in oi.iter_mut().zip(&vd[j * dv..(j + 1) * dv]) {
                        *o += a * vv;
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::new(&[n, dv], out)?,
            Op::WindowAttention {
                q,
                k,
                v,
                neighbours,
                probs,
                taps,
            },
            rg,
        ))
    }

    /// `x · w + b` for an N×I input, I×O weight and length-O bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            None => Ok(y),
            Some(b) => {
                let shape = self.shape(y).to_vec();
                let row = self.reshape(b, &[1, shape[1]])?;
                let bb = self.expand(row, &shape)?;
                self.add(y, bb)
            }
        }
    }

    /// C×H×W map as an (H·W)×C token matrix, position (y, x) at row y·W + x.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(dim("to_tokens", format!("expected C×H×W, got {s:?}")));
        }
        let flat = self.reshape(x, &[s[0], s[1] * s[2]])?;
        self.transpose(flat)
    }

    /// Inverse of [`Graph::to_tokens`].
    pub fn from_tokens(&mut self, t: Var, height: usize, width: usize) -> Result<Var> {
        let s = self.shape(t).to_vec();
        if s.len() != 2 || s[0] != height * width {
            return Err(dim(
                "from_tokens",
                format!("{s:?} is not a {height}×{width} token grid"),
            ));
        }
        let cn = self.transpose(t)?;
        self.reshape(cn, &[s[1], height, width])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            if let Some(gout) = rest[0].as_ref() {
                self.backward_node(i, gout.data(), before);
            }
        }
        Ok(Grads {
            nodes: grads,
            params: self.param_vars.clone(),
        })
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if want(*a) {
                    let ga = buf(grads, *a, sa);
                    gemm_nt(gout, self.value(*b).data(), ga, m, n, k);
                }
                if want(*b) {
                    let gb = buf(grads, *b, sb);
                    gemm_tn(self.value(*a).data(), gout, gb, k, m, n);
                }
            }
            Op::Transpose(a) => {
                if want(*a) {
                    let s = self.shape(*a);
                    let (m, n) = (s[0], s[1]);
                    let ga = buf(grads, *a, s);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += gout[c * m + r];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if want(*a) {
                    add_into(buf(grads, *a, self.shape(*a)), gout);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if want(v) {
                        add_into(buf(grads, v, self.shape(v)), gout);
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    add_into(buf(grads, *a, self.shape(*a)), gout);
                }
                if want(*b) {
                    for (g, &d) in buf(grads, *b, self.shape(*b)).iter_mut().zip(gout) {
                        *g -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let other = self.value(*b).data();
                    for ((g, &d), &o) in buf(grads, *a, self.shape(*a)).iter_mut().zip(gout).zip(other) {
                        *g += d * o;
                    }
                }
                if want(*b) {
                    let other = self.value(*a).data();
                    for ((g, &d), &o) in buf(grads, *b, self.shape(*b)).iter_mut().zip(gout).zip(other) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if want(*x) {
                    for (g, &d) in buf(grads, *x, self.shape(*x)).iter_mut().zip(gout) {
                        *g += d * *c;
                    }
                }
            }
            Op::ScaleBy { x, s } => {
                if want(*x) {
                    let c = self.value(*s).item();
                    for (g, &d) in buf(grads, *x, self.shape(*x)).iter_mut().zip(gout) {
                        *g += d * c;
                    }
                }
                if want(*s) {
                    let dot: T = gout.iter().zip(self.value(*x).data()).map(|(&d, &v)| d * v).sum();
                    buf(grads, *s, self.shape(*s))[0] += dot;
                }
            }
            Op::Sigmoid(x) => {
                if want(*x) {
                    let y = node.value.data();
                    for ((g, &d), &yv) in buf(grads, *x, self.shape(*x)).iter_mut().zip(gout).zip(y) {
                        *g += d * yv * (T::one() - yv);
                    }
                }
            }
            Op::Relu(x) => {
                if want(*x) {
                    let y = node.value.data();
                    for ((g, &d), &yv) in buf(grads, *x, self.shape(*x)).iter_mut().zip(gout).zip(y) {
                        if yv > T::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if want(*x) {
                    let d = gout[0];
                    buf(grads, *x, self.shape(*x)).iter_mut().for_each(|g| *g += d);
                }
            }
            Op::Mean { x, axis } => {
                if want(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let inv = T::one() / T::from_usize(n);
                    let gx = buf(grads, *x, self.shape(*x));
                    for o in 0..outer {
                        for a in 0..n {
                            for i2 in 0..inner {
                                gx[(o * n + a) * inner + i2] += gout[o * inner + i2] * inv;
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    if want(p) {
                        let gp = buf(grads, p, self.shape(p));
                        for o in 0..outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            add_into(&mut gp[o * n * inner..(o + 1) * n * inner], src);
                        }
                    }
                    offset += n;
                }
            }
            Op::Expand(x) => {
                if want(*x) {
                    let src_shape = self.shape(*x).to_vec();
                    let out_shape = node.value.shape();
                    let gx = buf(grads, *x, &src_shape);
                    for (i2, &d) in gout.iter().enumerate() {
                        gx[expand_source(i2, &src_shape, out_shape)] += d;
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                if want(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let len = node.value.shape()[*axis];
                    let gx = buf(grads, *x, self.shape(*x));
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        add_into(dst, &gout[o * len * inner..(o + 1) * len * inner]);
                    }
                }
            }
            Op::UpsampleNearest { x, factor } => {
                if want(*x) {
                    let s = self.shape(*x);
                    let (h, w) = (s[1], s[2]);
                    let (oh, ow) = (h * factor, w * factor);
                    let gx = buf(grads, *x, s);
                    for (i2, &d) in gout.iter().enumerate() {
                        let ch = i2 / (oh * ow);
                        let y = (i2 / ow) % oh / factor;
                        let xx = i2 % ow / factor;
                        gx[(ch * h + y) * w + xx] += d;
                    }
                }
            }
            Op::DepthToSpace { x, factor } => {
                if want(*x) {
                    let s = self.shape(*x);
                    let (c, h, w) = (s[0] / (factor * factor), s[1], s[2]);
                    let gx = buf(grads, *x, s);
                    for (i2, &d) in gout.iter().enumerate() {
                        gx[d2s_source(i2, c, h, w, *factor)] += d;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                normed,
                inv_std,
            } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let g = self.value(*gamma).data();
                if want(*gamma) {
                    let gg = buf(grads, *gamma, self.shape(*gamma));
                    for (j, (&d, &xh)) in gout.iter().zip(normed).enumerate() {
                        gg[(j / inner) % n] += d * xh;
                    }
                }
                if want(*beta) {
                    let gb = buf(grads, *beta, self.shape(*beta));
                    for (j, &d) in gout.iter().enumerate() {
                        gb[(j / inner) % n] += d;
                    }
                }
                if want(*x) {
                    let gx = buf(grads, *x, self.shape(*x));
                    let nn = T::from_usize(n);
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let idx = |a: usize| (o * n + a) * inner + i2;
                            let mut sum_d = T::zero();
                            let mut sum_dx = T::zero();
                            for a in 0..n {
                                let dxh = gout[idx(a)] * g[a];
                                sum_d += dxh;
                                sum_dx += dxh * normed[idx(a)];
                            }
                            let scale = inv_std[o * inner + i2] / nn;
                            for a in 0..n {
                                let dxh = gout[idx(a)] * g[a];
                                gx[idx(a)] += scale * (nn * dxh - sum_d - normed[idx(a)] * sum_dx);
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if want(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let y = node.value.data();
                    let gx = buf(grads, *x, self.shape(*x));
                    for o in 0..outer {
                        for i2 in 0..inner {
                            let idx = |a: usize| (o * n + a) * inner + i2;
                            let dot: T = (0..n).map(|a| gout[idx(a)] * y[idx(a)]).sum();
                            for a in 0..n {
                                gx[idx(a)] += y[idx(a)] * (gout[idx(a)] - dot);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                valid,
            } => {
                if want(*logits) && *valid > 0 {
                    let s = self.shape(*logits);
                    let plane = s[1] * s[2];
                    let scale = gout[0] / T::from_usize(*valid);
                    let gl = buf(grads, *logits, s);
                    for (p, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for c in 0..s[0] {
                                let onehot = if c == t { T::one() } else { T::zero() };
                                gl[c * plane + p] += scale * (probs[c * plane + p] - onehot);
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let o = self.shape(*kernel)[0];
                let p = geom.out_len();
                let kl = geom.patch_len();
                if let Some(b) = bias {
                    if want(*b) {
                        let gb = buf(grads, *b, self.shape(*b));
                        for (oc, g) in gb.iter_mut().enumerate() {
                            *g += gout[oc * p..(oc + 1) * p].iter().copied().sum::<T>();
                        }
                    }
                }
                if want(*kernel) {
                    let col_src: &[T] = if geom.is_pointwise() {
                        self.value(*input).data()
                    } else {
                        cols
                    };
                    let gk = buf(grads, *kernel, self.shape(*kernel));
                    gemm_nt(gout, col_src, gk, o, p, kl);
                }
                if want(*input) {
                    let kd = self.value(*kernel).data();
                    if geom.is_pointwise() {
                        let gi = buf(grads, *input, self.shape(*input));
                        gemm_tn(kd, gout, gi, kl, o, p);
                    } else {
                        let mut dcols = vec![T::zero(); kl * p];
                        gemm_tn(kd, gout, &mut dcols, kl, o, p);
                        let gi = buf(grads, *input, self.shape(*input));
                        col2im_add(&dcols, geom, gi);
                    }
                }
            }
            Op::WindowAttention {
                q,
                k,
                v,
                neighbours,
                probs,
                taps,
            } => {
                let (n, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let dv = self.shape(*v)[1];
                let scale = T::one() / T::from_usize(d).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![T::zero(); n * d];
                let mut gk = vec![T::zero(); n * d];
                let mut gv = vec![T::zero(); n * dv];
                let mut dlogit = vec![T::zero(); *taps];
                for i in 0..n {
                    let go = &gout[i * dv..(i + 1) * dv];
                    let row = &probs[i * taps..(i + 1) * taps];
                    let nbs = &neighbours[i * taps..(i + 1) * taps];
                    let mut dot = T::zero();
                    for t in 0..*taps {
                        dlogit[t] = T::zero();
                        if let Some(j) = nbs[t] {
                            let vj = &vd[j * dv..(j + 1) * dv];
                            let da: T = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                            dlogit[t] = da;
                            dot += row[t] * da;
                            for (g, &gg) in gv[j * dv..(j + 1) * dv].iter_mut().zip(go) {
                                *g += row[t] * gg;
                            }
                        }
                    }
                    for t in 0..*taps {
                        if let Some(j) = nbs[t] {
                            let ds = row[t] * (dlogit[t] - dot) * scale;
                            for c in 0..d {
                                gq[i * d + c] += ds * kd[j * d + c];
                                gk[j * d + c] += ds * qd[i * d + c];
                            }
                        }
                    }
                }
                for (var, g) in [(*q, gq), (*k, gk), (*v, gv)] {
                    if want(var) {
                        add_into(buf(grads, var, self.shape(var)), &g);
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Flat source index feeding output element `i` of an expand.
fn expand_source(mut i: usize, src: &[usize], dst: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for axis in (0..dst.len()).rev() {
        let coord = i % dst[axis];
        i /= dst[axis];
        if src[axis] != 1 {
            idx += coord * stride;
        }
        stride *= src[axis];
    }
    idx
}

/// Flat source index feeding output element `i` of a depth-to-space.
fn d2s_source(i: usize, c: usize, h: usize, w: usize, f: usize) -> usize {
    let (oh, ow) = (h * f, w * f);
    let ch = i / (oh * ow);
    debug_assert!(ch < c);
    let oy = (i / ow) % oh;
    let ox = i % ow;
    let src_c = ch * f * f + (oy % f) * f + (ox % f);
    (src_c * h + oy / f) * w + ox / f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::<f64>::new();
        let eye = g.input(Tensor::eye(3));
        let b = g.input(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let y = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(y), g.value(b));
        let z = g.input(Tensor::zeros(&[2, 3]));
        let any = g.input(t(&[3, 4], &[7.; 12]));
        let y = g.matmul(z, any).unwrap();
        assert_eq!(g.value(y), &Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2, "{msg}");
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 2], &[1., -2., 3., 0.5]));
        let s = g.sum_all(x);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(x).unwrap().data(), &[1.; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[4], &[1., -2., 3., 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.wrt(x).unwrap().data(), &[2., -4., 6., 1.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn pointwise_examples() {
        let mut g = Graph::<f32>::new();
        let z = g.input(Tensor::zeros(&[1]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item(), 0.5);

        let c = g.input(Tensor::full(&[3, 4], 2.5));
        let m = g.mean(c, 1).unwrap();
        assert_eq!(g.value(m).data(), &[2.5; 3]);

        let x = g.input(Tensor::new(&[1, 2, 2], alloc::vec![1., 2., 3., 4.]).unwrap());
        let up = g.upsample_nearest(x, 2).unwrap();
        assert_eq!(
            g.value(up).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn concat_rejects_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[3, 3]));
        assert!(g.concat(&[a, b], 1).is_err());
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[5, 3]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::<f64>::new();
        let u = g.input(Tensor::full(&[1, 4], 3.0));
        let s = g.softmax(u, 1).unwrap();
        assert!(g.value(s).data().iter().all(|&p| (p - 0.25).abs() < 1e-12));
        let one = g.input(Tensor::full(&[3, 1], -7.0));
        let s = g.softmax(one, 1).unwrap();
        assert_eq!(g.value(s).data(), &[1.0; 3]);
        let r = g.input(t(&[1, 3], &[1., 2., 3.]));
        let s = g.softmax(r, 1).unwrap();
        let z: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
        for (p, v) in g.value(s).data().iter().zip([1f64, 2., 3.]) {
            assert!((p - v.exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut g = Graph::<f64>::new();
        let k = 4;
        let logits = g.input(Tensor::zeros(&[k, 2, 2]));
        let l = g.cross_entropy(logits, &[0, 1, 2, 3], None).unwrap();
        assert!((g.value(l).item() - (k as f64).ln()).abs() < 1e-12);

        let mut data = alloc::vec![0.0; 2 * 2 * 2];
        // class 1 wins by a margin of 100 everywhere
        for p in 0..4 {
            data[4 + p] = 100.0;
        }
        let logits = g.input(t(&[2, 2, 2], &data));
        let l = g.cross_entropy(logits, &[1, 1, 1, 1], None).unwrap();
        assert!(g.value(l).item() < 1e-12);
    }

    #[test]
    fn cross_entropy_reports_pixel() {
        let mut g = Graph::<f32>::new();
        let logits = g.input(Tensor::zeros(&[3, 2, 2]));
        let err = g.cross_entropy(logits, &[0, 1, 2, 3], None).unwrap_err();
        assert_eq!(
            err,
            Error::Label {
                row: 1,
                col: 1,
                label: 3,
                classes: 3
            }
        );
        // ignored label may be out of range
        assert!(g.cross_entropy(logits, &[0, 1, 255, 2], Some(255)).is_ok());
    }

    #[test]
    fn conv_identity_and_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(&[1, 5, 5], |i| i as f32 * 0.3 - 2.0));
        let id = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
        let y = g.conv2d(x, id, None, ConvSpec::unit()).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let zk = g.input(Tensor::zeros(&[2, 1, 3, 3]));
        let y = g.conv2d(x, zk, None, ConvSpec::same(3, 1)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_footprint_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 4, 4]));
        let k = g.input(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.conv2d(x, k, None, ConvSpec::new(1, 0, 2)).is_err());
        assert!(g.conv2d(x, k, None, ConvSpec::new(1, 1, 2)).is_ok());
    }

    #[test]
    fn depth_to_space_layout() {
        let mut g = Graph::<f32>::new();
        // 4 channels of a 1×1 map become one 2×2 map
        let x = g.input(Tensor::new(&[4, 1, 1], alloc::vec![1., 2., 3., 4.]).unwrap());
        let y = g.depth_to_space(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn window_neighbours_mask_border() {
        let spec = WindowSpec {
            height: 3,
            width: 3,
            window: 3,
            dilation: 1,
        };
        let nb = spec.neighbours();
        // corner query (0,0) sees only 4 in-grid keys
        assert_eq!(nb[..9].iter().filter(|n| n.is_some()).count(), 4);
        // centre query sees all
        assert!(nb[4 * 9..5 * 9].iter().all(|n| n.is_some()));
    }
}
