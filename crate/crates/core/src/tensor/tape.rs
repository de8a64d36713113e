//! Append-only reverse-mode tape.
//!
//! Every op pushes a node holding its output value plus whatever it needs
//! for the backward rule. Nodes are appended in evaluation order, so the
//! node list is already a topological order and `backward` is one reverse
//! sweep that visits each node exactly once.

use super::{image_dims, PaddingMode, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Reshape(Var),
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    Sigmoid(Var),
    Gelu(Var),
    Sum(Var),
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    DepthwiseConv {
        x: Var,
        kernel: Var,
        padding: PaddingMode,
    },
    ChannelLinear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    PatchEmbed {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        patch: usize,
    },
    HeatStencil {
        z: Var,
        w: Var,
        boundary: PaddingMode,
    },
    ScaleChannels {
        x: Var,
        k: Var,
    },
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

/// Records a computation for one backward pass.
///
/// A tape is single-threaded and consumed by [`Tape::backward`].
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Neighbour index table: `table[i * taps + t] = resolve(i + t - half)`.
fn tap_table(n: usize, taps: usize, padding: PaddingMode) -> Vec<Option<usize>> {
    let half = (taps / 2) as isize;
    let mut table = Vec::with_capacity(n * taps);
    for i in 0..n as isize {
        for t in 0..taps as isize {
            table.push(padding.resolve(i + t - half, n));
        }
    }
    table
}

/// `[B,C,P]` channel-major storage to `[B*P, C]` rows.
fn pack_rows<T: Real>(x: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut rows = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * p..(bi * c + ci + 1) * p];
            for (pi, &v) in src.iter().enumerate() {
                rows[(bi * p + pi) * c + ci] = v;
            }
        }
    }
    rows
}

fn unpack_rows<T: Real>(rows: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut x = vec![T::zero(); rows.len()];
    for bi in 0..b {
        for pi in 0..p {
            let src = &rows[(bi * p + pi) * c..(bi * p + pi + 1) * c];
            for (ci, &v) in src.iter().enumerate() {
                x[(bi * c + ci) * p + pi] = v;
            }
        }
    }
    x
}

/// Non-overlapping `patch x patch` windows of `[B,C,H,W]` as rows of
/// `[B*(H/p)*(W/p), C*p*p]`, column order `(c, di, dj)`.
fn im2col<T: Real>(x: &[T], (b, c, h, w): (usize, usize, usize, usize), p: usize) -> Vec<T> {
    let (oh, ow) = (h / p, w / p);
    let cols = c * p * p;
    let mut rows = vec![T::zero(); b * oh * ow * cols];
    for bi in 0..b {
        for oi in 0..oh {
            for oj in 0..ow {
                let r = (bi * oh + oi) * ow + oj;
                let dst = &mut rows[r * cols..(r + 1) * cols];
                for ci in 0..c {
                    for di in 0..p {
                        let src = ((bi * c + ci) * h + oi * p + di) * w + oj * p;
                        dst[(ci * p + di) * p..(ci * p + di + 1) * p]
                            .copy_from_slice(&x[src..src + p]);
                    }
                }
            }
        }
    }
    rows
}

fn col2im<T: Real>(rows: &[T], (b, c, h, w): (usize, usize, usize, usize), p: usize) -> Vec<T> {
    let (oh, ow) = (h / p, w / p);
    let cols = c * p * p;
    let mut x = vec![T::zero(); b * c * h * w];
    for bi in 0..b {
        for oi in 0..oh {
            for oj in 0..ow {
                let r = (bi * oh + oi) * ow + oj;
                let src = &rows[r * cols..(r + 1) * cols];
                for ci in 0..c {
                    for di in 0..p {
                        let dst = ((bi * c + ci) * h + oi * p + di) * w + oj * p;
                        x[dst..dst + p]
                            .copy_from_slice(&src[(ci * p + di) * p..(ci * p + di + 1) * p]);
                    }
                }
            }
        }
    }
    x
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_CUBIC: f64 = 0.044715;

#[inline]
fn gelu_inner<T: Real>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    c * (x + T::of(GELU_CUBIC) * x * x * x)
}

/// Tanh-approximated GELU: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    T::of(0.5) * x * (T::one() + gelu_inner(x).tanh())
}

#[inline]
fn gelu_derivative<T: Real>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let t = gelu_inner(x).tanh();
    let half = T::of(0.5);
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0 * GELU_CUBIC) * x * x)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Records a copy of `t`; gradients flow back to it iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records `t` by value without copying.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, tracked)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape invariant")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(x);
        if shape.iter().product::<usize>() != n.value.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", n.shape)));
        }
        let value = n.value.clone();
        let tracked = n.tracked;
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("lhs {sa:?} and rhs {sb:?} are not [m,k]·[k,n]"),
                ))
            }
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), tracked))
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>, bool)> {
        check_same(op, self.shape(a), self.shape(b))?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), out, self.tracked(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, t) = self.zip_map("add", a, b, |x, y| x + y)?;
        Ok(self.push(s, v, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, t) = self.zip_map("sub", a, b, |x, y| x - y)?;
        Ok(self.push(s, v, Op::Sub(a, b), t))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, v, t) = self.zip_map("mul", a, b, |x, y| x * y)?;
        Ok(self.push(s, v, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| v * s).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        self.push(shape, out, Op::Scale(x, s), tracked)
    }

    /// `x[.., D] + bias[D]`, broadcast over every leading index.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::shape(
                "add_row_bias",
                format!("x {:?} with bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let bv = self.value(bias);
        let out = self
            .value(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &b)| a + b))
            .collect();
        let tracked = self.tracked(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRowBias(x, bias), tracked))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| sigmoid(v)).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        self.push(shape, out, Op::Sigmoid(x), tracked)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| gelu_scalar(v)).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        self.push(shape, out, Op::Gelu(x), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.node(x);
        let total = n.value.iter().copied().sum();
        let tracked = n.tracked;
        self.push(Vec::new(), vec![total], Op::Sum(x), tracked)
    }

    /// Spatial mean per channel: `[C,H,W] -> [C]`, `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims("global_avg_pool", &shape)?;
        let p = h * w;
        let inv = T::one() / T::of(p as f64);
        let out = self
            .value(x)
            .chunks(p)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let out_shape = if shape.len() == 3 { vec![c] } else { vec![b, c] };
        let tracked = self.tracked(&[x]);
        Ok(self.push(out_shape, out, Op::GlobalAvgPool(x), tracked))
    }

    /// Mean softmax cross-entropy of `[B,K]` (or `[K]`) logits against
    /// integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (b, k) = match *shape.as_slice() {
            [k] => (1, k),
            [b, k] => (b, k),
            _ => {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("logits must be [K] or [B,K], got {shape:?}"),
                ))
            }
        };
        if labels.len() != b {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{b} logit rows vs {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Usage(format!("label {bad} outside [0, {k})")));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); b * k];
        let mut loss = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for (j, &v) in row.iter().enumerate() {
                probs[r * k + j] = (v - max - log_denom).exp();
            }
            loss += log_denom - (row[label] - max);
        }
        loss /= T::of(b as f64);
        let tracked = self.tracked(&[logits]);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Per-channel cross-correlation with a `[C,kh,kw]` kernel; spatial
    /// extents are preserved.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var, padding: PaddingMode) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims("depthwise_conv2d", &shape)?;
        let (kh, kw) = match *self.shape(kernel) {
            [kc, kh, kw] if kc == c => (kh, kw),
            ref ks => {
                return Err(Error::shape(
                    "depthwise_conv2d",
                    format!("input {shape:?} with kernel {ks:?}"),
                ))
            }
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "depthwise kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        let rows = tap_table(h, kh, padding);
        let cols = tap_table(w, kw, padding);
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let plane = &xv[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                let dst = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                let kc = &kv[ci * kh * kw..(ci + 1) * kh * kw];
                for i in 0..h {
                    for a in 0..kh {
                        let Some(r) = rows[i * kh + a] else { continue };
                        let src = &plane[r * w..(r + 1) * w];
                        let krow = &kc[a * kw..(a + 1) * kw];
                        let drow = &mut dst[i * w..(i + 1) * w];
                        for (j, d) in drow.iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for (t, &kval) in krow.iter().enumerate() {
                                if let Some(s) = cols[j * kw + t] {
                                    acc += kval * src[s];
                                }
                            }
                            *d += acc;
                        }
                    }
                }
            }
        }
        let tracked = self.tracked(&[x, kernel]);
        Ok(self.push(shape, out, Op::DepthwiseConv { x, kernel, padding }, tracked))
    }

    /// 1x1 channel mixing applied at every spatial site:
    /// `[B,C,H,W] x [C,D] (+ [D]) -> [B,D,H,W]`.
    pub fn channel_linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims("channel_linear", &shape)?;
        let d = match *self.shape(weight) {
            [wc, d] if wc == c => d,
            ref ws => {
                return Err(Error::shape(
                    "channel_linear",
                    format!("input {shape:?} with weight {ws:?}"),
                ))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [d] {
                return Err(Error::shape(
                    "channel_linear",
                    format!("bias {:?} for {d} outputs", self.shape(bv)),
                ));
            }
        }
        let p = h * w;
        let rows = pack_rows(self.value(x), b, c, p);
        let mut out_rows = vec![T::zero(); b * p * d];
        T::gemm(b * p, c, d, &rows, false, self.value(weight), false, &mut out_rows, false);
        if let Some(bv) = bias {
            let bias_v = self.value(bv);
            for row in out_rows.chunks_mut(d) {
                row.iter_mut().zip(bias_v).for_each(|(o, &bb)| *o += bb);
            }
        }
        let out = unpack_rows(&out_rows, b, d, p);
        let mut out_shape = shape;
        let ch_axis = out_shape.len() - 3;
        out_shape[ch_axis] = d;
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let tracked = self.tracked(&deps);
        Ok(self.push(out_shape, out, Op::ChannelLinear { x, weight, bias }, tracked))
    }

    /// Stride-`patch` convolution with a `patch x patch` kernel, weight laid
    /// out as `[C*patch*patch, D]` with row order `(c, di, dj)`.
    pub fn patch_embed(&mut self, x: Var, weight: Var, bias: Option<Var>, patch: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dims @ (b, c, h, w) = image_dims("patch_embed", &shape)?;
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::Config(format!(
                "spatial extent {h}x{w} is not divisible by patch size {patch}"
            )));
        }
        let kdim = c * patch * patch;
        let d = match *self.shape(weight) {
            [k, d] if k == kdim => d,
            ref ws => {
                return Err(Error::shape(
                    "patch_embed",
                    format!("input {shape:?} patch {patch} with weight {ws:?}"),
                ))
            }
        };
        if let Some(bv) = bias {
            if self.shape(bv) != [d] {
                return Err(Error::shape(
                    "patch_embed",
                    format!("bias {:?} for {d} outputs", self.shape(bv)),
                ));
            }
        }
        let (oh, ow) = (h / patch, w / patch);
        let cols = im2col(self.value(x), dims, patch);
        let mut out_rows = vec![T::zero(); b * oh * ow * d];
        T::gemm(b * oh * ow, kdim, d, &cols, false, self.value(weight), false, &mut out_rows, false);
        if let Some(bv) = bias {
            let bias_v = self.value(bv);
            for row in out_rows.chunks_mut(d) {
                row.iter_mut().zip(bias_v).for_each(|(o, &bb)| *o += bb);
            }
        }
        let out = unpack_rows(&out_rows, b, d, oh * ow);
        let out_shape = if shape.len() == 3 {
            vec![d, oh, ow]
        } else {
            vec![b, d, oh, ow]
        };
        let mut deps = vec![x, weight];
        deps.extend(bias);
        let tracked = self.tracked(&deps);
        Ok(self.push(
            out_shape,
            out,
            Op::PatchEmbed {
                x,
                weight,
                bias,
                patch,
            },
            tracked,
        ))
    }

    /// Five-point weighted neighbour difference per channel:
    /// `h = w0 z[i+1,j] + w1 z[i-1,j] + w2 z[i,j+1] + w3 z[i,j-1] - (w0+w1+w2+w3) z[i,j]`
    /// with `w: [C,4]`. The first spatial axis is `x` (index `i`), the second
    /// is `y` (index `j`).
    pub fn heat_stencil(&mut self, z: Var, w: Var, boundary: PaddingMode) -> Result<Var> {
        let shape = self.shape(z).to_vec();
        let (b, c, h, wd) = image_dims("heat_stencil", &shape)?;
        if self.shape(w) != [c, 4] {
            return Err(Error::shape(
                "heat_stencil",
                format!("input {shape:?} with stencil weights {:?}", self.shape(w)),
            ));
        }
        let rows = tap_table(h, 3, boundary);
        let cols = tap_table(wd, 3, boundary);
        let (zv, wv) = (self.value(z), self.value(w));
        let mut out = vec![T::zero(); zv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * h * wd;
                let plane = &zv[base..base + h * wd];
                let [w0, w1, w2, w3] = [wv[ci * 4], wv[ci * 4 + 1], wv[ci * 4 + 2], wv[ci * 4 + 3]];
                let wsum = w0 + w1 + w2 + w3;
                let at = |r: Option<usize>, s: Option<usize>| match (r, s) {
                    (Some(r), Some(s)) => plane[r * wd + s],
                    _ => T::zero(),
                };
                for i in 0..h {
                    let (im, ip) = (rows[i * 3], rows[i * 3 + 2]);
                    for j in 0..wd {
                        let (jm, jp) = (cols[j * 3], cols[j * 3 + 2]);
                        let zc = plane[i * wd + j];
                        out[base + i * wd + j] = w0 * at(ip, Some(j))
                            + w1 * at(im, Some(j))
                            + w2 * at(Some(i), jp)
                            + w3 * at(Some(i), jm)
                            - wsum * zc;
                    }
                }
            }
        }
        let tracked = self.tracked(&[z, w]);
        Ok(self.push(shape, out, Op::HeatStencil { z, w, boundary }, tracked))
    }

    /// Multiplies each channel plane by its own factor; `k` is `[C]`
    /// (shared across the batch) or `[B,C]`.
    pub fn scale_channels(&mut self, x: Var, k: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims("scale_channels", &shape)?;
        let ks = self.shape(k);
        let per_sample = if ks == [c] {
            false
        } else if ks == [b, c] && shape.len() == 4 {
            true
        } else {
            return Err(Error::shape(
                "scale_channels",
                format!("input {shape:?} with factors {ks:?}"),
            ));
        };
        let p = h * w;
        let kv = self.value(k);
        let out = self
            .value(x)
            .chunks(p)
            .enumerate()
            .flat_map(|(plane, vals)| {
                let f = kv[if per_sample { plane } else { plane % c }];
                vals.iter().map(move |&v| v * f)
            })
            .collect();
        let tracked = self.tracked(&[x, k]);
        let _ = b;
        Ok(self.push(shape, out, Op::ScaleChannels { x, k }, tracked))
    }

    /// Layer normalization across channels at every spatial site, with a
    /// per-channel affine `gamma`, `beta` (both `[C]`).
    pub fn channel_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c, h, w) = image_dims("channel_norm", &shape)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "channel_norm",
                format!(
                    "input {shape:?} with gamma {:?} beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let p = h * w;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![T::zero(); xv.len()];
        let mut means = vec![T::zero(); b * p];
        let mut rstds = vec![T::zero(); b * p];
        let inv_c = T::one() / T::of(c as f64);
        for bi in 0..b {
            let base = bi * c * p;
            for pi in 0..p {
                let mean = (0..c).map(|ci| xv[base + ci * p + pi]).sum::<T>() * inv_c;
                let var = (0..c)
                    .map(|ci| {
                        let d = xv[base + ci * p + pi] - mean;
                        d * d
                    })
                    .sum::<T>()
                    * inv_c;
                let rstd = T::one() / (var + eps).sqrt();
                for ci in 0..c {
                    let idx = base + ci * p + pi;
                    out[idx] = gv[ci] * (xv[idx] - mean) * rstd + bv[ci];
                }
                means[bi * p + pi] = mean;
                rstds[bi * p + pi] = rstd;
            }
        }
        let tracked = self.tracked(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.tracked {
                continue;
            }
            let mut acc = |v: Var, contribution: Vec<T>| {
                if !nodes[v.0].tracked {
                    return;
                }
                match &mut grads[v.0] {
                    Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |v: Var| nodes[v.0].value.as_slice();
            let tr = |v: Var| nodes[v.0].tracked;
            match &node.op {
                Op::Leaf => leaf_grads[idx] = Some(g),
                Op::Reshape(x) => acc(*x, g),
                Op::Matmul(a, b) => {
                    let (m, n) = (node.shape[0], node.shape[1]);
                    let k = nodes[a.0].shape[1];
                    if tr(*a) {
                        let mut da = vec![T::zero(); m * k];
                        T::gemm(m, n, k, &g, false, val(*b), true, &mut da, false);
                        acc(*a, da);
                    }
                    if tr(*b) {
                        let mut db = vec![T::zero(); k * n];
                        T::gemm(k, m, n, val(*a), true, &g, false, &mut db, false);
                        acc(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|&v| -v).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect());
                    acc(*b, g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect());
                }
                Op::Scale(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
                Op::AddRowBias(x, bias) => {
                    let d = nodes[bias.0].value.len();
                    let mut db = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    acc(*bias, db);
                    acc(*x, g);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    acc(
                        *x,
                        g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect(),
                    );
                }
                Op::Gelu(x) => {
                    let xv = val(*x);
                    acc(*x, g.iter().zip(xv).map(|(&gi, &xi)| gi * gelu_derivative(xi)).collect());
                }
                Op::Sum(x) => acc(*x, vec![g[0]; nodes[x.0].value.len()]),
                Op::GlobalAvgPool(x) => {
                    let (_, _, h, w) = image_dims("global_avg_pool", &nodes[x.0].shape)?;
                    let p = h * w;
                    let inv = T::one() / T::of(p as f64);
                    acc(*x, g.iter().flat_map(|&gi| std::iter::repeat_n(gi * inv, p)).collect());
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let b = labels.len();
                    let k = probs.len() / b;
                    let scale = g[0] / T::of(b as f64);
                    let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        dl[r * k + l] -= scale;
                    }
                    acc(*logits, dl);
                }
                Op::DepthwiseConv { x, kernel, padding } => {
                    let (b, c, h, w) = image_dims("depthwise_conv2d", &node.shape)?;
                    let (kh, kw) = (nodes[kernel.0].shape[1], nodes[kernel.0].shape[2]);
                    let rows = tap_table(h, kh, *padding);
                    let cols = tap_table(w, kw, *padding);
                    let (xv, kv) = (val(*x), val(*kernel));
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dk = vec![T::zero(); kv.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * h * w;
                            let kc = &kv[ci * kh * kw..(ci + 1) * kh * kw];
                            for i in 0..h {
                                for a in 0..kh {
                                    let Some(r) = rows[i * kh + a] else { continue };
                                    for j in 0..w {
                                        let gi = g[base + i * w + j];
                                        for t in 0..kw {
                                            if let Some(s) = cols[j * kw + t] {
                                                let src = base + r * w + s;
                                                dx[src] += kc[a * kw + t] * gi;
                                                dk[(ci * kh + a) * kw + t] += xv[src] * gi;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                    acc(*kernel, dk);
                }
                Op::ChannelLinear { x, weight, bias } => {
                    let (b, c, h, w) = image_dims("channel_linear", &nodes[x.0].shape)?;
                    let d = nodes[weight.0].shape[1];
                    let p = h * w;
                    let grows = pack_rows(&g, b, d, p);
                    if let Some(bv) = bias {
                        let mut db = vec![T::zero(); d];
                        for row in grows.chunks(d) {
                            db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        acc(*bv, db);
                    }
                    if tr(*weight) {
                        let xrows = pack_rows(val(*x), b, c, p);
                        let mut dw = vec![T::zero(); c * d];
                        T::gemm(c, b * p, d, &xrows, true, &grows, false, &mut dw, false);
                        acc(*weight, dw);
                    }
                    if tr(*x) {
                        let mut dxrows = vec![T::zero(); b * p * c];
                        T::gemm(b * p, d, c, &grows, false, val(*weight), true, &mut dxrows, false);
                        acc(*x, unpack_rows(&dxrows, b, c, p));
                    }
                }
                Op::PatchEmbed {
                    x,
                    weight,
                    bias,
                    patch,
                } => {
                    let dims @ (b, c, h, w) = image_dims("patch_embed", &nodes[x.0].shape)?;
                    let d = nodes[weight.0].shape[1];
                    let (oh, ow) = (h / patch, w / patch);
                    let kdim = c * patch * patch;
                    let n = b * oh * ow;
                    let grows = pack_rows(&g, b, d, oh * ow);
                    if let Some(bv) = bias {
                        let mut db = vec![T::zero(); d];
                        for row in grows.chunks(d) {
                            db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        acc(*bv, db);
                    }
                    if tr(*weight) {
                        let cols = im2col(val(*x), dims, *patch);
                        let mut dw = vec![T::zero(); kdim * d];
                        T::gemm(kdim, n, d, &cols, true, &grows, false, &mut dw, false);
                        acc(*weight, dw);
                    }
                    if tr(*x) {
                        let mut dcols = vec![T::zero(); n * kdim];
                        T::gemm(n, d, kdim, &grows, false, val(*weight), true, &mut dcols, false);
                        acc(*x, col2im(&dcols, dims, *patch));
                    }
                }
                Op::HeatStencil { z, w, boundary } => {
                    let (b, c, h, wd) = image_dims("heat_stencil", &node.shape)?;
                    let rows = tap_table(h, 3, *boundary);
                    let cols = tap_table(wd, 3, *boundary);
                    let (zv, wv) = (val(*z), val(*w));
                    let mut dz = vec![T::zero(); zv.len()];
                    let mut dw = vec![T::zero(); wv.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * h * wd;
                            let ws = [wv[ci * 4], wv[ci * 4 + 1], wv[ci * 4 + 2], wv[ci * 4 + 3]];
                            let wsum = ws[0] + ws[1] + ws[2] + ws[3];
                            let mut dwc = [T::zero(); 4];
                            for i in 0..h {
                                let (im, ip) = (rows[i * 3], rows[i * 3 + 2]);
                                for j in 0..wd {
                                    let (jm, jp) = (cols[j * 3], cols[j * 3 + 2]);
                                    let here = base + i * wd + j;
                                    let gi = g[here];
                                    let zc = zv[here];
                                    dz[here] -= wsum * gi;
                                    let nbrs = [
                                        ip.map(|r| base + r * wd + j),
                                        im.map(|r| base + r * wd + j),
                                        jp.map(|s| base + i * wd + s),
                                        jm.map(|s| base + i * wd + s),
                                    ];
                                    for (t, nb) in nbrs.into_iter().enumerate() {
                                        let zn = match nb {
                                            Some(at) => {
                                                dz[at] += ws[t] * gi;
                                                zv[at]
                                            }
                                            None => T::zero(),
                                        };
                                        dwc[t] += gi * (zn - zc);
                                    }
                                }
                            }
                            for t in 0..4 {
                                dw[ci * 4 + t] += dwc[t];
                            }
                        }
                    }
                    acc(*z, dz);
                    acc(*w, dw);
                }
                Op::ScaleChannels { x, k } => {
                    let (_, c, h, w) = image_dims("scale_channels", &node.shape)?;
                    let p = h * w;
                    let (xv, kv) = (val(*x), val(*k));
                    let per_sample = kv.len() != c;
                    let mut dk = vec![T::zero(); kv.len()];
                    let mut dx = vec![T::zero(); xv.len()];
                    for (plane, (gs, xs)) in g.chunks(p).zip(xv.chunks(p)).enumerate() {
                        let ki = if per_sample { plane } else { plane % c };
                        let f = kv[ki];
                        let mut s = T::zero();
                        for ((d, &gi), &xi) in dx[plane * p..(plane + 1) * p].iter_mut().zip(gs).zip(xs) {
                            *d = gi * f;
                            s += gi * xi;
                        }
                        dk[ki] += s;
                    }
                    acc(*x, dx);
                    acc(*k, dk);
                }
                Op::ChannelNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    rstd,
                } => {
                    let (b, c, h, w) = image_dims("channel_norm", &node.shape)?;
                    let p = h * w;
                    let (xv, gv) = (val(*x), val(*gamma));
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let inv_c = T::one() / T::of(c as f64);
                    for bi in 0..b {
                        let base = bi * c * p;
                        for pi in 0..p {
                            let (mu, rs) = (mean[bi * p + pi], rstd[bi * p + pi]);
                            let mut mean_dxhat = T::zero();
                            let mut mean_dxhat_xhat = T::zero();
                            for ci in 0..c {
                                let idx = base + ci * p + pi;
                                let xhat = (xv[idx] - mu) * rs;
                                let dxhat = g[idx] * gv[ci];
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * xhat;
                                dgamma[ci] += g[idx] * xhat;
                                dbeta[ci] += g[idx];
                            }
                            mean_dxhat *= inv_c;
                            mean_dxhat_xhat *= inv_c;
                            for ci in 0..c {
                                let idx = base + ci * p + pi;
                                let xhat = (xv[idx] - mu) * rs;
                                let dxhat = g[idx] * gv[ci];
                                dx[idx] = rs * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                            }
                        }
                    }
                    acc(*x, dx);
                    acc(*gamma, dgamma);
                    acc(*beta, dbeta);
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut tape = Tape::new();
        let i = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out), &[3.0, 4.0, 5.0, 6.0]);

        let a = tape.leaf(&t(&[1, 2], &[1.0, 2.0]));
        let c = tape.leaf(&t(&[2, 1], &[3.0, 4.0]));
        let out = tape.matmul(a, c).unwrap();
        assert_eq!(tape.value(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::<f64>::zeros([2, 3]));
        let b = tape.leaf(&Tensor::<f64>::zeros([2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_fn([1, 5, 4], |i| (i as f64 * 0.7).sin());
        let mut k = Tensor::<f64>::zeros([1, 3, 3]);
        k.data_mut()[4] = 1.0;
        for pad in [PaddingMode::Zero, PaddingMode::Replicate, PaddingMode::Periodic] {
            let mut tape = Tape::new();
            let xv = tape.leaf(&x);
            let kv = tape.leaf(&k);
            let y = tape.depthwise_conv2d(xv, kv, pad).unwrap();
            assert_eq!(tape.value(y), x.data());
        }
    }

    #[test]
    fn averaging_kernel_preserves_constants_with_replicate() {
        let x = Tensor::full([2, 6, 6], 3.25f64);
        let k = Tensor::full([2, 3, 3], 1.0 / 9.0);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let kv = tape.leaf(&k);
        let y = tape.depthwise_conv2d(xv, kv, PaddingMode::Replicate).unwrap();
        for &v in tape.value(y) {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let mut tape = Tape::new();
        let xv = tape.leaf(&Tensor::<f64>::zeros([1, 4, 4]));
        let kv = tape.leaf(&Tensor::<f64>::zeros([1, 2, 3]));
        let err = tape.depthwise_conv2d(xv, kv, PaddingMode::Zero).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gelu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[0.0, 3.0]));
        let y = tape.gelu(x);
        assert_eq!(tape.value(y)[0], 0.0);
        // 0.5*3*(1+tanh(sqrt(2/pi)*(3+0.044715*27)))
        assert!((tape.value(y)[1] - 2.996_362_607_918_227).abs() < 1e-14);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let z = tape.leaf(&t(&[1], &[0.0]));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s), &[0.5]);

        let field = tape.leaf(&Tensor::full([3, 4, 5], 1.5));
        let gap = tape.global_avg_pool(field).unwrap();
        assert_eq!(tape.shape(gap), &[3]);
        for &v in tape.value(gap) {
            assert!((v - 1.5).abs() < 1e-12);
        }

        let logits = tape.leaf(&Tensor::zeros([10]));
        for label in [0, 7, 9] {
            let loss = tape.softmax_cross_entropy(logits, &[label]).unwrap();
            assert!((tape.value(loss)[0] - 10f64.ln()).abs() < 1e-12);
        }
        assert!(tape.softmax_cross_entropy(logits, &[10]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::zeros([3]).with_requires_grad(true));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn untracked_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::full([2], 1.0).with_requires_grad(true));
        let b = tape.leaf(&Tensor::full([2], 2.0));
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[2.0, 2.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::full([1], 3.0).with_requires_grad(true));
        let sq = tape.mul(a, a).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[6.0]);
    }
}
