//! A small reverse-mode automatic differentiation tape over 2-D `f64` tensors.
//!
//! Every value is an `Array2<f64>`. Sequences are stored `(time, channels)`;
//! waveforms are single rows `(1, samples)`; scalars are `(1, 1)`.
//!
//! Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and [`Graph::backward`] walks it in reverse.
//! Shape mismatches between operands are programming errors and panic.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::Result;
use crate::metrics::sdr::si_sdr_with_grad;
use crate::params::ParamStore;

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    ScaleByEntry { x: NodeId, weights: NodeId, index: usize },
    Prelu(NodeId, NodeId),
    Sigmoid(NodeId),
    DepthwiseConv { x: NodeId, kernel: NodeId, dilation: usize, left_pad: usize },
    Shift { x: NodeId, offset: isize },
    GlobalNorm { x: NodeId, std: f64 },
    RowNorm { x: NodeId, std: Vec<f64> },
    GroupSoftmax { x: NodeId, groups: usize },
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Frame { x: NodeId, stride: usize },
    OverlapAdd { x: NodeId, stride: usize },
    MaxPoolRows { x: NodeId, argmax: Vec<usize> },
    Mean(Vec<NodeId>),
    SiSdr { est: NodeId, grad: Option<Vec<f64>> },
    OverlapAverage { segments: Vec<NodeId>, hop: usize, counts: Arc<Vec<f64>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Evaluation tape. Build a forward pass with the op methods, then call [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    frozen_norm_stats: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalization statistics are treated as constants in the backward pass.
    ///
    /// Used to probe the convolutional support of a network: with live
    /// statistics every output depends on every input through the mean.
    pub fn with_frozen_norm_stats(mut self) -> Self {
        self.frozen_norm_stats = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        // Row-slice kernels below rely on every stored value being row-major.
        let value = if value.is_standard_layout() { value } else { value.as_standard_layout().into_owned() };
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "node is not a scalar");
        v[[0, 0]]
    }

    /// The values of a `(1, n)` row node.
    pub fn row(&self, id: NodeId) -> Vec<f64> {
        let v = self.value(id);
        assert_eq!(v.nrows(), 1, "node is not a row");
        v.iter().copied().collect()
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter as a tracked leaf. Repeated lookups of one name share the node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store.get(name)?.clone();
        let id = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a) * factor;
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// `x + row`, broadcasting a `(1, C)` row over time.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1);
        let mut v = self.value(x).clone();
        for_each_row(&mut v, self.value(row), |y, r| *y += r);
        let rg = self.rg(&[x, row]);
        self.push(v, Op::AddRow(x, row), rg)
    }

    /// `x * row`, broadcasting a `(1, C)` row over time.
    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1);
        let mut v = self.value(x).clone();
        for_each_row(&mut v, self.value(row), |y, r| *y *= r);
        let rg = self.rg(&[x, row]);
        self.push(v, Op::MulRow(x, row), rg)
    }

    /// `x * weights[0, index]`.
    pub fn scale_by_entry(&mut self, x: NodeId, weights: NodeId, index: usize) -> NodeId {
        let w = self.value(weights)[[0, index]];
        let v = self.value(x) * w;
        let rg = self.rg(&[x, weights]);
        self.push(v, Op::ScaleByEntry { x, weights, index }, rg)
    }

    /// Parametric ReLU with one slope per channel (`slope` is `(1, C)`).
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        for_each_row(&mut v, self.value(slope), |v, a| {
            if *v <= 0.0 {
                *v *= a
            }
        });
        let rg = self.rg(&[x, slope]);
        self.push(v, Op::Prelu(x, slope), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(logistic);
        let rg = self.rg(&[x]);
        self.push(v, Op::Sigmoid(x), rg)
    }

    /// Per-channel dilated convolution. `kernel` is `(K, C)`; with
    /// `right = (K-1)·dilation - left_pad`, tap `t` reads
    /// `x[p + right - dilation * t]`, zero outside the sequence.
    pub fn depthwise_conv(&mut self, x: NodeId, kernel: NodeId, dilation: usize, left_pad: usize) -> NodeId {
        let v = depthwise_forward(self.value(x), self.value(kernel), dilation, left_pad);
        let rg = self.rg(&[x, kernel]);
        self.push(v, Op::DepthwiseConv { x, kernel, dilation, left_pad }, rg)
    }

    /// `y[p] = x[p - offset]`, zero-filled.
    pub fn shift(&mut self, x: NodeId, offset: isize) -> NodeId {
        let v = shift_rows(self.value(x), offset);
        let rg = self.rg(&[x]);
        self.push(v, Op::Shift { x, offset }, rg)
    }

    /// Zero mean, unit variance over all entries jointly (no affine part).
    pub fn global_norm(&mut self, x: NodeId) -> NodeId {
        let (v, std) = normalize_all(self.value(x));
        let rg = self.rg(&[x]);
        self.push(v, Op::GlobalNorm { x, std }, rg)
    }

    /// Zero mean, unit variance per time step over channels (no affine part).
    pub fn row_norm(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let mut v = src.clone();
        let mut std = Vec::with_capacity(src.nrows());
        for mut row in v.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + NORM_EPS).sqrt();
            row.mapv_inplace(|a| (a - mean) / sd);
            std.push(sd);
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::RowNorm { x, std }, rg)
    }

    /// Softmax across `groups` equal column blocks: column `g * width + c` of
    /// the output is normalized against columns `h * width + c` for all `h`.
    pub fn group_softmax(&mut self, x: NodeId, groups: usize) -> NodeId {
        let v = group_softmax_forward(self.value(x), groups);
        let rg = self.rg(&[x]);
        self.push(v, Op::GroupSoftmax { x, groups }, rg)
    }

    /// Softmax over the entries of a `(1, B)` row.
    pub fn softmax_row(&mut self, x: NodeId) -> NodeId {
        let groups = self.value(x).ncols();
        self.group_softmax(x, groups)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[x]);
        self.push(v, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Cuts a `(1, len)` row into `(T, win)` frames at `stride`.
    pub fn frame(&mut self, x: NodeId, win: usize, stride: usize) -> NodeId {
        let v = frame_row(self.value(x), win, stride);
        let rg = self.rg(&[x]);
        self.push(v, Op::Frame { x, stride }, rg)
    }

    /// Overlap-adds `(T, win)` frames at `stride` into a `(1, (T-1)*stride + win)` row.
    pub fn overlap_add(&mut self, x: NodeId, stride: usize) -> NodeId {
        let v = overlap_add_rows(self.value(x), stride);
        let rg = self.rg(&[x]);
        self.push(v, Op::OverlapAdd { x, stride }, rg)
    }

    /// Max over time for each channel, giving a `(1, C)` row.
    pub fn max_pool_rows(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let mut argmax = vec![0usize; src.ncols()];
        let mut v = Array2::from_elem((1, src.ncols()), f64::NEG_INFINITY);
        for (t, row) in src.rows().into_iter().enumerate() {
            for (c, &a) in row.iter().enumerate() {
                if a > v[[0, c]] {
                    v[[0, c]] = a;
                    argmax[c] = t;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::MaxPoolRows { x, argmax }, rg)
    }

    /// Element-wise mean of equally shaped nodes.
    pub fn mean(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "mean of zero nodes");
        let mut v = self.value(parts[0]).clone();
        for p in &parts[1..] {
            v += self.value(*p);
        }
        v /= parts.len() as f64;
        let rg = self.rg(parts);
        self.push(v, Op::Mean(parts.to_vec()), rg)
    }

    /// Clamped scale-invariant SDR (dB) of a `(1, n)` estimate against a fixed reference.
    pub fn si_sdr(&mut self, est: NodeId, reference: &[f64]) -> Result<NodeId> {
        let s = self.value(est);
        assert_eq!(s.nrows(), 1, "si_sdr expects a row");
        let samples = s.as_slice().expect("row is contiguous");
        let (value, grad) = si_sdr_with_grad(samples, reference)?;
        let rg = self.rg(&[est]);
        Ok(self.push(Array2::from_elem((1, 1), value), Op::SiSdr { est, grad }, rg))
    }

    /// Reassembles `(1, seg_len)` segments placed every `hop` samples into a
    /// `(1, out_len)` row, averaging where segments overlap.
    pub fn overlap_average(&mut self, segments: &[NodeId], hop: usize, out_len: usize) -> NodeId {
        let seg_len = self.value(segments[0]).ncols();
        let mut sum = Array2::zeros((1, out_len));
        let mut counts = vec![0.0; out_len];
        for (i, seg) in segments.iter().enumerate() {
            let start = i * hop;
            let end = (start + seg_len).min(out_len);
            if start >= end {
                continue;
            }
            let v = self.value(*seg);
            assert_eq!(v.ncols(), seg_len, "segments differ in length");
            for (k, c) in counts[start..end].iter_mut().enumerate() {
                sum[[0, start + k]] += v[[0, k]];
                *c += 1.0;
            }
        }
        assert!(counts.iter().all(|&c| c > 0.0), "segments do not cover the output");
        Zip::from(sum.row_mut(0)).and(&counts).for_each(|s, &c| *s /= c);
        let rg = self.rg(segments);
        self.push(
            sum,
            Op::OverlapAverage { segments: segments.to_vec(), hop, counts: Arc::new(counts) },
            rg,
        )
    }

    /// Reverse pass from `output`, seeded with ones.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));
        let mut leaves: Vec<Option<Tensor>> = vec![None; n];

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let g = if g.is_standard_layout() { g } else { g.as_standard_layout().into_owned() };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let ga = g.dot(&self.value(*b).t());
                        self.accum(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = self.value(*a).t().dot(&g);
                        self.accum(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, g.clone());
                    self.accum(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, g.clone());
                    self.accum(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let ga = &g * self.value(*b);
                        self.accum(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = &g * self.value(*a);
                        self.accum(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, f) => self.accum(&mut grads, *a, g * *f),
                Op::AddScalar(a) => self.accum(&mut grads, *a, g),
                Op::AddRow(x, row) => {
                    let gr = column_sums(&g);
                    self.accum(&mut grads, *x, g);
                    self.accum(&mut grads, *row, gr);
                }
                Op::MulRow(x, row) => {
                    let gr = column_sums(&(&g * self.value(*x)));
                    let mut gx = g;
                    for_each_row(&mut gx, self.value(*row), |g, r| *g *= r);
                    self.accum(&mut grads, *x, gx);
                    self.accum(&mut grads, *row, gr);
                }
                Op::ScaleByEntry { x, weights, index } => {
                    let w = self.value(*weights);
                    let mut gw = Array2::zeros(w.raw_dim());
                    gw[[0, *index]] = (&g * self.value(*x)).sum();
                    let gx = &g * w[[0, *index]];
                    self.accum(&mut grads, *x, gx);
                    self.accum(&mut grads, *weights, gw);
                }
                Op::Prelu(x, slope) => {
                    let xv = self.value(*x);
                    let a = self.value(*slope);
                    let c = a.ncols();
                    let (a, xs) = (flat(a), flat(xv));
                    let mut gx = g.clone();
                    let mut gs = Array2::zeros((1, c));
                    let gs_row = flat_mut(&mut gs);
                    for (grow, xrow) in flat_mut(&mut gx).chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
                        for j in 0..c {
                            if xrow[j] <= 0.0 {
                                gs_row[j] += grow[j] * xrow[j];
                                grow[j] *= a[j];
                            }
                        }
                    }
                    self.accum(&mut grads, *x, gx);
                    self.accum(&mut grads, *slope, gs);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    self.accum(&mut grads, *x, gx);
                }
                Op::DepthwiseConv { x, kernel, dilation, left_pad } => {
                    let (gx, gk) = depthwise_backward(
                        &g,
                        self.value(*x),
                        self.value(*kernel),
                        *dilation,
                        *left_pad,
                        self.nodes[x.0].requires_grad,
                        self.nodes[kernel.0].requires_grad,
                    );
                    if let Some(gx) = gx {
                        self.accum(&mut grads, *x, gx);
                    }
                    if let Some(gk) = gk {
                        self.accum(&mut grads, *kernel, gk);
                    }
                }
                Op::Shift { x, offset } => self.accum(&mut grads, *x, shift_rows(&g, -offset)),
                Op::GlobalNorm { x, std } => {
                    let y = &node.value;
                    let gx = if self.frozen_norm_stats {
                        g / *std
                    } else {
                        let n = g.len() as f64;
                        let mean_g = g.sum() / n;
                        let mean_gy = (&g * y).sum() / n;
                        let mut gx = g;
                        Zip::from(&mut gx)
                            .and(y)
                            .for_each(|g, &y| *g = (*g - mean_g - y * mean_gy) / *std);
                        gx
                    };
                    self.accum(&mut grads, *x, gx);
                }
                Op::RowNorm { x, std } => {
                    let y = &node.value;
                    let mut gx = g;
                    for ((mut grow, yrow), &sd) in gx.rows_mut().into_iter().zip(y.rows()).zip(std) {
                        if self.frozen_norm_stats {
                            grow.mapv_inplace(|a| a / sd);
                            continue;
                        }
                        let n = grow.len() as f64;
                        let mean_g = grow.sum() / n;
                        let mean_gy = grow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / n;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &y| *g = (*g - mean_g - y * mean_gy) / sd);
                    }
                    self.accum(&mut grads, *x, gx);
                }
                Op::GroupSoftmax { x, groups } => {
                    let y = &node.value;
                    let width = y.ncols() / groups;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for t in 0..y.nrows() {
                        for c in 0..width {
                            let dot: f64 = (0..*groups).map(|h| g[[t, h * width + c]] * y[[t, h * width + c]]).sum();
                            for h in 0..*groups {
                                let j = h * width + c;
                                gx[[t, j]] = y[[t, j]] * (g[[t, j]] - dot);
                            }
                        }
                    }
                    self.accum(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.accum(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(s![.., start..start + w]).to_owned();
                        self.accum(&mut grads, *p, gp);
                        start += w;
                    }
                }
                Op::Frame { x, stride } => {
                    let mut gx = overlap_add_rows(&g, *stride);
                    let len = self.value(*x).ncols();
                    if gx.ncols() < len {
                        let mut full = Array2::zeros((1, len));
                        full.slice_mut(s![.., ..gx.ncols()]).assign(&gx);
                        gx = full;
                    }
                    self.accum(&mut grads, *x, gx);
                }
                Op::OverlapAdd { x, stride } => {
                    let win = self.value(*x).ncols();
                    self.accum(&mut grads, *x, frame_row(&g, win, *stride));
                }
                Op::MaxPoolRows { x, argmax } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (c, &t) in argmax.iter().enumerate() {
                        gx[[t, c]] += g[[0, c]];
                    }
                    self.accum(&mut grads, *x, gx);
                }
                Op::Mean(parts) => {
                    let gp = g / parts.len() as f64;
                    for p in parts {
                        self.accum(&mut grads, *p, gp.clone());
                    }
                }
                Op::SiSdr { est, grad } => {
                    if let Some(grad) = grad {
                        let scale = g[[0, 0]];
                        let gs = Array2::from_shape_fn((1, grad.len()), |(_, j)| grad[j] * scale);
                        self.accum(&mut grads, *est, gs);
                    }
                }
                Op::OverlapAverage { segments, hop, counts } => {
                    for (i, seg) in segments.iter().enumerate() {
                        let seg_len = self.value(*seg).ncols();
                        let mut gs = Array2::zeros((1, seg_len));
                        let start = i * hop;
                        for k in 0..seg_len {
                            let p = start + k;
                            if p < counts.len() {
                                gs[[0, k]] = g[[0, p]] / counts[p];
                            }
                        }
                        self.accum(&mut grads, *seg, gs);
                    }
                }
            }
        }

        Gradients { leaves, params: self.params.clone() }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of one backward pass, available for tracked leaves.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: BTreeMap<String, NodeId>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every parameter loaded into the graph. Parameters that do
    /// not influence the output get zeros.
    pub fn params(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = match self.wrt(*id) {
                    Some(g) => g.clone(),
                    None => Array2::zeros(store.get(name).map(|t| t.raw_dim()).unwrap_or(ndarray::Dim([0, 0]))),
                };
                (name.clone(), g)
            })
            .collect()
    }
}

pub(crate) const NORM_EPS: f64 = 1e-8;

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Valid output range `[p0, p1)` for a row offset so that `p + off` stays in `[0, len)`.
fn offset_range(len: usize, off: isize) -> Option<(usize, usize)> {
    let len = len as isize;
    let p0 = 0.max(-off);
    let p1 = len.min(len - off);
    (p0 < p1).then_some((p0 as usize, p1 as usize))
}

/// Tap `t` of output frame `p` reads input frame `p + off`: the right-hand
/// pad minus `d·t`, so tap 0 looks furthest ahead (convolution orientation).
fn tap_offset(kernel: usize, dilation: usize, left_pad: usize, t: usize) -> isize {
    let right_pad = ((kernel - 1) * dilation) as isize - left_pad as isize;
    right_pad - (dilation * t) as isize
}

pub(crate) fn depthwise_forward(x: &Tensor, kernel: &Tensor, dilation: usize, left_pad: usize) -> Tensor {
    let (len, channels) = x.dim();
    assert_eq!(kernel.ncols(), channels, "depthwise kernel channel mismatch");
    let mut y = Array2::zeros((len, channels));
    for (t, krow) in kernel.rows().into_iter().enumerate() {
        let off = tap_offset(kernel.nrows(), dilation, left_pad, t);
        let Some((p0, p1)) = offset_range(len, off) else { continue };
        let k = krow.to_vec();
        let q0 = (p0 as isize + off) as usize;
        let src = &flat(x)[q0 * channels..(q0 + p1 - p0) * channels];
        let dst = &mut flat_mut(&mut y)[p0 * channels..p1 * channels];
        for (yr, xr) in dst.chunks_exact_mut(channels).zip(src.chunks_exact(channels)) {
            for j in 0..channels {
                yr[j] += k[j] * xr[j];
            }
        }
    }
    y
}

fn depthwise_backward(
    g: &Tensor,
    x: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    left_pad: usize,
    want_x: bool,
    want_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let len = x.nrows();
    let mut gx = want_x.then(|| Array2::zeros(x.raw_dim()));
    let mut gk = want_k.then(|| Array2::zeros(kernel.raw_dim()));
    for (t, krow) in kernel.rows().into_iter().enumerate() {
        let off = tap_offset(kernel.nrows(), dilation, left_pad, t);
        let Some((p0, p1)) = offset_range(len, off) else { continue };
        let (q0, q1) = ((p0 as isize + off) as usize, (p1 as isize + off) as usize);
        let c = x.ncols();
        let gs = &flat(g)[p0 * c..p1 * c];
        if let Some(gx) = gx.as_mut() {
            let k = krow.to_vec();
            for (dst, src) in flat_mut(gx)[q0 * c..q1 * c].chunks_exact_mut(c).zip(gs.chunks_exact(c)) {
                for j in 0..c {
                    dst[j] += k[j] * src[j];
                }
            }
        }
        if let Some(gk) = gk.as_mut() {
            let mut acc = vec![0.0; c];
            for (gr, xr) in gs.chunks_exact(c).zip(flat(x)[q0 * c..q1 * c].chunks_exact(c)) {
                for j in 0..c {
                    acc[j] += gr[j] * xr[j];
                }
            }
            for (dst, a) in gk.row_mut(t).iter_mut().zip(acc) {
                *dst += a;
            }
        }
    }
    (gx, gk)
}

fn flat(x: &Tensor) -> &[f64] {
    x.as_slice().expect("row-major tensor")
}

fn flat_mut(x: &mut Tensor) -> &mut [f64] {
    x.as_slice_mut().expect("row-major tensor")
}

/// Applies `f(y, row[c])` to every entry of `y`, row by row.
fn for_each_row(y: &mut Tensor, row: &Tensor, f: impl Fn(&mut f64, f64)) {
    assert_eq!(row.dim(), (1, y.ncols()), "row broadcast shape mismatch");
    let c = y.ncols();
    if c == 0 {
        return;
    }
    let r = flat(row);
    for chunk in flat_mut(y).chunks_exact_mut(c) {
        for (v, &a) in chunk.iter_mut().zip(r) {
            f(v, a);
        }
    }
}

fn column_sums(x: &Tensor) -> Tensor {
    let c = x.ncols();
    let mut out = Array2::zeros((1, c));
    if c == 0 {
        return out;
    }
    let acc = flat_mut(&mut out);
    for chunk in flat(x).chunks_exact(c) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += v;
        }
    }
    out
}

pub(crate) fn shift_rows(x: &Tensor, offset: isize) -> Tensor {
    let mut y = Array2::zeros(x.raw_dim());
    // y[p] = x[p - offset]
    if let Some((p0, p1)) = offset_range(x.nrows(), -offset) {
        let src = x.slice(s![(p0 as isize - offset) as usize..(p1 as isize - offset) as usize, ..]);
        y.slice_mut(s![p0..p1, ..]).assign(&src);
    }
    y
}

pub(crate) fn normalize_all(x: &Tensor) -> (Tensor, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = (var + NORM_EPS).sqrt();
    (x.mapv(|a| (a - mean) / std), std)
}

fn group_softmax_forward(x: &Tensor, groups: usize) -> Tensor {
    assert!(groups >= 1 && x.ncols().is_multiple_of(groups), "columns must split into {groups} groups");
    let width = x.ncols() / groups;
    let mut y = Array2::zeros(x.raw_dim());
    let mut buf = vec![0.0; groups];
    for t in 0..x.nrows() {
        for c in 0..width {
            let max = (0..groups).map(|h| x[[t, h * width + c]]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (h, b) in buf.iter_mut().enumerate() {
                *b = (x[[t, h * width + c]] - max).exp();
                total += *b;
            }
            for (h, b) in buf.iter().enumerate() {
                y[[t, h * width + c]] = b / total;
            }
        }
    }
    y
}

pub(crate) fn frame_row(x: &Tensor, win: usize, stride: usize) -> Tensor {
    assert_eq!(x.nrows(), 1, "frame expects a row");
    let len = x.ncols();
    assert!(len >= win && stride >= 1, "signal shorter than one window");
    let frames = (len - win) / stride + 1;
    let row = x.row(0);
    Array2::from_shape_fn((frames, win), |(t, j)| row[t * stride + j])
}

pub(crate) fn overlap_add_rows(x: &Tensor, stride: usize) -> Tensor {
    let (frames, win) = x.dim();
    let len = if frames == 0 { 0 } else { (frames - 1) * stride + win };
    let mut y = Array2::zeros((1, len));
    for (t, row) in x.rows().into_iter().enumerate() {
        let mut dst = y.slice_mut(s![0, t * stride..t * stride + win]);
        dst += &row;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_backward_matches_closed_form() {
        let mut g = Graph::new();
        let a = g.input(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = g.input(array![[0.5], [-1.0]]);
        let y = g.matmul(a, b);
        let grads = g.backward(y);
        assert_eq!(grads.wrt(a).unwrap(), &array![[0.5, -1.0], [0.5, -1.0]]);
        assert_eq!(grads.wrt(b).unwrap(), &array![[4.0], [6.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.input(array![[3.0, 4.0]]);
        let y = g.mul(a, b);
        let grads = g.backward(y);
        assert!(grads.wrt(a).is_none());
        assert_eq!(grads.wrt(b).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn frame_and_overlap_add_are_adjoint() {
        let x = Array2::from_shape_fn((1, 11), |(_, j)| j as f64);
        let frames = frame_row(&x, 4, 2);
        assert_eq!(frames.dim(), (4, 4));
        assert_eq!(frames.row(1).to_vec(), vec![2.0, 3.0, 4.0, 5.0]);
        let y = Array2::from_shape_fn((4, 4), |(t, j)| (t * 10 + j) as f64);
        // <frame(x), y> == <x, overlap_add(y)>
        let lhs = (&frames * &y).sum();
        let ola = overlap_add_rows(&y, 2);
        let rhs: f64 = x.slice(s![.., ..ola.ncols()]).iter().zip(ola.iter()).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn shift_moves_rows_and_zero_fills() {
        let x = array![[1.0], [2.0], [3.0]];
        assert_eq!(shift_rows(&x, 1), array![[0.0], [1.0], [2.0]]);
        assert_eq!(shift_rows(&x, -2), array![[3.0], [0.0], [0.0]]);
        assert_eq!(shift_rows(&x, 5), array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn group_softmax_sums_to_one_per_slot() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, -2.0, 0.5, 3.0, 0.0, 0.0]]);
        let y = g.group_softmax(x, 3);
        let v = g.value(y);
        for c in 0..2 {
            let total: f64 = (0..3).map(|h| v[[0, h * 2 + c]]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_saturates_to_exact_endpoints() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert_eq!(logistic(0.0), 0.5);
    }
}
