//! Action-value network: three convolutional branches (top-image history,
//! positive proxies, negative proxies) feeding a three-layer perceptron,
//! with hand-written backpropagation and an RMSProp optimizer.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, AgentError, SearchState, StateShape};
use crate::rng;

const KERNEL: usize = 3;

/// Layer sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub state: StateShape,
    pub filters: usize,
    pub hidden: [usize; 2],
}

impl NetShape {
    pub fn new(state: StateShape) -> Self {
        Self { state, filters: 8, hidden: [256, 64] }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let s = &self.state;
        if s.d < 2 || s.top_k < 2 || s.history == 0 || self.filters == 0 || self.hidden.contains(&0) {
            return Err(AgentError::Shape(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    fn branches(&self) -> [ConvGeom; 3] {
        let s = &self.state;
        let f = self.filters;
        [
            ConvGeom { rows: s.top_rows(), cols: s.d, filters: f },
            ConvGeom { rows: s.top_k, cols: s.d, filters: f },
            ConvGeom { rows: s.top_k, cols: s.d, filters: f },
        ]
    }

    /// Width of the concatenated branch outputs plus action history.
    pub fn fc_input(&self) -> usize {
        self.branches().iter().map(ConvGeom::pooled_len).sum::<usize>() + self.state.action_len()
    }

    /// Flattened output length of each branch (top, +prox, −prox).
    pub fn branch_outputs(&self) -> [usize; 3] {
        self.branches().map(|g| g.pooled_len())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    rows: usize,
    cols: usize,
    filters: usize,
}

impl ConvGeom {
    fn conv_len(&self) -> usize {
        self.filters * self.rows * self.cols
    }

    fn pooled_rows(&self) -> usize {
        self.rows / 2
    }

    fn pooled_cols(&self) -> usize {
        self.cols / 2
    }

    fn pooled_len(&self) -> usize {
        self.filters * self.pooled_rows() * self.pooled_cols()
    }
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: [Range<usize>; 3],
    conv_b: [Range<usize>; 3],
    fc_w: [Range<usize>; 3],
    fc_b: [Range<usize>; 3],
    fc_dims: [(usize, usize); 3],
    total: usize,
}

impl Layout {
    fn new(shape: &NetShape) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let f = shape.filters;
        let mut conv_w: [Range<usize>; 3] = Default::default();
        let mut conv_b: [Range<usize>; 3] = Default::default();
        for i in 0..3 {
            conv_w[i] = take(f * KERNEL * KERNEL);
            conv_b[i] = take(f);
        }
        let fc_dims = [
            (shape.fc_input(), shape.hidden[0]),
            (shape.hidden[0], shape.hidden[1]),
            (shape.hidden[1], Action::ALL.len()),
        ];
        let mut fc_w: [Range<usize>; 3] = Default::default();
        let mut fc_b: [Range<usize>; 3] = Default::default();
        for (i, &(fan_in, fan_out)) in fc_dims.iter().enumerate() {
            fc_w[i] = take(fan_in * fan_out);
            fc_b[i] = take(fan_out);
        }
        Self { conv_w, conv_b, fc_w, fc_b, fc_dims, total: at }
    }
}

const BLOCK_NAMES: [&str; 12] = [
    "conv_top.weight",
    "conv_top.bias",
    "conv_pos.weight",
    "conv_pos.bias",
    "conv_neg.weight",
    "conv_neg.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];

/// Gradient with the same flat layout as [`QNetwork::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetShape,
    layout_total: usize,
    params: Vec<f64>,
}

// Per-sample convolution caches, one per branch.
struct BranchCache {
    pre: Vec<f64>,
    argmax: Vec<u32>,
}

struct ForwardCache {
    branches: Vec<[BranchCache; 3]>,
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    q: Array2<f64>,
}

impl QNetwork {
    /// Glorot-uniform weights, zero biases, from a seeded stream.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self, AgentError> {
        let mut net = Self::zeros(shape)?;
        let layout = Layout::new(&shape);
        let mut rng = rng::stream(seed, "qnet-init", &[]);
        let conv_fan_in = KERNEL * KERNEL;
        let conv_fan_out = KERNEL * KERNEL * shape.filters;
        for r in &layout.conv_w {
            let limit = (6.0 / (conv_fan_in + conv_fan_out) as f64).sqrt();
            for w in &mut net.params[r.clone()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        for (r, &(fan_in, fan_out)) in layout.fc_w.iter().zip(&layout.fc_dims) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[r.clone()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(shape: NetShape) -> Result<Self, AgentError> {
        shape.validate()?;
        let total = Layout::new(&shape).total;
        Ok(Self { shape, layout_total: total, params: vec![0.0; total] })
    }

    /// Rebuilds a network from a parameter vector (e.g. a checkpoint).
    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self, AgentError> {
        let net = Self::zeros(shape)?;
        if params.len() != net.layout_total {
            return Err(AgentError::Shape(format!(
                "expected {} parameters, got {}",
                net.layout_total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(AgentError::Shape("non-finite parameter".into()));
        }
        Ok(Self { params, ..net })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let l = Layout::new(&self.shape);
        let ranges = [
            &l.conv_w[0], &l.conv_b[0], &l.conv_w[1], &l.conv_b[1], &l.conv_w[2], &l.conv_b[2],
            &l.fc_w[0], &l.fc_b[0], &l.fc_w[1], &l.fc_b[1], &l.fc_w[2], &l.fc_b[2],
        ];
        BLOCK_NAMES.iter().zip(ranges).map(|(&name, r)| ParamBlock { name, range: r.clone() }).collect()
    }

    pub fn forward(&self, state: &SearchState) -> Result<[f64; 3], AgentError> {
        Ok(self.forward_batch(&[state])?[0])
    }

    pub fn forward_batch(&self, states: &[&SearchState]) -> Result<Vec<[f64; 3]>, AgentError> {
        let cache = self.run_forward(states)?;
        Ok(cache.q.outer_iter().map(|row| [row[0], row[1], row[2]]).collect())
    }

    /// Mean squared error between `Q(state, action)` and the fixed target,
    /// with its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, samples: &[(&SearchState, Action, f64)]) -> Result<(f64, Gradient), AgentError> {
        if samples.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let states: Vec<&SearchState> = samples.iter().map(|s| s.0).collect();
        let cache = self.run_forward(&states)?;
        let b = samples.len() as f64;
        let mut dq = Array2::<f64>::zeros(cache.q.raw_dim());
        let mut loss = 0.0;
        for (row, &(_, action, target)) in samples.iter().enumerate() {
            let err = cache.q[[row, action.index()]] - target;
            loss += err * err;
            dq[[row, action.index()]] = 2.0 * err / b;
        }
        let grad = self.backward(&states, &cache, dq);
        Ok((loss / b, grad))
    }

    /// Binary activation pattern (ReLU masks and pooling winners) for a
    /// batch; two parameter vectors with equal patterns lie in the same
    /// linear region of the network.
    pub fn activation_pattern(&self, states: &[&SearchState]) -> Result<Vec<u32>, AgentError> {
        let cache = self.run_forward(states)?;
        let mut out = Vec::new();
        for branches in &cache.branches {
            for b in branches {
                out.extend(b.pre.iter().map(|&v| u32::from(v > 0.0)));
                out.extend(b.argmax.iter().copied());
            }
        }
        out.extend(cache.h1.iter().map(|&v| u32::from(v > 0.0)));
        out.extend(cache.h2.iter().map(|&v| u32::from(v > 0.0)));
        Ok(out)
    }

    /// Hex SHA-256 of the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn run_forward(&self, states: &[&SearchState]) -> Result<ForwardCache, AgentError> {
        for s in states {
            s.check_shape(&self.shape.state)?;
        }
        let l = Layout::new(&self.shape);
        let geoms = self.shape.branches();
        let outs = self.shape.branch_outputs();
        let fc_in = self.shape.fc_input();
        let batch = states.len();

        let mut x = Array2::<f64>::zeros((batch, fc_in));
        let mut branches = Vec::with_capacity(batch);
        for (row, s) in states.iter().enumerate() {
            let inputs: [&[f64]; 3] = [&s.top_hist, &s.pos_prox, &s.neg_prox];
            let mut xrow = x.row_mut(row);
            let xs = xrow.as_slice_mut().expect("row-major");
            let mut at = 0;
            let caches: [BranchCache; 3] = std::array::from_fn(|i| {
                let g = geoms[i];
                let mut pre = vec![0.0; g.conv_len()];
                let mut argmax = vec![0u32; g.pooled_len()];
                conv_forward(
                    &self.params[l.conv_w[i].clone()],
                    &self.params[l.conv_b[i].clone()],
                    inputs[i],
                    g,
                    &mut pre,
                    &mut xs[at..at + outs[i]],
                    &mut argmax,
                );
                at += outs[i];
                BranchCache { pre, argmax }
            });
            xs[at..].copy_from_slice(&s.action_hist);
            branches.push(caches);
        }

        let h1 = dense(&x, self.view(&l.fc_w[0], l.fc_dims[0]), &self.params[l.fc_b[0].clone()], true);
        let h2 = dense(&h1, self.view(&l.fc_w[1], l.fc_dims[1]), &self.params[l.fc_b[1].clone()], true);
        let q = dense(&h2, self.view(&l.fc_w[2], l.fc_dims[2]), &self.params[l.fc_b[2].clone()], false);
        Ok(ForwardCache { branches, x, h1, h2, q })
    }

    fn view(&self, r: &Range<usize>, dims: (usize, usize)) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(dims, &self.params[r.clone()]).expect("layout matches dims")
    }

    fn backward(&self, states: &[&SearchState], cache: &ForwardCache, dq: Array2<f64>) -> Gradient {
        let l = Layout::new(&self.shape);
        let mut grad = vec![0.0; self.params.len()];

        let dh2 = dense_backward(&mut grad, &l, 2, &cache.h2, &dq, self.view(&l.fc_w[2], l.fc_dims[2]), Some(&cache.h2));
        let dh1 = dense_backward(&mut grad, &l, 1, &cache.h1, &dh2, self.view(&l.fc_w[1], l.fc_dims[1]), Some(&cache.h1));
        let dx = dense_backward(&mut grad, &l, 0, &cache.x, &dh1, self.view(&l.fc_w[0], l.fc_dims[0]), None);
        let geoms = self.shape.branches();
        let outs = self.shape.branch_outputs();
        for (row, s) in states.iter().enumerate() {
            let inputs: [&[f64]; 3] = [&s.top_hist, &s.pos_prox, &s.neg_prox];
            let dxs = dx.row(row);
            let dxs = dxs.as_slice().expect("row-major");
            let mut at = 0;
            for i in 0..3 {
                let (gw, gb) = split_two(&mut grad, &l.conv_w[i], &l.conv_b[i]);
                conv_backward(inputs[i], geoms[i], &cache.branches[row][i], &dxs[at..at + outs[i]], gw, gb);
                at += outs[i];
            }
        }
        Gradient(grad)
    }
}

fn split_two<'a>(buf: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end == b.start);
    let (left, right) = buf[a.start..b.end].split_at_mut(a.len());
    (left, right)
}

fn dense(input: &Array2<f64>, w: ArrayView2<'_, f64>, b: &[f64], relu: bool) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((input.nrows(), w.ncols()));
    for mut row in out.outer_iter_mut() {
        row.as_slice_mut().expect("row-major").copy_from_slice(b);
    }
    general_mat_mul(1.0, input, &w, 1.0, &mut out);
    if relu {
        out.mapv_inplace(|v| v.max(0.0));
    }
    out
}

/// Accumulates weight and bias gradients of fully connected layer `layer`
/// and returns the gradient with respect to its input, masked by the
/// input's ReLU activation when `input_activation` is given.
fn dense_backward(
    grad: &mut [f64],
    l: &Layout,
    layer: usize,
    input: &Array2<f64>,
    dout: &Array2<f64>,
    w: ArrayView2<'_, f64>,
    input_activation: Option<&Array2<f64>>,
) -> Array2<f64> {
    {
        let mut gw = ArrayViewMut2::from_shape(l.fc_dims[layer], &mut grad[l.fc_w[layer].clone()]).expect("dims");
        general_mat_mul(1.0, &input.t(), dout, 1.0, &mut gw);
    }
    let db = dout.sum_axis(Axis(0));
    for (g, v) in grad[l.fc_b[layer].clone()].iter_mut().zip(db.iter()) {
        *g += v;
    }
    let mut din = Array2::<f64>::zeros(input.raw_dim());
    general_mat_mul(1.0, dout, &w.t(), 0.0, &mut din);
    if let Some(act) = input_activation {
        din.zip_mut_with(act, |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
    }
    din
}

/// Same-padded 3×3 convolution (single input channel), ReLU, 2×2 max-pool.
fn conv_forward(
    w: &[f64],
    b: &[f64],
    input: &[f64],
    g: ConvGeom,
    pre: &mut [f64],
    pooled: &mut [f64],
    argmax: &mut [u32],
) {
    let (rows, cols) = (g.rows, g.cols);
    for f in 0..g.filters {
        let wf = &w[f * 9..f * 9 + 9];
        let plane = &mut pre[f * rows * cols..(f + 1) * rows * cols];
        plane.fill(b[f]);
        for kr in 0..KERNEL {
            for r in 0..rows {
                let src_r = r + kr;
                if src_r == 0 || src_r > rows {
                    continue;
                }
                let src = &input[(src_r - 1) * cols..src_r * cols];
                let dst = &mut plane[r * cols..(r + 1) * cols];
                let (w0, w1, w2) = (wf[kr * 3], wf[kr * 3 + 1], wf[kr * 3 + 2]);
                // Column offsets −1, 0, +1.
                for c in 0..cols {
                    let mut acc = w1 * src[c];
                    if c > 0 {
                        acc += w0 * src[c - 1];
                    }
                    if c + 1 < cols {
                        acc += w2 * src[c + 1];
                    }
                    dst[c] += acc;
                }
            }
        }
    }
    let (pr, pc) = (g.pooled_rows(), g.pooled_cols());
    for f in 0..g.filters {
        for i in 0..pr {
            for j in 0..pc {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = f * rows * cols + (2 * i + dr) * cols + (2 * j + dc);
                    let v = pre[idx].max(0.0);
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let o = f * pr * pc + i * pc + j;
                pooled[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

fn conv_backward(input: &[f64], g: ConvGeom, cache: &BranchCache, dpooled: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    let (rows, cols) = (g.rows, g.cols);
    let plane = rows * cols;
    for (o, &dp) in dpooled.iter().enumerate() {
        if dp == 0.0 {
            continue;
        }
        let idx = cache.argmax[o] as usize;
        if cache.pre[idx] <= 0.0 {
            continue;
        }
        let f = idx / plane;
        let r = (idx % plane) / cols;
        let c = idx % cols;
        gb[f] += dp;
        for kr in 0..KERNEL {
            let src_r = r + kr;
            if src_r == 0 || src_r > rows {
                continue;
            }
            for kc in 0..KERNEL {
                let src_c = c + kc;
                if src_c == 0 || src_c > cols {
                    continue;
                }
                gw[f * 9 + kr * 3 + kc] += dp * input[(src_r - 1) * cols + src_c - 1];
            }
        }
    }
}

/// RMSProp: `cache ← ρ·cache + (1−ρ)·g²`, `θ ← θ − lr·g / (√cache + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    cache: Vec<f64>,
}

impl RmsProp {
    pub fn new(num_params: usize, lr: f64, rho: f64, eps: f64) -> Self {
        Self { lr, rho, eps, cache: vec![0.0; num_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &Gradient) {
        for ((p, c), &g) in params.iter_mut().zip(&mut self.cache).zip(&grad.0) {
            *c = self.rho * *c + (1.0 - self.rho) * g * g;
            *p -= self.lr * g / (c.sqrt() + self.eps);
        }
    }
}
