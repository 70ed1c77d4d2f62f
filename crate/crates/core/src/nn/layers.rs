//! Parameter store and the layer zoo: linear, MLP, 1-D convolution,
//! two-layer GRU, multi-head attention, multi-context gating, layer norm.
//!
//! Layers own parameter *names*; values live in a [`Params`] store so the
//! trainer can update them between forwards. A [`Binder`] interns each
//! parameter into the current graph once per forward pass.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::math;
use crate::rng::Rng;

/// Named parameter tensors with deterministic (sorted) iteration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(self.map.insert(name.to_string(), t).is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    fn uniform(&mut self, rng: &mut Rng, name: &str, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.range(-bound, bound)).collect();
        self.insert(name, Tensor::new(shape, data));
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}

/// Per-forward cache mapping parameter names to graph leaves.
pub struct Binder<'p> {
    params: &'p Params,
    bound: BTreeMap<String, NodeId>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self { params, bound: BTreeMap::new() }
    }

    /// Binder whose parameters are pre-bound to existing graph nodes, so
    /// callers (gradient checks, mostly) can own the parameter leaves.
    pub fn with_preset(params: &'p Params, names: &[String], ids: &[NodeId]) -> Self {
        assert_eq!(names.len(), ids.len());
        let mut bound = BTreeMap::new();
        for (n, id) in names.iter().zip(ids) {
            bound.insert(n.clone(), *id);
        }
        Self { params, bound }
    }

    pub fn node(&mut self, g: &mut Graph, name: &str) -> NodeId {
        if let Some(id) = self.bound.get(name) {
            return *id;
        }
        let id = g.leaf(self.params.get(name).clone().with_grad());
        self.bound.insert(name.to_string(), id);
        id
    }

    /// Names and graph ids of every parameter touched this forward.
    pub fn bound(&self) -> impl Iterator<Item = (&String, NodeId)> {
        self.bound.iter().map(|(n, id)| (n, *id))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / math::sqrt(in_dim as f64);
        params.uniform(rng, &format!("{name}.w"), &[in_dim, out_dim], bound);
        params.uniform(rng, &format!("{name}.b"), &[out_dim], bound);
        Self { w: format!("{name}.w"), b: format!("{name}.b"), in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, x: NodeId) -> NodeId {
        let w = binder.node(g, &self.w);
        let b = binder.node(g, &self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Linear stack with ReLU between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = `[in, hidden.., out]`.
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(params, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, binder, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: String,
    pub b: String,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Conv1d {
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, kernel: usize, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / math::sqrt((kernel * in_dim) as f64);
        params.uniform(rng, &format!("{name}.w"), &[kernel * in_dim, out_dim], bound);
        params.uniform(rng, &format!("{name}.b"), &[out_dim], bound);
        Self { w: format!("{name}.w"), b: format!("{name}.b"), kernel, in_dim, out_dim }
    }

    /// `x` is `[batch*time, in_dim]`, batch-major.
    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, x: NodeId, batch: usize, time: usize) -> NodeId {
        let w = binder.node(g, &self.w);
        let b = binder.node(g, &self.b);
        let y = g.conv1d_same(x, w, batch, time, self.kernel);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct GruLayer {
    w_ih: String,
    w_hh: String,
    b_ih: String,
    b_hh: String,
    hidden: usize,
}

impl GruLayer {
    fn init(params: &mut Params, rng: &mut Rng, name: &str, in_dim: usize, hidden: usize) -> Self {
        let bound = 1.0 / math::sqrt(hidden as f64);
        params.uniform(rng, &format!("{name}.w_ih"), &[in_dim, 3 * hidden], bound);
        params.uniform(rng, &format!("{name}.w_hh"), &[hidden, 3 * hidden], bound);
        params.zeros(&format!("{name}.b_ih"), &[3 * hidden]);
        params.zeros(&format!("{name}.b_hh"), &[3 * hidden]);
        Self {
            w_ih: format!("{name}.w_ih"),
            w_hh: format!("{name}.w_hh"),
            b_ih: format!("{name}.b_ih"),
            b_hh: format!("{name}.b_hh"),
            hidden,
        }
    }

    /// One step over a `[n, in]` batch with `[n, hidden]` state.
    fn step(&self, g: &mut Graph, binder: &mut Binder, x: NodeId, h: NodeId) -> NodeId {
        let d = self.hidden;
        let w_ih = binder.node(g, &self.w_ih);
        let w_hh = binder.node(g, &self.w_hh);
        let b_ih = binder.node(g, &self.b_ih);
        let b_hh = binder.node(g, &self.b_hh);
        let gi = g.matmul(x, w_ih);
        let gi = g.add_row(gi, b_ih);
        let gh = g.matmul(h, w_hh);
        let gh = g.add_row(gh, b_hh);

        let gi_r = g.slice_cols(gi, 0, d);
        let gi_z = g.slice_cols(gi, d, 2 * d);
        let gi_n = g.slice_cols(gi, 2 * d, 3 * d);
        let gh_r = g.slice_cols(gh, 0, d);
        let gh_z = g.slice_cols(gh, d, 2 * d);
        let gh_n = g.slice_cols(gh, 2 * d, 3 * d);

        let r_pre = g.add(gi_r, gh_r);
        let r = g.sigmoid(r_pre);
        let z_pre = g.add(gi_z, gh_z);
        let z = g.sigmoid(z_pre);
        let rn = g.mul_elem(r, gh_n);
        let n_pre = g.add(gi_n, rn);
        let n = g.tanh(n_pre);

        let one_minus_z = g.affine(z, -1.0, 1.0);
        let a = g.mul_elem(one_minus_z, n);
        let b = g.mul_elem(z, h);
        g.add(a, b)
    }
}

/// Two-layer GRU over batched sequences.
#[derive(Debug, Clone)]
pub struct GruStack {
    layers: Vec<GruLayer>,
    pub hidden: usize,
}

impl GruStack {
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, in_dim: usize, hidden: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|i| GruLayer::init(params, rng, &format!("{name}.l{i}"), if i == 0 { in_dim } else { hidden }, hidden))
            .collect();
        Self { layers, hidden }
    }

    /// `seq` is `[n*time, in]`, batch-major. Returns the per-step outputs of
    /// the top layer and the final hidden state `[n, hidden]`.
    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, seq: NodeId, n: usize, time: usize) -> (Vec<NodeId>, NodeId) {
        assert!(time >= 1);
        // Step t rows are n rows at stride `time`.
        let steps: Vec<NodeId> = (0..time)
            .map(|t| {
                let idx: Vec<usize> = (0..n).map(|b| b * time + t).collect();
                g.gather_rows(seq, &idx)
            })
            .collect();
        let mut inputs = steps;
        let mut last = None;
        for layer in &self.layers {
            let mut h = g.constant(Tensor::zeros(&[n, layer.hidden]));
            let mut outs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                h = layer.step(g, binder, x, h);
                outs.push(h);
            }
            last = Some(h);
            inputs = outs;
        }
        (inputs, last.expect("at least one layer"))
    }
}

/// Scaled dot-product attention with per-head projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, dim: usize, heads: usize) -> Self {
        assert!(dim % heads == 0, "attention width {dim} not divisible by {heads} heads");
        Self {
            wq: Linear::init(params, rng, &format!("{name}.wq"), dim, dim),
            wk: Linear::init(params, rng, &format!("{name}.wk"), dim, dim),
            wv: Linear::init(params, rng, &format!("{name}.wv"), dim, dim),
            wo: Linear::init(params, rng, &format!("{name}.wo"), dim, dim),
            heads,
            dim,
        }
    }

    /// `mask`, when given, is an additive `[nq, nk]` constant (0 to keep,
    /// a large negative number to drop).
    pub fn forward(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<NodeId>,
    ) -> NodeId {
        let dh = self.dim / self.heads;
        let qp = self.wq.forward(g, binder, q);
        let kp = self.wk.forward(g, binder, k);
        let vp = self.wv.forward(g, binder, v);
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(qp, lo, hi);
            let kh = g.slice_cols(kp, lo, hi);
            let vh = g.slice_cols(vp, lo, hi);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let mut scores = g.affine(scores, 1.0 / math::sqrt(dh as f64), 0.0);
            if let Some(m) = mask {
                scores = g.add(scores, m);
            }
            let attn = g.softmax_rows(scores);
            head_outs.push(g.matmul(attn, vh));
        }
        let mut cat = head_outs[0];
        for &h in &head_outs[1..] {
            cat = g.concat_cols(cat, h);
        }
        self.wo.forward(g, binder, cat)
    }
}

/// Multi-context gating: two token sets exchange pooled context through
/// elementwise gates, with residual connections.
#[derive(Debug, Clone)]
pub struct Mcg {
    pub mlp_x: Mlp,
    pub mlp_y: Mlp,
    pub gate_x: Mlp,
    pub gate_y: Mlp,
}

impl Mcg {
    pub fn init(params: &mut Params, rng: &mut Rng, name: &str, dim: usize) -> Self {
        Self {
            mlp_x: Mlp::init(params, rng, &format!("{name}.mlp_x"), &[dim, dim, dim]),
            mlp_y: Mlp::init(params, rng, &format!("{name}.mlp_y"), &[dim, dim, dim]),
            gate_x: Mlp::init(params, rng, &format!("{name}.gate_x"), &[dim, dim]),
            gate_y: Mlp::init(params, rng, &format!("{name}.gate_y"), &[dim, dim]),
        }
    }

    /// `x: [nx, d]`, `y: [ny, d]` -> gated `(x_out, y_out)`, same shapes.
    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, x: NodeId, y: NodeId) -> (NodeId, NodeId) {
        let (nx, _) = g.value(x).dims2();
        let (ny, _) = g.value(y).dims2();
        let hx = self.mlp_x.forward(g, binder, x);
        let hy = self.mlp_y.forward(g, binder, y);
        let cx = g.max_pool_rows(hx, nx);
        let cy = g.max_pool_rows(hy, ny);
        let gx = self.gate_x.forward(g, binder, cx);
        let gy = self.gate_y.forward(g, binder, cy);
        let x_gated = g.mul_row(hx, gy);
        let x_out = g.add(x_gated, x);
        let y_gated = g.mul_row(hy, gx);
        let y_out = g.add(y_gated, y);
        (x_out, y_out)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn init(params: &mut Params, _rng: &mut Rng, name: &str, dim: usize) -> Self {
        params.insert(&format!("{name}.gamma"), Tensor::new(&[dim], alloc::vec![1.0; dim]));
        params.zeros(&format!("{name}.beta"), &[dim]);
        Self { gamma: format!("{name}.gamma"), beta: format!("{name}.beta") }
    }

    pub fn forward(&self, g: &mut Graph, binder: &mut Binder, x: NodeId) -> NodeId {
        let gamma = binder.node(g, &self.gamma);
        let beta = binder.node(g, &self.beta);
        let n = g.layer_norm_rows(x, 1e-5);
        let scaled = g.mul_row(n, gamma);
        g.add_row(scaled, beta)
    }
}
