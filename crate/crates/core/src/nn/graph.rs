//! Recorded-operation computation graph with reverse-mode gradients.
//!
//! Ops append nodes to an arena; parents always precede children, so the
//! backward pass is a single reverse sweep. Matrix ops work on rank-2
//! tensors (rank-1 is treated as a single row). Shape mismatches panic with
//! a message naming both shapes; that is the contract for programming
//! errors, mirroring the dense-array crates this stack replaces.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::kinematics::{ControlSequence, KinematicLimits, KinematicState};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    DivElem(NodeId, NodeId),
    /// `[n,d] + [d]` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[n,d] * [d]` broadcast over rows.
    MulRow(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    /// `mul * x + add`.
    Affine(NodeId, f64, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Cos(NodeId),
    Sin(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    RowSum(NodeId),
    SumAll(NodeId),
    /// Max over consecutive row blocks of the given size.
    MaxPoolRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    GatherCols(NodeId, Vec<usize>),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    Reshape(NodeId),
    /// Row-wise `(x - mean) / sqrt(var + eps)`; affine params live outside.
    LayerNormRows(NodeId, f64),
    /// Same-padded 1-D convolution over per-batch-item time series.
    Conv1dSame { input: NodeId, weight: NodeId, batch: usize, time: usize, kernel: usize },
    /// Clamped-control Euler rollout of `[k,t]` accel/yaw-rate commands into
    /// `[k, 2t]` interleaved (x, y) positions.
    Rollout { accel: NodeId, yaw: NodeId, init: KinematicState, lim: KinematicLimits },
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    /// Flat argmax source-row index per output element.
    ArgMax(Vec<usize>),
    /// Per-row reciprocal standard deviation.
    InvStd(Vec<f64>),
    /// Rollout intermediates: per mode and step `[v, th, a_pass, w_pass]`.
    RolloutTrace(Vec<f64>),
}

pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    requires: Vec<bool>,
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { ops: Vec::new(), values: Vec::new(), aux: Vec::new(), requires: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id.0].shape()
    }

    fn push(&mut self, op: Op, value: Tensor, aux: Aux, requires: bool) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.aux.push(aux);
        self.requires.push(requires);
        NodeId(self.ops.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    /// Inserts a tensor honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let requires = t.requires_grad;
        self.push(Op::Leaf, t, Aux::None, requires)
    }

    /// Inserts a tensor that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, Aux::None, false)
    }

    /// Re-inserts the current value of a node as a gradient-stopping copy.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let t = self.values[id.0].clone();
        let t = Tensor::new(t.shape(), t.data().to_vec());
        self.constant(t)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    fn zip_elem(&mut self, op: Op, a: NodeId, b: NodeId, f: fn(f64, f64) -> f64, what: &str) -> NodeId {
        self.same_shape(a, b, what);
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a) || self.req(b);
        self.push(op, t, Aux::None, req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_elem(Op::Add(a, b), a, b, |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_elem(Op::Sub(a, b), a, b, |x, y| x - y, "sub")
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_elem(Op::MulElem(a, b), a, b, |x, y| x * y, "mul_elem")
    }

    pub fn div_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_elem(Op::DivElem(a, b), a, b, |x, y| x / y, "div_elem")
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let rd = self.values[row.0].numel();
        assert_eq!(d, rd, "add_row: matrix {:?} vs row {:?}", self.shape(a), self.shape(row));
        let mut data = self.values[a.0].data().to_vec();
        let r = self.values[row.0].data();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += r[j];
            }
        }
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a) || self.req(row);
        self.push(Op::AddRow(a, row), t, Aux::None, req)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let rd = self.values[row.0].numel();
        assert_eq!(d, rd, "mul_row: matrix {:?} vs row {:?}", self.shape(a), self.shape(row));
        let mut data = self.values[a.0].data().to_vec();
        let r = self.values[row.0].data();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] *= r[j];
            }
        }
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a) || self.req(row);
        self.push(Op::MulRow(a, row), t, Aux::None, req)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.values[a.0].dims2();
        let (k2, n) = self.values[b.0].dims2();
        assert_eq!(k, k2, "matmul: {:?} x {:?}", self.shape(a), self.shape(b));
        let (da, db) = (self.values[a.0].data(), self.values[b.0].data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let t = Tensor::new(&[m, n], out);
        let req = self.req(a) || self.req(b);
        self.push(Op::Matmul(a, b), t, Aux::None, req)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.values[a.0].dims2();
        let d = self.values[a.0].data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(&[n, m], out);
        let req = self.req(a);
        self.push(Op::Transpose(a), t, Aux::None, req)
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let data = self.values[a.0].data().iter().map(|&x| mul * x + add).collect();
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a);
        self.push(Op::Affine(a, mul, add), t, Aux::None, req)
    }

    fn map_elem(&mut self, op: Op, a: NodeId, f: fn(f64) -> f64) -> NodeId {
        let data = self.values[a.0].data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a);
        self.push(op, t, Aux::None, req)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Tanh(a), a, math::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Sigmoid(a), a, math::sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Relu(a), a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Softplus(a), a, math::softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Exp(a), a, math::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Ln(a), a, math::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Sqrt(a), a, math::sqrt)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Abs(a), a, math::abs)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Cos(a), a, math::cos)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.map_elem(Op::Sin(a), a, math::sin)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let data = self.values[a.0].data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let t = Tensor::new(self.shape(a), data);
        let req = self.req(a);
        self.push(Op::Clamp(a, lo, hi), t, Aux::None, req)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let src = self.values[a.0].data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = math::exp(row[j] - max);
                out[i * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                out[i * d + j] /= sum;
            }
        }
        let t = Tensor::new(self.shape(a), out);
        let req = self.req(a);
        self.push(Op::SoftmaxRows(a), t, Aux::None, req)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let src = self.values[a.0].data();
        let out: Vec<f64> = (0..n).map(|i| src[i * d..(i + 1) * d].iter().sum()).collect();
        let t = Tensor::new(&[n, 1], out);
        let req = self.req(a);
        self.push(Op::RowSum(a), t, Aux::None, req)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values[a.0].data().iter().sum();
        let t = Tensor::scalar(s);
        let req = self.req(a);
        self.push(Op::SumAll(a), t, Aux::None, req)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].numel();
        let s = self.sum_all(a);
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    /// Max over consecutive blocks of `group` rows; ties keep the first row.
    pub fn max_pool_rows(&mut self, a: NodeId, group: usize) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        assert!(group >= 1 && n % group == 0, "max_pool_rows: {n} rows not divisible by group {group}");
        let blocks = n / group;
        let src = self.values[a.0].data();
        let mut out = vec![f64::NEG_INFINITY; blocks * d];
        let mut arg = vec![0usize; blocks * d];
        for b in 0..blocks {
            for r in 0..group {
                let row = b * group + r;
                for j in 0..d {
                    let v = src[row * d + j];
                    if v > out[b * d + j] {
                        out[b * d + j] = v;
                        arg[b * d + j] = row;
                    }
                }
            }
        }
        let t = Tensor::new(&[blocks, d], out);
        let req = self.req(a);
        self.push(Op::MaxPoolRows(a, group), t, Aux::ArgMax(arg), req)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let src = self.values[a.0].data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < n, "gather_rows: index {i} out of {n} rows");
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[indices.len(), d], out);
        let req = self.req(a);
        self.push(Op::GatherRows(a, indices.to_vec()), t, Aux::None, req)
    }

    pub fn gather_cols(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let src = self.values[a.0].data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for i in 0..n {
            for &j in indices {
                assert!(j < d, "gather_cols: index {j} out of {d} cols");
                out.push(src[i * d + j]);
            }
        }
        let t = Tensor::new(&[n, indices.len()], out);
        let req = self.req(a);
        self.push(Op::GatherCols(a, indices.to_vec()), t, Aux::None, req)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (na, da) = self.values[a.0].dims2();
        let (nb, db) = self.values[b.0].dims2();
        assert_eq!(da, db, "concat_rows: {:?} vs {:?}", self.shape(a), self.shape(b));
        let mut out = self.values[a.0].data().to_vec();
        out.extend_from_slice(self.values[b.0].data());
        let t = Tensor::new(&[na + nb, da], out);
        let req = self.req(a) || self.req(b);
        self.push(Op::ConcatRows(a, b), t, Aux::None, req)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (na, da) = self.values[a.0].dims2();
        let (nb, db) = self.values[b.0].dims2();
        assert_eq!(na, nb, "concat_cols: {:?} vs {:?}", self.shape(a), self.shape(b));
        let (sa, sb) = (self.values[a.0].data(), self.values[b.0].data());
        let mut out = Vec::with_capacity(na * (da + db));
        for i in 0..na {
            out.extend_from_slice(&sa[i * da..(i + 1) * da]);
            out.extend_from_slice(&sb[i * db..(i + 1) * db]);
        }
        let t = Tensor::new(&[na, da + db], out);
        let req = self.req(a) || self.req(b);
        self.push(Op::ConcatCols(a, b), t, Aux::None, req)
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        assert!(lo < hi && hi <= d, "slice_cols: {lo}..{hi} out of {d} cols");
        let src = self.values[a.0].data();
        let mut out = Vec::with_capacity(n * (hi - lo));
        for i in 0..n {
            out.extend_from_slice(&src[i * d + lo..i * d + hi]);
        }
        let t = Tensor::new(&[n, hi - lo], out);
        let req = self.req(a);
        self.push(Op::SliceCols(a, lo, hi), t, Aux::None, req)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.values[a.0].numel(), "reshape {:?} -> {:?}", self.shape(a), shape);
        let t = Tensor::new(shape, self.values[a.0].data().to_vec());
        let req = self.req(a);
        self.push(Op::Reshape(a), t, Aux::None, req)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let (n, d) = self.values[a.0].dims2();
        let src = self.values[a.0].data();
        let mut out = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[i] = is;
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * is;
            }
        }
        let t = Tensor::new(self.shape(a), out);
        let req = self.req(a);
        self.push(Op::LayerNormRows(a, eps), t, Aux::InvStd(inv_std), req)
    }

    /// Input `[batch*time, f_in]`, weight `[kernel*f_in, f_out]`; output
    /// `[batch*time, f_out]` with zero padding so time length is preserved.
    pub fn conv1d_same(&mut self, input: NodeId, weight: NodeId, batch: usize, time: usize, kernel: usize) -> NodeId {
        let (n, f_in) = self.values[input.0].dims2();
        let (wk, f_out) = self.values[weight.0].dims2();
        assert_eq!(n, batch * time, "conv1d_same: {n} rows vs batch {batch} x time {time}");
        assert_eq!(wk, kernel * f_in, "conv1d_same: weight {:?} vs kernel {kernel} x f_in {f_in}", self.shape(weight));
        assert!(kernel % 2 == 1, "conv1d_same: kernel {kernel} must be odd");
        let c = kernel / 2;
        let (x, w) = (self.values[input.0].data(), self.values[weight.0].data());
        let mut out = vec![0.0; n * f_out];
        for b in 0..batch {
            for tau in 0..time {
                let orow = &mut out[(b * time + tau) * f_out..(b * time + tau + 1) * f_out];
                for j in 0..kernel {
                    let s = tau as isize + j as isize - c as isize;
                    if s < 0 || s >= time as isize {
                        continue;
                    }
                    let xrow = &x[(b * time + s as usize) * f_in..(b * time + s as usize + 1) * f_in];
                    for i in 0..f_in {
                        let xv = xrow[i];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[(j * f_in + i) * f_out..(j * f_in + i + 1) * f_out];
                        for o in 0..f_out {
                            orow[o] += xv * wrow[o];
                        }
                    }
                }
            }
        }
        let t = Tensor::new(&[n, f_out], out);
        let req = self.req(input) || self.req(weight);
        self.push(Op::Conv1dSame { input, weight, batch, time, kernel }, t, Aux::None, req)
    }

    /// Differentiable rollout: per mode, integrates clamped accel/yaw-rate
    /// commands from `init` into interleaved (x, y) positions. Forward
    /// matches [`crate::kinematics::rollout`] bitwise; clamp saturation
    /// zeroes the corresponding gradient.
    pub fn rollout(&mut self, accel: NodeId, yaw: NodeId, init: KinematicState, lim: KinematicLimits) -> NodeId {
        self.same_shape(accel, yaw, "rollout");
        let (k, t_len) = self.values[accel.0].dims2();
        let (a, w) = (self.values[accel.0].data(), self.values[yaw.0].data());
        let mut out = vec![0.0; k * 2 * t_len];
        let mut trace = vec![0.0; k * t_len * 4];
        for m in 0..k {
            let ctrl = ControlSequence {
                accel: a[m * t_len..(m + 1) * t_len].to_vec(),
                yaw_rate: w[m * t_len..(m + 1) * t_len].to_vec(),
            };
            let states = crate::kinematics::rollout_states(init, &ctrl, &lim);
            for (t, s) in states.iter().enumerate() {
                out[m * 2 * t_len + 2 * t] = s.x;
                out[m * 2 * t_len + 2 * t + 1] = s.y;
                let idx = (m * t_len + t) * 4;
                trace[idx] = s.speed;
                trace[idx + 1] = s.heading;
                let av = ctrl.accel[t];
                let wv = ctrl.yaw_rate[t];
                trace[idx + 2] = if av >= lim.a_min && av <= lim.a_max { 1.0 } else { 0.0 };
                trace[idx + 3] = if wv >= lim.yaw_min && wv <= lim.yaw_max { 1.0 } else { 0.0 };
            }
        }
        let t = Tensor::new(&[k, 2 * t_len], out);
        let req = self.req(accel) || self.req(yaw);
        self.push(Op::Rollout { accel, yaw, init, lim }, t, Aux::RolloutTrace(trace), req)
    }

    /// Reverse sweep from a scalar node. Gradients are retained for every
    /// node that requires them, so intermediates can be inspected.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.values[loss.0].numel(), 1, "backward needs a scalar loss, got {:?}", self.shape(loss));
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.requires[i] {
                continue;
            }
            let (head, tail) = grads.split_at_mut(i);
            let g: &[f64] = tail[0].as_ref().unwrap();
            let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
                if !self.requires[id.0] {
                    return;
                }
                let slot = &mut head[id.0];
                if slot.is_none() {
                    *slot = Some(vec![0.0; self.values[id.0].numel()]);
                }
                f(slot.as_mut().unwrap());
            };
            self.backward_op(i, g, &mut acc);
        }
        Gradients { grads }
    }

    #[allow(clippy::too_many_lines)]
    fn backward_op(&self, i: usize, g: &[f64], acc: &mut dyn FnMut(NodeId, &mut dyn FnMut(&mut [f64]))) {
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
                acc(*b, &mut |gb| {
                    for (x, &gv) in gb.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
                acc(*b, &mut |gb| {
                    for (x, &gv) in gb.iter_mut().zip(g) {
                        *x -= gv;
                    }
                });
            }
            Op::MulElem(a, b) => {
                let (da, db) = (self.values[a.0].data(), self.values[b.0].data());
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * db[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] += g[j] * da[j];
                    }
                });
            }
            Op::DivElem(a, b) => {
                let (da, db) = (self.values[a.0].data(), self.values[b.0].data());
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] / db[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] -= g[j] * da[j] / (db[j] * db[j]);
                    }
                });
            }
            Op::AddRow(a, row) => {
                let (n, d) = self.values[a.0].dims2();
                acc(*a, &mut |ga| {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
                acc(*row, &mut |gr| {
                    for i2 in 0..n {
                        for j in 0..d {
                            gr[j] += g[i2 * d + j];
                        }
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (n, d) = self.values[a.0].dims2();
                let (da, dr) = (self.values[a.0].data(), self.values[row.0].data());
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        for j in 0..d {
                            ga[i2 * d + j] += g[i2 * d + j] * dr[j];
                        }
                    }
                });
                acc(*row, &mut |gr| {
                    for i2 in 0..n {
                        for j in 0..d {
                            gr[j] += g[i2 * d + j] * da[i2 * d + j];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.values[a.0].dims2();
                let (_, n) = self.values[b.0].dims2();
                let (da, db) = (self.values[a.0].data(), self.values[b.0].data());
                // dA = g . B^T
                acc(*a, &mut |ga| {
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i2 * n + j] * db[p * n + j];
                            }
                            ga[i2 * k + p] += s;
                        }
                    }
                });
                // dB = A^T . g
                acc(*b, &mut |gb| {
                    for p in 0..k {
                        for i2 in 0..m {
                            let av = da[i2 * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i2 * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = self.values[a.0].dims2();
                acc(*a, &mut |ga| {
                    for i2 in 0..m {
                        for j in 0..n {
                            ga[i2 * n + j] += g[j * m + i2];
                        }
                    }
                });
            }
            Op::Affine(a, mul, _) => {
                let mul = *mul;
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += mul * g[j];
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.values[i].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.values[i].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        if x[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * math::sigmoid(x[j]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = self.values[i].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * y[j];
                    }
                });
            }
            Op::Ln(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] / x[j];
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = self.values[i].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * 0.5 / y[j];
                    }
                });
            }
            Op::Abs(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * if x[j] > 0.0 { 1.0 } else if x[j] < 0.0 { -1.0 } else { 0.0 };
                    }
                });
            }
            Op::Cos(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] -= g[j] * math::sin(x[j]);
                    }
                });
            }
            Op::Sin(a) => {
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * math::cos(x[j]);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let x = self.values[a.0].data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        if x[j] >= lo && x[j] <= hi {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (n, d) = self.values[a.0].dims2();
                let y = self.values[i].data();
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        let yr = &y[i2 * d..(i2 + 1) * d];
                        let gr = &g[i2 * d..(i2 + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(&a2, &b2)| a2 * b2).sum();
                        for j in 0..d {
                            ga[i2 * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::RowSum(a) => {
                let (n, d) = self.values[a.0].dims2();
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        for j in 0..d {
                            ga[i2 * d + j] += g[i2];
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                acc(*a, &mut |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::MaxPoolRows(a, _) => {
                let (_, d) = self.values[i].dims2();
                let Aux::ArgMax(arg) = &self.aux[i] else { unreachable!() };
                acc(*a, &mut |ga| {
                    for (out_idx, &src_row) in arg.iter().enumerate() {
                        let j = out_idx % d;
                        ga[src_row * d + j] += g[out_idx];
                    }
                });
            }
            Op::GatherRows(a, indices) => {
                let (_, d) = self.values[a.0].dims2();
                acc(*a, &mut |ga| {
                    for (k2, &src) in indices.iter().enumerate() {
                        for j in 0..d {
                            ga[src * d + j] += g[k2 * d + j];
                        }
                    }
                });
            }
            Op::GatherCols(a, indices) => {
                let (n, d) = self.values[a.0].dims2();
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        for (k2, &src) in indices.iter().enumerate() {
                            ga[i2 * d + src] += g[i2 * indices.len() + k2];
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let na = self.values[a.0].numel();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] += g[na + j];
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (n, da) = self.values[a.0].dims2();
                let (_, db) = self.values[b.0].dims2();
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        for j in 0..da {
                            ga[i2 * da + j] += g[i2 * (da + db) + j];
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i2 in 0..n {
                        for j in 0..db {
                            gb[i2 * db + j] += g[i2 * (da + db) + da + j];
                        }
                    }
                });
            }
            Op::SliceCols(a, lo, hi) => {
                let (n, d) = self.values[a.0].dims2();
                let w = hi - lo;
                let lo = *lo;
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        for j in 0..w {
                            ga[i2 * d + lo + j] += g[i2 * w + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j];
                    }
                });
            }
            Op::LayerNormRows(a, _) => {
                let (n, d) = self.values[a.0].dims2();
                let y = self.values[i].data();
                let Aux::InvStd(inv_std) = &self.aux[i] else { unreachable!() };
                acc(*a, &mut |ga| {
                    for i2 in 0..n {
                        let yr = &y[i2 * d..(i2 + 1) * d];
                        let gr = &g[i2 * d..(i2 + 1) * d];
                        let mean_g: f64 = gr.iter().sum::<f64>() / d as f64;
                        let mean_gy: f64 = gr.iter().zip(yr).map(|(&a2, &b2)| a2 * b2).sum::<f64>() / d as f64;
                        for j in 0..d {
                            ga[i2 * d + j] += inv_std[i2] * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                });
            }
            Op::Conv1dSame { input, weight, batch, time, kernel } => {
                let (_, f_in) = self.values[input.0].dims2();
                let (_, f_out) = self.values[i].dims2();
                let (batch, time, kernel) = (*batch, *time, *kernel);
                let c = kernel / 2;
                let x = self.values[input.0].data();
                let w = self.values[weight.0].data();
                acc(*weight, &mut |gw| {
                    for b in 0..batch {
                        for tau in 0..time {
                            let grow = &g[(b * time + tau) * f_out..(b * time + tau + 1) * f_out];
                            for j in 0..kernel {
                                let s = tau as isize + j as isize - c as isize;
                                if s < 0 || s >= time as isize {
                                    continue;
                                }
                                let xrow = &x[(b * time + s as usize) * f_in..(b * time + s as usize + 1) * f_in];
                                for i3 in 0..f_in {
                                    let xv = xrow[i3];
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let wrow = &mut gw[(j * f_in + i3) * f_out..(j * f_in + i3 + 1) * f_out];
                                    for o in 0..f_out {
                                        wrow[o] += xv * grow[o];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*input, &mut |gx| {
                    for b in 0..batch {
                        for tau in 0..time {
                            let grow = &g[(b * time + tau) * f_out..(b * time + tau + 1) * f_out];
                            for j in 0..kernel {
                                let s = tau as isize + j as isize - c as isize;
                                if s < 0 || s >= time as isize {
                                    continue;
                                }
                                let xrow = &mut gx[(b * time + s as usize) * f_in..(b * time + s as usize + 1) * f_in];
                                for i3 in 0..f_in {
                                    let wrow = &w[(j * f_in + i3) * f_out..(j * f_in + i3 + 1) * f_out];
                                    let mut acc2 = 0.0;
                                    for o in 0..f_out {
                                        acc2 += wrow[o] * grow[o];
                                    }
                                    xrow[i3] += acc2;
                                }
                            }
                        }
                    }
                });
            }
            Op::Rollout { accel, yaw, init: _, lim } => {
                let (k, t_len) = self.values[accel.0].dims2();
                let dt = lim.dt;
                let Aux::RolloutTrace(trace) = &self.aux[i] else { unreachable!() };
                // Reverse accumulation through the two cumulative sums.
                let mut da = vec![0.0; k * t_len];
                let mut dw = vec![0.0; k * t_len];
                for m in 0..k {
                    let mut gx_acc = 0.0;
                    let mut gy_acc = 0.0;
                    let mut dv_acc = 0.0;
                    let mut dth_acc = 0.0;
                    for t in (0..t_len).rev() {
                        gx_acc += g[m * 2 * t_len + 2 * t];
                        gy_acc += g[m * 2 * t_len + 2 * t + 1];
                        let idx = (m * t_len + t) * 4;
                        let (v, th) = (trace[idx], trace[idx + 1]);
                        let dv = (gx_acc * math::cos(th) + gy_acc * math::sin(th)) * dt;
                        let dth = v * (-math::sin(th) * gx_acc + math::cos(th) * gy_acc) * dt;
                        dv_acc += dv;
                        dth_acc += dth;
                        da[m * t_len + t] = dv_acc * dt * trace[idx + 2];
                        dw[m * t_len + t] = dth_acc * dt * trace[idx + 3];
                    }
                }
                acc(*accel, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += da[j];
                    }
                });
                acc(*yaw, &mut |gw| {
                    for j in 0..gw.len() {
                        gw[j] += dw[j];
                    }
                });
            }
        }
    }
}
