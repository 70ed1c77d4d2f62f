//! Central finite-difference checks for every differentiable op and layer.

use lanecast_core::kinematics::{KinematicLimits, KinematicState};
use lanecast_core::nn::gradcheck::finite_diff_check;
use lanecast_core::nn::{Binder, Conv1d, GruStack, LayerNorm, Mcg, Mlp, MultiHeadAttention, Params, Tensor};
use lanecast_core::rng::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.range(lo, hi)).collect())
}

/// Random tensor bounded away from zero (for kinked ops).
fn rand_tensor_offset(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x = rng.range(-1.0, 1.0);
            x + 0.2 * x.signum()
        })
        .collect();
    Tensor::new(shape, data)
}

fn shapes(rng: &mut Rng) -> Vec<(usize, usize)> {
    (0..3).map(|_| (1 + rng.index(5), 1 + rng.index(6))).collect()
}

#[test]
fn elementwise_binary_ops() {
    let mut rng = Rng::new(101);
    for (n, d) in shapes(&mut rng) {
        let a = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[n, d], 0.5, 2.0); // positive: safe divisor
        for (name, f) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
            ("div", 3),
        ] {
            let err = finite_diff_check(&[a.clone(), b.clone()], EPS, usize::MAX, |g, ids| {
                let y = match f {
                    0 => g.add(ids[0], ids[1]),
                    1 => g.sub(ids[0], ids[1]),
                    2 => g.mul_elem(ids[0], ids[1]),
                    _ => g.div_elem(ids[0], ids[1]),
                };
                let y2 = g.tanh(y); // mix so the sum has non-trivial curvature
                g.sum_all(y2)
            });
            assert!(err < TOL, "{name} [{n},{d}]: rel err {err}");
        }
    }
}

#[test]
fn row_broadcast_ops() {
    let mut rng = Rng::new(102);
    for (n, d) in shapes(&mut rng) {
        let a = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let r = rand_tensor(&mut rng, &[d], -1.0, 1.0);
        for add in [true, false] {
            let err = finite_diff_check(&[a.clone(), r.clone()], EPS, usize::MAX, |g, ids| {
                let y = if add { g.add_row(ids[0], ids[1]) } else { g.mul_row(ids[0], ids[1]) };
                let y2 = g.sigmoid(y);
                g.sum_all(y2)
            });
            assert!(err < TOL, "row op add={add} [{n},{d}]: rel err {err}");
        }
    }
}

#[test]
fn matmul_and_transpose() {
    let mut rng = Rng::new(103);
    for _ in 0..3 {
        let (m, k, n) = (1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(4));
        let a = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let err = finite_diff_check(&[a, b], EPS, usize::MAX, |g, ids| {
            let t = g.transpose(ids[1]);
            let tt = g.transpose(t);
            let y = g.matmul(ids[0], tt);
            let y2 = g.tanh(y);
            g.sum_all(y2)
        });
        assert!(err < TOL, "matmul [{m},{k}]x[{k},{n}]: rel err {err}");
    }
}

#[test]
fn unary_smooth_ops() {
    let mut rng = Rng::new(104);
    for (n, d) in shapes(&mut rng) {
        let x = rand_tensor(&mut rng, &[n, d], -1.5, 1.5);
        let pos = rand_tensor(&mut rng, &[n, d], 0.3, 2.0);
        let cases: Vec<(&str, Box<dyn Fn(&mut lanecast_core::nn::Graph, lanecast_core::nn::NodeId) -> lanecast_core::nn::NodeId>, &Tensor)> = vec![
            ("tanh", Box::new(|g, x| g.tanh(x)), &x),
            ("sigmoid", Box::new(|g, x| g.sigmoid(x)), &x),
            ("softplus", Box::new(|g, x| g.softplus(x)), &x),
            ("exp", Box::new(|g, x| g.exp(x)), &x),
            ("ln", Box::new(|g, x| g.ln(x)), &pos),
            ("sqrt", Box::new(|g, x| g.sqrt(x)), &pos),
            ("cos", Box::new(|g, x| g.cos(x)), &x),
            ("sin", Box::new(|g, x| g.sin(x)), &x),
            ("affine", Box::new(|g, x| g.affine(x, -2.5, 0.7)), &x),
        ];
        for (name, build, input) in cases {
            let err = finite_diff_check(&[(*input).clone()], EPS, usize::MAX, |g, ids| {
                let y = build(g, ids[0]);
                g.sum_all(y)
            });
            assert!(err < TOL, "{name} [{n},{d}]: rel err {err}");
        }
    }
}

#[test]
fn unary_kinked_ops_away_from_kinks() {
    let mut rng = Rng::new(105);
    for (n, d) in shapes(&mut rng) {
        let x = rand_tensor_offset(&mut rng, &[n, d]);
        for name in ["relu", "abs", "clamp"] {
            let err = finite_diff_check(&[x.clone()], EPS, usize::MAX, |g, ids| {
                let y = match name {
                    "relu" => g.relu(ids[0]),
                    "abs" => g.abs(ids[0]),
                    // Kinks at +-0.9; inputs live in +-(0.2..1.2) minus a band.
                    _ => g.clamp(ids[0], -0.9, 0.9),
                };
                g.sum_all(y)
            });
            assert!(err < TOL, "{name} [{n},{d}]: rel err {err}");
        }
    }
}

#[test]
fn softmax_layernorm_rowsum() {
    let mut rng = Rng::new(106);
    for (n, d) in shapes(&mut rng) {
        let d = d.max(2);
        let x = rand_tensor(&mut rng, &[n, d], -2.0, 2.0);
        for name in ["softmax", "layernorm", "rowsum"] {
            let err = finite_diff_check(&[x.clone()], EPS, usize::MAX, |g, ids| {
                let y = match name {
                    "softmax" => {
                        let s = g.softmax_rows(ids[0]);
                        g.ln(s)
                    }
                    "layernorm" => g.layer_norm_rows(ids[0], 1e-5),
                    _ => g.row_sum(ids[0]),
                };
                let y2 = g.mul_elem(y, y);
                g.sum_all(y2)
            });
            assert!(err < TOL, "{name} [{n},{d}]: rel err {err}");
        }
    }
}

#[test]
fn structural_ops() {
    let mut rng = Rng::new(107);
    for _ in 0..3 {
        let (n, d) = (2 + rng.index(4), 2 + rng.index(5));
        let a = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        // Duplicated gather indices exercise scatter-add accumulation.
        let row_idx: Vec<usize> = (0..n + 2).map(|_| rng.index(n)).collect();
        let col_idx: Vec<usize> = (0..d + 1).map(|_| rng.index(d)).collect();
        let err = finite_diff_check(&[a.clone(), b.clone()], EPS, usize::MAX, |g, ids| {
            let rows = g.gather_rows(ids[0], &row_idx);
            let cols = g.gather_cols(ids[1], &col_idx);
            let cat = g.concat_rows(rows, ids[1]);
            let cat2 = g.concat_cols(ids[0], ids[1]);
            let sl = g.slice_cols(cat2, 1, d + 1);
            let r = g.reshape(sl, &[n * d]);
            let s1 = g.sum_all(cat);
            let s2 = g.sum_all(cols);
            let s3 = g.sum_all(r);
            let t = g.add(s1, s2);
            let t = g.add(t, s3);
            let sq = g.mul_elem(t, t);
            g.sum_all(sq)
        });
        assert!(err < TOL, "structural [{n},{d}]: rel err {err}");
    }
}

#[test]
fn maxpool_rows_gradient() {
    let mut rng = Rng::new(108);
    for group in [1usize, 2, 3] {
        let blocks = 1 + rng.index(3);
        let d = 2 + rng.index(4);
        let x = rand_tensor(&mut rng, &[blocks * group, d], -1.0, 1.0);
        let err = finite_diff_check(&[x], EPS, usize::MAX, |g, ids| {
            let y = g.max_pool_rows(ids[0], group);
            let y2 = g.tanh(y);
            g.sum_all(y2)
        });
        assert!(err < TOL, "maxpool group {group}: rel err {err}");
    }
}

#[test]
fn conv1d_same_gradient() {
    let mut rng = Rng::new(109);
    for kernel in [1usize, 3, 5] {
        let (batch, time, f_in, f_out) = (2, 4, 3, 2);
        let x = rand_tensor(&mut rng, &[batch * time, f_in], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[kernel * f_in, f_out], -1.0, 1.0);
        let err = finite_diff_check(&[x, w], EPS, usize::MAX, |g, ids| {
            let y = g.conv1d_same(ids[0], ids[1], batch, time, kernel);
            let y2 = g.tanh(y);
            g.sum_all(y2)
        });
        assert!(err < TOL, "conv1d kernel {kernel}: rel err {err}");
    }
}

#[test]
fn rollout_gradient_inside_limits() {
    let mut rng = Rng::new(110);
    let lim = KinematicLimits::default();
    for _ in 0..3 {
        let (k, t) = (1 + rng.index(3), 2 + rng.index(6));
        let accel = rand_tensor(&mut rng, &[k, t], -3.0, 3.0);
        let yaw = rand_tensor(&mut rng, &[k, t], -0.8, 0.8);
        let init = KinematicState::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(0.5, 4.0));
        let err = finite_diff_check(&[accel, yaw], EPS, usize::MAX, |g, ids| {
            let y = g.rollout(ids[0], ids[1], init, lim);
            let y2 = g.tanh(y);
            g.sum_all(y2)
        });
        assert!(err < TOL, "rollout [{k},{t}]: rel err {err}");
    }
}

#[test]
fn rollout_saturated_controls_get_zero_gradient() {
    let lim = KinematicLimits::default();
    let init = KinematicState::new(0.0, 0.0, 0.0, 1.0);
    let accel = Tensor::new(&[1, 3], vec![50.0, 0.0, -50.0]).with_grad();
    let yaw = Tensor::new(&[1, 3], vec![0.0, 9.0, 0.0]).with_grad();
    let mut g = lanecast_core::nn::Graph::new();
    let a = g.leaf(accel);
    let w = g.leaf(yaw);
    let y = g.rollout(a, w, init, lim);
    let s = g.sum_all(y);
    let grads = g.backward(s);
    let ga = grads.get(a).unwrap();
    let gw = grads.get(w).unwrap();
    assert_eq!(ga[0], 0.0);
    assert_eq!(ga[2], 0.0);
    assert_ne!(ga[1], 0.0);
    assert_eq!(gw[1], 0.0);
    assert_ne!(gw[0], 0.0);
}

#[test]
fn mlp_linear_layers() {
    let mut rng = Rng::new(111);
    let mut params = Params::new();
    let mlp = Mlp::init(&mut params, &mut rng, "m", &[4, 6, 3]);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    check_layer_params(&params, x, TOL, |g, binder, xid| mlp.forward(g, binder, xid));
}

/// Runs a layer whose parameters come from a `Params` store through the
/// checker by rebuilding the store from perturbed leaves.
fn check_layer_params<F>(params: &Params, x: Tensor, tol: f64, forward: F) -> f64
where
    F: Fn(&mut lanecast_core::nn::Graph, &mut Binder, lanecast_core::nn::NodeId) -> lanecast_core::nn::NodeId,
{
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![x];
    for n in &names {
        inputs.push(params.get(n).clone());
    }
    let err = finite_diff_check(&inputs, EPS, 40, |g, ids| {
        let mut p2 = Params::new();
        for (i, n) in names.iter().enumerate() {
            p2.insert(n, g.value(ids[i + 1]).clone());
        }
        let mut binder = Binder::with_preset(&p2, &names, &ids[1..]);
        let y = forward(g, &mut binder, ids[0]);
        let y2 = g.tanh(y);
        g.sum_all(y2)
    });
    assert!(err < tol, "layer: rel err {err}");
    err
}

#[test]
fn gru_finite_difference() {
    let mut rng = Rng::new(112);
    let mut params = Params::new();
    let gru = GruStack::init(&mut params, &mut rng, "g", 4, 5, 2);
    // Zero biases make some gradients exactly zero at init; randomize them.
    for (_, t) in params.iter_mut() {
        if t.data().iter().all(|v| *v == 0.0) {
            let n = t.numel();
            *t = Tensor::new(t.shape(), (0..n).map(|_| rng.range(-0.3, 0.3)).collect());
        }
    }
    let (n, time) = (2, 5);
    let x = rand_tensor(&mut rng, &[n * time, 4], -1.0, 1.0);
    check_layer_params(&params, x, TOL, |g, binder, xid| {
        let (_, last) = gru.forward(g, binder, xid, n, time);
        last
    });
}

#[test]
fn attention_finite_difference() {
    let mut rng = Rng::new(113);
    let mut params = Params::new();
    let mha = MultiHeadAttention::init(&mut params, &mut rng, "a", 8, 2);
    let x = rand_tensor(&mut rng, &[4, 8], -1.0, 1.0);
    check_layer_params(&params, x, TOL, |g, binder, xid| mha.forward(g, binder, xid, xid, xid, None));
}

#[test]
fn mcg_finite_difference() {
    let mut rng = Rng::new(114);
    let mut params = Params::new();
    let mcg = Mcg::init(&mut params, &mut rng, "m", 8);
    let x = rand_tensor(&mut rng, &[4, 8], -1.0, 1.0);
    let y = rand_tensor(&mut rng, &[3, 8], -1.0, 1.0);
    // Treat y as constant context; x and params get checked.
    check_layer_params(&params, x, TOL, |g, binder, xid| {
        let yid = g.constant(y.clone());
        let (x_out, y_out) = mcg.forward(g, binder, xid, yid);
        let s = g.sum_all(y_out);
        let s2 = g.sum_all(x_out);
        let both = g.add(s, s2);
        g.reshape(both, &[1, 1])
    });
}

#[test]
fn conv_layer_and_layernorm_finite_difference() {
    let mut rng = Rng::new(115);
    let mut params = Params::new();
    let conv = Conv1d::init(&mut params, &mut rng, "c", 3, 4, 5);
    let ln = LayerNorm::init(&mut params, &mut rng, "ln", 5);
    let (batch, time) = (2, 4);
    let x = rand_tensor(&mut rng, &[batch * time, 4], -1.0, 1.0);
    check_layer_params(&params, x, TOL, |g, binder, xid| {
        let y = conv.forward(g, binder, xid, batch, time);
        ln.forward(g, binder, y)
    });
}
