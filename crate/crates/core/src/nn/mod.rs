//! Minimal dense-tensor neural substrate with reverse-mode gradients.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod pe;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use layers::{Binder, Conv1d, GruStack, LayerNorm, Linear, Mcg, Mlp, MultiHeadAttention, Params};
pub use pe::sinusoidal_pe;
pub use tensor::Tensor;

use crate::kinematics::KinematicLimits;

/// Hyper-parameters for the whole network plus loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Encoder token width.
    pub d1: usize,
    /// Decoder width.
    pub d: usize,
    /// Number of motion modes / intention points.
    pub k: usize,
    /// Neighbors for local attention.
    pub knn_k: usize,
    /// Polylines kept by dynamic map collection.
    pub dynamic_map_l: usize,
    pub num_mcg_layers: usize,
    pub num_local_attn_layers: usize,
    pub num_decoder_layers: usize,
    pub heads: usize,
    /// History steps fed to the network.
    pub history_len: usize,
    /// Future steps predicted.
    pub future_len: usize,
    /// Weights for (dense, gmm, cls, control, guidance) losses.
    pub lambda: [f64; 5],
    pub limits: KinematicLimits,
    pub map_points_per_polyline: usize,
    pub max_polylines: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d1: 64,
            d: 128,
            k: 64,
            knn_k: 16,
            dynamic_map_l: 32,
            num_mcg_layers: 2,
            num_local_attn_layers: 4,
            num_decoder_layers: 6,
            heads: 4,
            history_len: 10,
            future_len: 16,
            lambda: [1.0, 1.0, 1.0, 1.0, 0.1],
            limits: KinematicLimits::default(),
            map_points_per_polyline: 20,
            max_polylines: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for fast experiments and tests.
    pub fn tiny() -> Self {
        Self {
            d1: 16,
            d: 32,
            k: 16,
            knn_k: 8,
            dynamic_map_l: 8,
            num_mcg_layers: 2,
            num_local_attn_layers: 2,
            num_decoder_layers: 2,
            heads: 2,
            history_len: 10,
            future_len: 16,
            map_points_per_polyline: 10,
            max_polylines: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), alloc::string::String> {
        use alloc::format;
        use alloc::string::String;
        let check = |cond: bool, msg: &str| if cond { Ok(()) } else { Err(String::from(msg)) };
        check(self.d1 % self.heads == 0, "d1 must be divisible by heads")?;
        check(self.d % self.heads == 0, "d must be divisible by heads")?;
        check(self.d1 % 4 == 0, "d1 must be divisible by 4 for positional encoding")?;
        check(self.d % 4 == 0, "d must be divisible by 4 for positional encoding")?;
        for (name, v) in [
            ("d1", self.d1),
            ("d", self.d),
            ("k", self.k),
            ("knn_k", self.knn_k),
            ("dynamic_map_l", self.dynamic_map_l),
            ("num_local_attn_layers", self.num_local_attn_layers),
            ("num_decoder_layers", self.num_decoder_layers),
            ("heads", self.heads),
            ("history_len", self.history_len),
            ("future_len", self.future_len),
            ("map_points_per_polyline", self.map_points_per_polyline),
            ("max_polylines", self.max_polylines),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        check(self.dynamic_map_l <= self.max_polylines, "dynamic_map_l exceeds max_polylines")?;
        check(
            self.lambda.iter().all(|l| l.is_finite() && *l >= 0.0),
            "loss weights must be finite and non-negative",
        )?;
        check(self.limits.a_min < self.limits.a_max, "a_min must be below a_max")?;
        check(self.limits.yaw_min < self.limits.yaw_max, "yaw_min must be below yaw_max")?;
        check(self.limits.dt > 0.0, "dt must be positive")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.range(-1.0, 1.0)).collect())
    }

    #[test]
    fn maxpool_is_elementwise_max_over_blocks() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[4, 2], vec![1.0, -3.0, 0.5, 7.0, -2.0, 4.0, 9.0, -1.0]));
        let y = g.max_pool_rows(x, 2);
        assert_eq!(g.value(y).data(), &[1.0, 7.0, 9.0, 4.0]);
    }

    #[test]
    fn linear_identity_weights_pass_through() {
        let mut params = Params::new();
        let mut rng = Rng::new(0);
        let lin = Linear::init(&mut params, &mut rng, "id", 3, 3);
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        *params.get_mut("id.w") = w;
        *params.get_mut("id.b") = Tensor::zeros(&[3]);
        let mut g = Graph::new();
        let mut binder = Binder::new(&params);
        let x = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]));
        let y = lin.forward(&mut g, &mut binder, x);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn attention_single_token_ignores_query() {
        let mut params = Params::new();
        let mut rng = Rng::new(5);
        let mha = MultiHeadAttention::init(&mut params, &mut rng, "a", 8, 2);
        let kv = rand_tensor(&mut rng, &[1, 8]);
        let run = |qdata: Tensor| {
            let mut g = Graph::new();
            let mut binder = Binder::new(&params);
            let q = g.constant(qdata);
            let k = g.constant(kv.clone());
            let v = g.constant(kv.clone());
            let out = mha.forward(&mut g, &mut binder, q, k, v, None);
            g.value(out).data().to_vec()
        };
        let o1 = run(rand_tensor(&mut rng, &[1, 8]));
        let o2 = run(rand_tensor(&mut rng, &[1, 8]));
        for (a, b) in o1.iter().zip(&o2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut params = Params::new();
        let mut rng = Rng::new(6);
        let mha = MultiHeadAttention::init(&mut params, &mut rng, "a", 8, 2);
        let q = rand_tensor(&mut rng, &[1, 8]);
        let key = rand_tensor(&mut rng, &[1, 8]);
        let v1 = rand_tensor(&mut rng, &[1, 8]);
        let v2 = rand_tensor(&mut rng, &[1, 8]);
        let avg = Tensor::new(&[1, 8], v1.data().iter().zip(v2.data()).map(|(a, b)| 0.5 * (a + b)).collect());

        let run = |vals: [&Tensor; 2]| {
            let mut g = Graph::new();
            let mut binder = Binder::new(&params);
            let qn = g.constant(q.clone());
            let kk = g.constant(key.clone());
            let kk2 = g.constant(key.clone());
            let keys = g.concat_rows(kk, kk2);
            let va = g.constant(vals[0].clone());
            let vb = g.constant(vals[1].clone());
            let vs = g.concat_rows(va, vb);
            let out = mha.forward(&mut g, &mut binder, qn, keys, vs, None);
            g.value(out).data().to_vec()
        };
        let with_pair = run([&v1, &v2]);
        let with_avg = run([&avg, &avg]);
        for (a, b) in with_pair.iter().zip(&with_avg) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn attention_matches_per_head_loop_reference() {
        let (tokens, dim, heads) = (3usize, 8usize, 2usize);
        let mut params = Params::new();
        let mut rng = Rng::new(9);
        let mha = MultiHeadAttention::init(&mut params, &mut rng, "a", dim, heads);
        let q = rand_tensor(&mut rng, &[tokens, dim]);
        let k = rand_tensor(&mut rng, &[tokens, dim]);
        let v = rand_tensor(&mut rng, &[tokens, dim]);

        let mut g = Graph::new();
        let mut binder = Binder::new(&params);
        let (qn, kn, vn) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let out = mha.forward(&mut g, &mut binder, qn, kn, vn, None);
        let got = g.value(out).data().to_vec();

        // Naive loop reference, one head at a time.
        let project = |name: &str, src: &Tensor| -> Vec<Vec<f64>> {
            let w = params.get(&alloc::format!("a.{name}.w"));
            let b = params.get(&alloc::format!("a.{name}.b"));
            (0..tokens)
                .map(|t| {
                    let mut o = b.data().to_vec();
                    for i in 0..dim {
                        for j in 0..dim {
                            o[j] += src.at(t, i) * w.at(i, j);
                        }
                    }
                    o
                })
                .collect()
        };
        let (qp, kp, vp) = (project("wq", &q), project("wk", &k), project("wv", &v));
        let dh = dim / heads;
        let mut concat = vec![vec![0.0; dim]; tokens];
        for h in 0..heads {
            for t in 0..tokens {
                let mut scores = vec![0.0; tokens];
                for (s, score) in scores.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for j in 0..dh {
                        dot += qp[t][h * dh + j] * kp[s][h * dh + j];
                    }
                    *score = dot / (dh as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for j in 0..dh {
                    let mut acc = 0.0;
                    for s in 0..tokens {
                        acc += exps[s] / sum * vp[s][h * dh + j];
                    }
                    concat[t][h * dh + j] = acc;
                }
            }
        }
        let wo = params.get("a.wo.w");
        let bo = params.get("a.wo.b");
        for t in 0..tokens {
            let mut o = bo.data().to_vec();
            for i in 0..dim {
                for j in 0..dim {
                    o[j] += concat[t][i] * wo.at(i, j);
                }
            }
            for j in 0..dim {
                assert!((got[t * dim + j] - o[j]).abs() < 1e-10, "token {t} dim {j}");
            }
        }
    }

    #[test]
    fn mcg_neutral_gate_reduces_to_residual_mlp() {
        let dim = 6;
        let mut params = Params::new();
        let mut rng = Rng::new(3);
        let mcg = Mcg::init(&mut params, &mut rng, "m", dim);
        // Force the y-context gate to output ones regardless of input.
        *params.get_mut("m.gate_y.0.w") = Tensor::zeros(&[dim, dim]);
        *params.get_mut("m.gate_y.0.b") = Tensor::new(&[dim], vec![1.0; dim]);
        let x = rand_tensor(&mut rng, &[4, dim]);
        let y = Tensor::zeros(&[3, dim]);

        let mut g = Graph::new();
        let mut binder = Binder::new(&params);
        let (xn, yn) = (g.constant(x.clone()), g.constant(y));
        let (x_out, _) = mcg.forward(&mut g, &mut binder, xn, yn);

        // Reference: mlp_x(x) + x.
        let mut g2 = Graph::new();
        let mut binder2 = Binder::new(&params);
        let xn2 = g2.constant(x);
        let hx = mcg.mlp_x.forward(&mut g2, &mut binder2, xn2);
        let expect = g2.add(hx, xn2);
        for (a, b) in g.value(x_out).data().iter().zip(g2.value(expect).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mcg_invariant_to_y_permutation() {
        let dim = 8;
        let mut params = Params::new();
        let mut rng = Rng::new(4);
        let mcg = Mcg::init(&mut params, &mut rng, "m", dim);
        let x = rand_tensor(&mut rng, &[4, dim]);
        let y = rand_tensor(&mut rng, &[3, dim]);
        let mut y_perm_data = Vec::new();
        for r in [2usize, 0, 1] {
            y_perm_data.extend((0..dim).map(|j| y.at(r, j)));
        }
        let y_perm = Tensor::new(&[3, dim], y_perm_data);

        let run = |yy: &Tensor| {
            let mut g = Graph::new();
            let mut binder = Binder::new(&params);
            let (xn, yn) = (g.constant(x.clone()), g.constant(yy.clone()));
            let (x_out, _) = mcg.forward(&mut g, &mut binder, xn, yn);
            g.value(x_out).data().to_vec()
        };
        assert_eq!(run(&y), run(&y_perm));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(8);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[5, 7]));
        let y = g.softmax_rows(x);
        for i in 0..5 {
            let s: f64 = (0..7).map(|j| g.value(y).at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let mut bad = ModelConfig::tiny();
        bad.heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::tiny();
        bad.k = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        g.matmul(a, b);
    }
}
