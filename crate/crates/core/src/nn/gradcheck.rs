//! Central finite-difference gradient checking.
//!
//! The checker re-runs the caller's graph builder with perturbed leaf
//! values, so it stays independent of the backward implementation it
//! verifies.

use alloc::vec::Vec;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::math;

/// Largest relative error between analytic and central-difference gradients
/// over all elements of all inputs. `max_checks_per_input` limits how many
/// elements are probed (evenly strided); pass `usize::MAX` for all.
pub fn finite_diff_check<F>(inputs: &[Tensor], eps: f64, max_checks_per_input: usize, build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let run = |tensors: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
        let out = build(&mut g, &ids);
        assert_eq!(g.value(out).numel(), 1, "gradient check needs a scalar output");
        let loss = g.value(out).data()[0];
        let grads = g.backward(out);
        let gs = ids
            .iter()
            .map(|id| grads.get(*id).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; g.value(*id).numel()]))
            .collect();
        (loss, gs)
    };

    let (_, analytic) = run(inputs);
    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let stride = (n / max_checks_per_input.max(1)).max(1);
        let mut j = 0;
        while j < n {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= eps;
            let (lp, _) = run(&plus);
            let (lm, _) = run(&minus);
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[ti][j];
            let err = math::abs(a - numeric) / (math::abs(a).max(math::abs(numeric)) + 1e-8);
            worst = worst.max(err);
            j += stride;
        }
    }
    worst
}
