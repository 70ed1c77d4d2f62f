//! Map-aware multi-modal trajectory prediction at desk scale.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`scenario`] — immutable scene descriptions: lane graph, typed map
//!    polylines, agent tracks and target designations.
//! 2. [`worlds`] — procedural generator of small scenarios (straight roads,
//!    curves, junctions) with kinematically feasible ground truth.
//! 3. [`lane_graph`] — traffic-rule-compliant breadth-first search that turns
//!    the lane graph into per-agent intention points.
//! 4. [`kinematics`] — clamped-control Euler rollout and its inverse.
//! 5. [`vectorizer`] — agent-centric tensors for the network.
//! 6. [`nn`] — a minimal dense-tensor substrate with reverse-mode gradients.
//! 7. [`encoder`] / [`decoder`] / [`model`] — the prediction network.
//! 8. [`training`] — losses, hard assignment and a deterministic trainer.
//! 9. [`eval`] — displacement metrics, NMS selection and the cross-boundary
//!    rate.
//!
//! Everything here is `no_std + alloc`; file formats, plotting and the CLI
//! live in the companion `lanecast` crate. All numeric paths are `f64`,
//! single-threaded and deterministic given a seed.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod geometry;
pub mod kinematics;
pub mod lane_graph;
pub mod math;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod training;
pub mod vectorizer;
pub mod worlds;

pub use scenario::Scenario;
