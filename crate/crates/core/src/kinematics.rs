//! Clamped-control Euler rollout and its greedy inverse.
//!
//! The rollout integrates acceleration and heading-rate commands into
//! positions with per-step clamping:
//!
//! ```text
//! v_t = v_{t-1} + clamp(a_t) * dt
//! th_t = th_{t-1} + clamp(w_t) * dt
//! x_t = x_{t-1} + v_t * cos(th_t) * dt
//! y_t = y_{t-1} + v_t * sin(th_t) * dt
//! ```
//!
//! Position updates use the already-updated `v_t`, `th_t` of the same step.
//! Speed is deliberately not clamped at zero: negative speed is reversing.
//! [`fit_controls`] inverts the scheme step by step and reports the residual
//! instead of failing, which makes it usable both as a data generator and as
//! an infeasibility probe.

use alloc::vec::Vec;

use crate::math;
use crate::scenario::Waypoint;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    /// Acceleration per step, m/s^2.
    pub accel: Vec<f64>,
    /// Heading change rate per step, rad/s.
    pub yaw_rate: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(len: usize) -> Self {
        Self { accel: alloc::vec![0.0; len], yaw_rate: alloc::vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self { x, y, heading, speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub a_min: f64,
    pub a_max: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
    pub dt: f64,
}

impl KinematicLimits {
    pub fn new(a_min: f64, a_max: f64, yaw_min: f64, yaw_max: f64, dt: f64) -> Self {
        debug_assert!(a_min < a_max && yaw_min < yaw_max && dt > 0.0);
        Self { a_min, a_max, yaw_min, yaw_max, dt }
    }

    pub fn clamp_accel(&self, a: f64) -> f64 {
        a.clamp(self.a_min, self.a_max)
    }

    pub fn clamp_yaw(&self, w: f64) -> f64 {
        w.clamp(self.yaw_min, self.yaw_max)
    }

    /// Same bounds at a different step size.
    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..*self }
    }
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self { a_min: -10.0, a_max: 10.0, yaw_min: -1.5, yaw_max: 1.5, dt: 0.1 }
    }
}

/// Integrates the controls; returns positions for steps `1..=T`.
pub fn rollout(init: KinematicState, ctrl: &ControlSequence, lim: &KinematicLimits) -> Vec<Waypoint> {
    debug_assert_eq!(ctrl.accel.len(), ctrl.yaw_rate.len());
    let dt = lim.dt;
    let mut v = init.speed;
    let mut th = init.heading;
    let mut x = init.x;
    let mut y = init.y;
    let mut out = Vec::with_capacity(ctrl.len());
    for t in 0..ctrl.len() {
        v += lim.clamp_accel(ctrl.accel[t]) * dt;
        th += lim.clamp_yaw(ctrl.yaw_rate[t]) * dt;
        x += v * math::cos(th) * dt;
        y += v * math::sin(th) * dt;
        out.push(Waypoint::new(x, y));
    }
    out
}

/// Like [`rollout`] but also returns the internal `(speed, heading)` track,
/// used when a full state trajectory is needed.
pub fn rollout_states(
    init: KinematicState,
    ctrl: &ControlSequence,
    lim: &KinematicLimits,
) -> Vec<KinematicState> {
    let dt = lim.dt;
    let mut s = init;
    let mut out = Vec::with_capacity(ctrl.len());
    for t in 0..ctrl.len() {
        s.speed += lim.clamp_accel(ctrl.accel[t]) * dt;
        s.heading += lim.clamp_yaw(ctrl.yaw_rate[t]) * dt;
        s.x += s.speed * math::cos(s.heading) * dt;
        s.y += s.speed * math::sin(s.heading) * dt;
        out.push(s);
    }
    out
}

/// Greedy per-step inversion of [`rollout`].
///
/// Recovers headings and speeds from position differences, differences them
/// into controls, clamps, and reports the max position error of re-rolling
/// the fitted controls. A zero-displacement step keeps the previous heading.
pub fn fit_controls(
    init: KinematicState,
    traj: &[Waypoint],
    lim: &KinematicLimits,
) -> (ControlSequence, f64) {
    let dt = lim.dt;
    let mut ctrl = ControlSequence::zeros(traj.len());
    let mut prev = Waypoint::new(init.x, init.y);
    let mut prev_v = init.speed;
    let mut prev_th = init.heading;
    for (t, &p) in traj.iter().enumerate() {
        let (dx, dy) = (p.x - prev.x, p.y - prev.y);
        let step = math::hypot(dx, dy);
        let th = if step > 0.0 { math::atan2(dy, dx) } else { prev_th };
        let v = step / dt;
        ctrl.accel[t] = lim.clamp_accel((v - prev_v) / dt);
        ctrl.yaw_rate[t] = lim.clamp_yaw(math::normalize_angle(th - prev_th) / dt);
        prev = p;
        prev_v = v;
        prev_th = th;
    }
    let rolled = rollout(init, &ctrl, lim);
    let residual = rolled
        .iter()
        .zip(traj)
        .map(|(a, b)| math::hypot(a.x - b.x, a.y - b.y))
        .fold(0.0, f64::max);
    (ctrl, residual)
}
