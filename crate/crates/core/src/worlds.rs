//! Procedural scenario generator.
//!
//! Four templates: a straight two-way road, a 90-degree curve, a T-junction
//! and a four-way intersection. Each template emits a connected lane graph
//! (arm lanes chained into junction connectors), road-edge boundaries
//! flanking the outermost lanes, medians, dashed dividers and crosswalks.
//!
//! Agent futures are produced by fitting controls to a lane-following speed
//! profile and rolling them back out, so every ground-truth future is itself
//! a rollout and therefore kinematically feasible by construction.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::geometry;
use crate::kinematics::{self, ControlSequence, KinematicLimits, KinematicState};
use crate::math;
use crate::rng::Rng;
use crate::scenario::{
    AgentKind, AgentState, AgentTrack, Lane, MapPolyline, PolylineKind, Scenario, Waypoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Straight,
    Curve,
    TJunction,
    Fourway,
}

impl Template {
    pub fn name(&self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::Curve => "curve",
            Template::TJunction => "t_junction",
            Template::Fourway => "fourway",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "straight" => Some(Template::Straight),
            "curve" => Some(Template::Curve),
            "t_junction" => Some(Template::TJunction),
            "fourway" => Some(Template::Fourway),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub template: Template,
    pub lane_count: usize,
    pub lane_width: f64,
    pub waypoint_spacing: f64,
    pub agent_count: usize,
    pub seed: u64,
    pub history_len: usize,
    pub future_len: usize,
}

impl WorldSpec {
    pub fn new(template: Template, seed: u64) -> Self {
        Self {
            template,
            lane_count: 1,
            lane_width: 3.5,
            waypoint_spacing: 1.0,
            agent_count: 3,
            seed,
            history_len: 10,
            future_len: 16,
        }
    }

    fn check(&self) {
        assert!(self.lane_count >= 1, "lane_count must be at least 1");
        assert!(self.waypoint_spacing > 0.0, "waypoint_spacing must be positive");
        assert!(self.agent_count >= 1, "agent_count must be at least 1");
        assert!(self.history_len >= 1 && self.future_len >= 1);
    }
}

const DT: f64 = 0.1;
const ARM_LEN: f64 = 30.0;
const MIN_SPEED: f64 = 0.5;

/// A drivable lane sequence with its concatenated centerline.
struct Route {
    lane_ids: Vec<String>,
    path: Vec<Waypoint>,
    /// Smallest turn radius along the route; `INFINITY` when straight.
    min_radius: f64,
    /// Arc position of the most interesting transition (junction entry or
    /// mid-route), used to place agents so their futures span it.
    focus_arc: f64,
}

struct Network {
    lanes: Vec<Lane>,
    polylines: Vec<MapPolyline>,
    routes: Vec<Route>,
}

fn sample_line(a: Waypoint, b: Waypoint, spacing: f64) -> Vec<Waypoint> {
    let len = geometry::dist(a, b);
    let n = math::ceil(len / spacing).max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            Waypoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
        .collect()
}

fn sample_arc(center: Waypoint, radius: f64, a0: f64, a1: f64, spacing: f64) -> Vec<Waypoint> {
    let arc_len = math::abs(a1 - a0) * radius;
    let n = math::ceil(arc_len / spacing).max(2.0) as usize;
    (0..=n)
        .map(|i| {
            let t = a0 + (a1 - a0) * i as f64 / n as f64;
            Waypoint::new(center.x + radius * math::cos(t), center.y + radius * math::sin(t))
        })
        .collect()
}

/// Connects pose (p0, h0) to (p1, h1) with a straight line or a circular
/// arc whose tangents match both endpoint headings (quarter-turn geometry).
fn connector_points(p0: Waypoint, h0: f64, p1: Waypoint, h1: f64, spacing: f64) -> (Vec<Waypoint>, f64) {
    let turn = math::normalize_angle(h1 - h0);
    if math::abs(turn) < 1e-9 {
        return (sample_line(p0, p1, spacing), f64::INFINITY);
    }
    // Center sits on the normal of each endpoint tangent.
    let side = if turn > 0.0 { 1.0 } else { -1.0 };
    let n0 = (math::cos(h0 + side * math::PI / 2.0), math::sin(h0 + side * math::PI / 2.0));
    // Distance along n0 where the two normal lines meet.
    let n1 = (math::cos(h1 + side * math::PI / 2.0), math::sin(h1 + side * math::PI / 2.0));
    // Solve p0 + r*n0 = p1 + r*n1 componentwise (quarter turns make the
    // radii equal); use the better-conditioned component.
    let dx = p1.x - p0.x;
    let dy = p1.y - p0.y;
    let denom_x = n0.0 - n1.0;
    let denom_y = n0.1 - n1.1;
    let r = if math::abs(denom_x) > math::abs(denom_y) { dx / denom_x } else { dy / denom_y };
    let center = Waypoint::new(p0.x + r * n0.0, p0.y + r * n0.1);
    let a0 = math::atan2(p0.y - center.y, p0.x - center.x);
    let mut a1 = math::atan2(p1.y - center.y, p1.x - center.x);
    // Sweep in the turn direction.
    if side > 0.0 && a1 < a0 {
        a1 += math::TAU;
    }
    if side < 0.0 && a1 > a0 {
        a1 -= math::TAU;
    }
    (sample_arc(center, math::abs(r), a0, a1, spacing), math::abs(r))
}

fn rotate(p: Waypoint, angle: f64) -> Waypoint {
    let (c, s) = (math::cos(angle), math::sin(angle));
    Waypoint::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// One junction arm. Geometry is authored in a canonical frame where the arm
/// points south and then rotated into place.
struct Arm {
    name: &'static str,
    /// Azimuth of the outward direction.
    azimuth: f64,
}

fn arm_point(arm: &Arm, x: f64, y: f64) -> Waypoint {
    // Canonical frame has the arm pointing along -y (azimuth -pi/2).
    rotate(Waypoint::new(x, y), arm.azimuth + math::PI / 2.0)
}

struct NetworkBuilder {
    spec: WorldSpec,
    lanes: Vec<Lane>,
    polylines: Vec<MapPolyline>,
    routes: Vec<Route>,
}

impl NetworkBuilder {
    fn new(spec: &WorldSpec) -> Self {
        Self { spec: spec.clone(), lanes: Vec::new(), polylines: Vec::new(), routes: Vec::new() }
    }

    fn offset(&self, i: usize) -> f64 {
        (0.5 + i as f64) * self.spec.lane_width
    }

    fn half_width(&self) -> f64 {
        self.spec.lane_count as f64 * self.spec.lane_width
    }

    fn junction_half(&self) -> f64 {
        self.half_width() + 1.5
    }

    fn add_polyline(&mut self, id: String, kind: PolylineKind, points: Vec<Waypoint>) {
        let mut deduped: Vec<Waypoint> = Vec::with_capacity(points.len());
        for p in points {
            if deduped.last().map(|l| geometry::dist(*l, p) > 1e-9).unwrap_or(true) {
                deduped.push(p);
            }
        }
        debug_assert!(deduped.len() >= 2, "degenerate polyline {id}");
        self.polylines.push(MapPolyline { id, kind, points: deduped });
    }

    fn add_lane(&mut self, id: String, points: Vec<Waypoint>, speed_limit: f64) {
        self.add_polyline(format!("cl_{id}"), PolylineKind::LaneCenterline, points);
        self.lanes.push(Lane {
            id,
            centerline: String::new(), // patched below
            children: Vec::new(),
            neighbors: Vec::new(),
            speed_limit: Some(speed_limit),
        });
        let id = self.lanes.last().unwrap().id.clone();
        self.lanes.last_mut().unwrap().centerline = format!("cl_{id}");
    }

    fn link(&mut self, parent: &str, child: &str) {
        let lane = self.lanes.iter_mut().find(|l| l.id == parent).expect("parent lane");
        if !lane.children.iter().any(|c| c == child) {
            lane.children.push(child.to_string());
        }
    }

    fn neighbor(&mut self, a: &str, b: &str) {
        let lane = self.lanes.iter_mut().find(|l| l.id == a).expect("lane");
        if !lane.neighbors.iter().any(|c| c == b) {
            lane.neighbors.push(b.to_string());
        }
    }

    fn lane_points(&self, id: &str) -> &[Waypoint] {
        let lane = self.lanes.iter().find(|l| l.id == id).expect("lane");
        &self.polylines.iter().find(|p| p.id == lane.centerline).expect("centerline").points
    }

    fn add_route(&mut self, lane_ids: Vec<String>, min_radius: f64) {
        let mut path: Vec<Waypoint> = Vec::new();
        let mut focus = 0.0;
        for (k, id) in lane_ids.iter().enumerate() {
            let pts = self.lane_points(id);
            if k == 1 {
                focus = geometry::polyline_length(&path);
            }
            for &p in pts {
                if path.last().map(|l| geometry::dist(*l, p) > 1e-9).unwrap_or(true) {
                    path.push(p);
                }
            }
        }
        if lane_ids.len() == 1 {
            focus = geometry::polyline_length(&path) * 0.5;
        }
        self.routes.push(Route { lane_ids, path, min_radius, focus_arc: focus });
    }

    /// Arm furniture: inbound/outbound lanes, edges, median, dashes,
    /// crosswalk. Returns nothing; lanes are linked to connectors later.
    fn build_arm(&mut self, arm: &Arm) {
        let spec = self.spec.clone();
        let hw = self.half_width();
        let jx = self.junction_half();
        let far = jx + ARM_LEN;
        for i in 0..spec.lane_count {
            let o = self.offset(i);
            // Inbound: toward the junction (canonical heading +y).
            let inbound: Vec<Waypoint> =
                sample_line(Waypoint::new(o, -far), Waypoint::new(o, -jx), spec.waypoint_spacing)
                    .into_iter()
                    .map(|p| arm_point(arm, p.x, p.y))
                    .collect();
            self.add_lane(format!("{}_in_{}", arm.name, i), inbound, 8.0);
            // Outbound: away from the junction.
            let outbound: Vec<Waypoint> =
                sample_line(Waypoint::new(-o, -jx), Waypoint::new(-o, -far), spec.waypoint_spacing)
                    .into_iter()
                    .map(|p| arm_point(arm, p.x, p.y))
                    .collect();
            self.add_lane(format!("{}_out_{}", arm.name, i), outbound, 8.0);
        }
        for i in 1..spec.lane_count {
            self.neighbor(&format!("{}_in_{}", arm.name, i - 1), &format!("{}_in_{}", arm.name, i));
            self.neighbor(&format!("{}_in_{}", arm.name, i), &format!("{}_in_{}", arm.name, i - 1));
            let x = i as f64 * spec.lane_width;
            for side in [1.0, -1.0] {
                self.add_polyline(
                    format!("dash_{}_{}_{}", arm.name, if side > 0.0 { "in" } else { "out" }, i),
                    PolylineKind::DashedLine,
                    sample_line(Waypoint::new(side * x, -far), Waypoint::new(side * x, -jx), 2.0)
                        .into_iter()
                        .map(|p| arm_point(arm, p.x, p.y))
                        .collect(),
                );
            }
        }
        for (side, tag) in [(1.0, "r"), (-1.0, "l")] {
            self.add_polyline(
                format!("edge_{}_{}", arm.name, tag),
                PolylineKind::RoadEdgeBoundary,
                sample_line(Waypoint::new(side * hw, -far), Waypoint::new(side * hw, -jx), 2.0)
                    .into_iter()
                    .map(|p| arm_point(arm, p.x, p.y))
                    .collect(),
            );
        }
        self.add_polyline(
            format!("median_{}", arm.name),
            PolylineKind::SolidDoubleYellow,
            sample_line(Waypoint::new(0.0, -far), Waypoint::new(0.0, -jx), 2.0)
                .into_iter()
                .map(|p| arm_point(arm, p.x, p.y))
                .collect(),
        );
        self.add_polyline(
            format!("crosswalk_{}", arm.name),
            PolylineKind::Crosswalk,
            sample_line(Waypoint::new(-hw, -(jx + 1.0)), Waypoint::new(hw, -(jx + 1.0)), 1.0)
                .into_iter()
                .map(|p| arm_point(arm, p.x, p.y))
                .collect(),
        );
    }

    /// Junction connector from `from` arm inbound lane `i` to `to` arm.
    fn build_connector(&mut self, from: &Arm, i: usize, to: &Arm) {
        let spec = self.spec.clone();
        let jx = self.junction_half();
        let o = self.offset(i);
        let p0 = arm_point(from, o, -jx);
        let h0 = from.azimuth + math::PI; // inbound heading: toward center
        let p1 = arm_point(to, -o, -jx);
        let h1 = to.azimuth; // outbound heading: away from center
        let (points, radius) = connector_points(p0, h0, p1, h1, spec.waypoint_spacing.min(0.8));
        let id = format!("{}_{}_{}", from.name, to.name, i);
        let limit = if radius.is_finite() { (radius * 1.3).min(8.0) } else { 8.0 };
        self.add_lane(id.clone(), points, limit);
        let in_id = format!("{}_in_{}", from.name, i);
        let out_id = format!("{}_out_{}", to.name, i);
        self.link(&in_id, &id);
        self.link(&id, &out_id);
        self.add_route(alloc::vec![in_id, id, out_id], radius);
    }

    fn build_junction(&mut self, arms: &[Arm]) {
        for arm in arms {
            self.build_arm(arm);
        }
        let lc = self.spec.lane_count;
        for from in arms {
            for to in arms {
                if core::ptr::eq(from, to) {
                    continue;
                }
                let turn = math::normalize_angle(to.azimuth - (from.azimuth + math::PI));
                if math::abs(turn) < 1e-9 {
                    for i in 0..lc {
                        self.build_connector(from, i, to);
                    }
                } else if turn < 0.0 {
                    // Right turn from the rightmost lane.
                    self.build_connector(from, lc - 1, to);
                } else {
                    // Left turn from the leftmost lane.
                    self.build_connector(from, 0, to);
                }
            }
        }
    }

    /// Straight and curve templates: a two-way road along a given axis,
    /// each direction split into chained segments.
    fn build_corridor(&mut self, axis: &[Waypoint]) {
        let spec = self.spec.clone();
        let hw = self.half_width();
        for i in 0..spec.lane_count {
            let o = self.offset(i);
            let fwd = offset_polyline(axis, o, spec.waypoint_spacing);
            let rev = {
                let mut v = offset_polyline(axis, -o, spec.waypoint_spacing);
                v.reverse();
                v
            };
            for (dir, pts) in [("f", fwd), ("r", rev)] {
                let mid = pts.len() / 2;
                let a: Vec<Waypoint> = pts[..=mid].to_vec();
                let b: Vec<Waypoint> = pts[mid..].to_vec();
                let id_a = format!("{dir}_{i}_a");
                let id_b = format!("{dir}_{i}_b");
                self.add_lane(id_a.clone(), a, 8.0);
                self.add_lane(id_b.clone(), b, 8.0);
                self.link(&id_a, &id_b);
                let radius = min_turn_radius(axis);
                self.add_route(alloc::vec![id_a, id_b], radius);
            }
        }
        for i in 1..spec.lane_count {
            for dir in ["f", "r"] {
                for (a, b) in [(i - 1, i), (i, i - 1)] {
                    self.neighbor(&format!("{dir}_{a}_a"), &format!("{dir}_{b}_a"));
                    self.neighbor(&format!("{dir}_{a}_b"), &format!("{dir}_{b}_b"));
                }
            }
            let x = i as f64 * spec.lane_width;
            for side in [1.0, -1.0] {
                self.add_polyline(
                    format!("dash_{}_{}", if side > 0.0 { "f" } else { "r" }, i),
                    PolylineKind::DashedLine,
                    offset_polyline(axis, side * x, 2.0),
                );
            }
        }
        self.add_polyline("edge_r".to_string(), PolylineKind::RoadEdgeBoundary, offset_polyline(axis, hw, 2.0));
        self.add_polyline("edge_l".to_string(), PolylineKind::RoadEdgeBoundary, offset_polyline(axis, -hw, 2.0));
        self.add_polyline("median".to_string(), PolylineKind::SolidDoubleYellow, offset_polyline(axis, 0.0, 2.0));
    }
}

/// Offsets a polyline to the right of its travel direction by `off`
/// (negative = left), resampled at `spacing`.
fn offset_polyline(axis: &[Waypoint], off: f64, spacing: f64) -> Vec<Waypoint> {
    let mut out: Vec<Waypoint> = Vec::with_capacity(axis.len());
    for (i, p) in axis.iter().enumerate() {
        let (a, b) = if i == 0 {
            (axis[0], axis[1])
        } else if i == axis.len() - 1 {
            (axis[i - 1], axis[i])
        } else {
            (axis[i - 1], axis[i + 1])
        };
        let h = math::atan2(b.y - a.y, b.x - a.x);
        // Right normal of travel direction.
        let n = (math::cos(h - math::PI / 2.0), math::sin(h - math::PI / 2.0));
        let q = Waypoint::new(p.x + off * n.0, p.y + off * n.1);
        if out.last().map(|l| geometry::dist(*l, q) > 1e-9).unwrap_or(true) {
            out.push(q);
        }
    }
    if out.len() >= 2 {
        geometry::resample(&out, math::ceil(geometry::polyline_length(&out) / spacing).max(1.0) as usize + 1)
    } else {
        out
    }
}

/// Smallest osculating radius of a sampled polyline (INFINITY when straight).
fn min_turn_radius(pts: &[Waypoint]) -> f64 {
    let mut r = f64::INFINITY;
    for w in pts.windows(3) {
        let h0 = math::atan2(w[1].y - w[0].y, w[1].x - w[0].x);
        let h1 = math::atan2(w[2].y - w[1].y, w[2].x - w[1].x);
        let dth = math::abs(math::normalize_angle(h1 - h0));
        if dth > 1e-6 {
            let ds = geometry::dist(w[0], w[1]).min(geometry::dist(w[1], w[2]));
            r = r.min(ds / dth);
        }
    }
    r
}

fn build_network(spec: &WorldSpec) -> Network {
    let mut b = NetworkBuilder::new(spec);
    match spec.template {
        Template::Straight => {
            let axis = sample_line(Waypoint::new(0.0, -40.0), Waypoint::new(0.0, 40.0), spec.waypoint_spacing);
            b.build_corridor(&axis);
        }
        Template::Curve => {
            let r = 30.0;
            let mut axis = sample_line(Waypoint::new(0.0, -40.0), Waypoint::new(0.0, 0.0), spec.waypoint_spacing);
            axis.extend(sample_arc(Waypoint::new(r, 0.0), r, math::PI, math::PI / 2.0, spec.waypoint_spacing));
            axis.extend(sample_line(Waypoint::new(r, r), Waypoint::new(r + 40.0, r), spec.waypoint_spacing));
            let mut dedup: Vec<Waypoint> = Vec::new();
            for p in axis {
                if dedup.last().map(|l| geometry::dist(*l, p) > 1e-9).unwrap_or(true) {
                    dedup.push(p);
                }
            }
            b.build_corridor(&dedup);
        }
        Template::TJunction => {
            let arms = [
                Arm { name: "S", azimuth: -math::PI / 2.0 },
                Arm { name: "E", azimuth: 0.0 },
                Arm { name: "W", azimuth: math::PI },
            ];
            b.build_junction(&arms);
        }
        Template::Fourway => {
            let arms = [
                Arm { name: "S", azimuth: -math::PI / 2.0 },
                Arm { name: "E", azimuth: 0.0 },
                Arm { name: "N", azimuth: math::PI / 2.0 },
                Arm { name: "W", azimuth: math::PI },
            ];
            b.build_junction(&arms);
        }
    }
    Network { lanes: b.lanes, polylines: b.polylines, routes: b.routes }
}

/// Builds a full track by sampling a speed profile along `path`, fitting
/// controls and rolling them out. The state at `history_len` is "now".
#[allow(clippy::too_many_arguments)]
fn scripted_track(
    id: String,
    kind: AgentKind,
    length: f64,
    width: f64,
    path: &[Waypoint],
    current_arc: f64,
    cruise: f64,
    accel: f64,
    spec: &WorldSpec,
) -> AgentTrack {
    let horizon = spec.history_len + 1 + spec.future_len;
    let lim = KinematicLimits::default();
    // Arc-length profile: s(t) with constant acceleration, floored speed.
    let mut speeds = Vec::with_capacity(horizon);
    let mut v = (cruise - accel * spec.history_len as f64 * DT).max(MIN_SPEED);
    speeds.push(v);
    let mut disp = Vec::with_capacity(horizon);
    disp.push(0.0);
    for t in 1..horizon {
        v = (v + accel * DT).max(MIN_SPEED);
        speeds.push(v);
        disp.push(disp[t - 1] + v * DT);
    }
    let total = geometry::polyline_length(path);
    let start_arc = (current_arc - disp[spec.history_len]).max(0.0);
    let start_arc = start_arc.min((total - disp[horizon - 1] - 0.2).max(0.0));

    let init = KinematicState::new(
        geometry::point_at_arc(path, start_arc).x,
        geometry::point_at_arc(path, start_arc).y,
        geometry::direction_at_arc(path, start_arc),
        speeds[0],
    );
    let targets: Vec<Waypoint> = (1..horizon).map(|t| geometry::point_at_arc(path, start_arc + disp[t])).collect();
    let (ctrl, _residual) = kinematics::fit_controls(init, &targets, &lim);
    let rolled = kinematics::rollout_states(init, &ctrl, &lim);

    let mut states = Vec::with_capacity(horizon);
    let to_state = |s: &KinematicState| AgentState {
        x: s.x,
        y: s.y,
        heading: math::normalize_angle(s.heading),
        vx: s.speed * math::cos(s.heading),
        vy: s.speed * math::sin(s.heading),
        valid: true,
    };
    states.push(to_state(&init));
    states.extend(rolled.iter().map(|s| to_state(s)));
    debug_assert_eq!(states.len(), horizon);
    AgentTrack { id, kind, length, width, states }
}

/// Deterministically generates a scenario from the spec.
pub fn generate(spec: &WorldSpec) -> Scenario {
    spec.check();
    let net = build_network(spec);
    let mut rng = Rng::new(spec.seed ^ 0x57F0_11D5);
    let lim = KinematicLimits::default();
    let horizon_steps = (spec.history_len + spec.future_len) as f64;

    let mut tracks = Vec::with_capacity(spec.agent_count);
    let mut route_use: Vec<usize> = alloc::vec![0; net.routes.len()];
    for idx in 0..spec.agent_count {
        let id = format!("A{idx}");
        let pedestrian_slot = idx + 1 == spec.agent_count
            && spec.agent_count >= 4
            && matches!(spec.template, Template::TJunction | Template::Fourway);
        if pedestrian_slot {
            // Straight walker across the first arm's crosswalk.
            let cw = net
                .polylines
                .iter()
                .find(|p| p.kind == PolylineKind::Crosswalk)
                .expect("junction templates have crosswalks");
            let a = cw.points[0];
            let b = *cw.points.last().unwrap();
            let dir = math::atan2(b.y - a.y, b.x - a.x);
            let ext = 2.0;
            let path = alloc::vec![
                Waypoint::new(a.x - ext * math::cos(dir), a.y - ext * math::sin(dir)),
                Waypoint::new(b.x + ext * math::cos(dir), b.y + ext * math::sin(dir)),
            ];
            let total = geometry::polyline_length(&path);
            let speed = rng.range(1.0, 1.4);
            let arc = rng.range(0.25, 0.55) * total;
            tracks.push(scripted_track(id, AgentKind::Pedestrian, 0.8, 0.8, &path, arc, speed, 0.0, spec));
            continue;
        }
        let route_idx = rng.index(net.routes.len());
        let route = &net.routes[route_idx];
        // Speed cap from the tightest turn on the route, with margin.
        let v_turn = if route.min_radius.is_finite() { 0.85 * lim.yaw_max * route.min_radius } else { f64::INFINITY };
        let cruise = rng.range(2.2, 4.4).min(v_turn);
        let max_accel = ((v_turn - cruise) / (horizon_steps * DT)).min(0.5).max(0.0);
        let accel = rng.range(-0.5, 0.5).min(max_accel);
        // Place the future across the focus (junction entry / mid-route),
        // staggered so same-route agents do not overlap.
        let ahead = rng.range(0.25, 0.85) * spec.future_len as f64 * DT * cruise;
        let current_arc = (route.focus_arc - ahead - route_use[route_idx] as f64 * 9.0).max(1.0);
        route_use[route_idx] += 1;
        tracks.push(scripted_track(
            id,
            AgentKind::Vehicle,
            rng.range(4.2, 5.0),
            rng.range(1.8, 2.1),
            &route.path,
            current_arc,
            cruise,
            accel,
            spec,
        ));
    }

    // One agent with a truncated history exercises validity masking.
    if spec.agent_count >= 3 {
        let cut = spec.history_len / 2;
        for s in &mut tracks[2].states[..cut] {
            *s = AgentState::invalid();
        }
    }

    let scenario = Scenario {
        id: format!("{}-{}", spec.template.name(), spec.seed),
        timestep: DT,
        history_len: spec.history_len,
        future_len: spec.future_len,
        lanes: net.lanes,
        polylines: net.polylines,
        tracks,
        targets: alloc::vec!["A0".to_string()],
    };
    scenario.validate().expect("generated scenario must validate");
    scenario
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn deterministic_generation() {
        let spec = WorldSpec::new(Template::Fourway, 7);
        assert_eq!(generate(&spec), generate(&spec));
    }

    #[test]
    fn straight_single_lane_future_inside_corridor() {
        let mut spec = WorldSpec::new(Template::Straight, 3);
        spec.agent_count = 1;
        let s = generate(&spec);
        let (future, _) = s.future("A0").unwrap();
        let hw = spec.lane_count as f64 * spec.lane_width;
        for p in &future {
            assert!(math::abs(p.x) < hw, "future point {p:?} escapes corridor");
        }
        // Zero boundary crossings by construction.
        let boundaries: Vec<&MapPolyline> = s.polylines.iter().filter(|p| p.kind.is_boundary()).collect();
        for w in future.windows(2) {
            for b in &boundaries {
                for seg in b.points.windows(2) {
                    assert!(!geometry::segments_intersect(w[0], w[1], seg[0], seg[1]));
                }
            }
        }
    }

    #[test]
    fn fourway_reaches_three_outbound_arms() {
        let spec = WorldSpec::new(Template::Fourway, 1);
        let s = generate(&spec);
        // BFS over children from S_in_0.
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec!["S_in_0".to_string()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            let lane = s.lane(&id).unwrap();
            stack.extend(lane.children.iter().cloned());
        }
        let arms: BTreeSet<char> = seen
            .iter()
            .filter(|id| id.contains("_out_"))
            .map(|id| id.chars().next().unwrap())
            .collect();
        assert!(arms.len() >= 3, "reached outbound arms {arms:?}");
    }

    #[test]
    fn ground_truth_future_is_refit_exactly() {
        for template in [Template::Straight, Template::Curve, Template::TJunction, Template::Fourway] {
            let mut spec = WorldSpec::new(template, 11);
            spec.agent_count = 4;
            let s = generate(&spec);
            let lim = KinematicLimits::default();
            for track in &s.tracks {
                let cur = track.states[s.history_len];
                if !cur.valid {
                    continue;
                }
                let init = KinematicState::new(cur.x, cur.y, cur.heading, cur.speed());
                let future: Vec<Waypoint> =
                    track.states[s.history_len + 1..].iter().map(|st| st.position()).collect();
                let (_, residual) = kinematics::fit_controls(init, &future, &lim);
                assert!(residual < 1e-6, "{template:?} {}: residual {residual}", track.id);
            }
        }
    }

    #[test]
    fn boundaries_never_cross_centerlines() {
        for template in [Template::Straight, Template::Curve, Template::TJunction, Template::Fourway] {
            let s = generate(&WorldSpec::new(template, 2));
            let boundaries: Vec<&MapPolyline> = s.polylines.iter().filter(|p| p.kind.is_boundary()).collect();
            let centerlines: Vec<&MapPolyline> =
                s.polylines.iter().filter(|p| p.kind == PolylineKind::LaneCenterline).collect();
            for b in &boundaries {
                for c in &centerlines {
                    for bs in b.points.windows(2) {
                        for cs in c.points.windows(2) {
                            assert!(
                                !geometry::segments_intersect(bs[0], bs[1], cs[0], cs[1]),
                                "{template:?}: boundary {} crosses centerline {}",
                                b.id,
                                c.id
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_history_agent_is_masked() {
        let spec = WorldSpec::new(Template::Fourway, 5);
        let s = generate(&spec);
        assert!(s.tracks[2].states[..spec.history_len / 2].iter().all(|st| !st.valid));
        assert!(s.tracks[2].states[spec.history_len..].iter().all(|st| st.valid));
    }
}
