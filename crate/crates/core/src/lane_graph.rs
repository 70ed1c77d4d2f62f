//! Lane-graph queries and scene-compliant intention point generation.
//!
//! Intention points anchor the decoder's motion modes. Instead of a fixed
//! dataset-wide pattern they are sampled from lane centerlines reachable
//! from the agent's current lane through a breadth-first search over legal
//! successors and neighbors, so every point is on-road by construction.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::{self, Pose};
use crate::math;
use crate::scenario::{Scenario, ScenarioError, Waypoint};

/// Weight of the heading-alignment term in [`nearest_lane`] scoring.
const HEADING_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntentionParams {
    /// Number of points to emit (one per motion mode).
    pub k: usize,
    /// Maximum Euclidean distance of candidate waypoints from the agent.
    pub d_max: f64,
    /// Cap on the number of lanes the search may visit.
    pub max_lanes: usize,
}

impl Default for IntentionParams {
    fn default() -> Self {
        Self { k: 64, d_max: 85.0, max_lanes: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionPointSet {
    pub agent_id: String,
    /// Exactly `k` points, in the target agent's frame.
    pub points: Vec<Waypoint>,
    /// Lane each point was sampled from, parallel to `points`.
    pub source_lane_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntentionError {
    Scenario(ScenarioError),
    /// No candidate waypoint exists within the search budget.
    DegenerateScene(String),
    BadParams(String),
}

impl core::fmt::Display for IntentionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            IntentionError::Scenario(e) => write!(f, "{e}"),
            IntentionError::DegenerateScene(msg) => write!(f, "degenerate scene: {msg}"),
            IntentionError::BadParams(msg) => write!(f, "bad parameters: {msg}"),
        }
    }
}

impl From<ScenarioError> for IntentionError {
    fn from(e: ScenarioError) -> Self {
        IntentionError::Scenario(e)
    }
}

/// Lane whose centerline best matches a pose. Score is perpendicular
/// distance plus `2 * (1 - cos(heading difference))`; ties break on the
/// lexicographically smallest lane id.
pub fn nearest_lane(s: &Scenario, position: Waypoint, heading: f64) -> Option<&str> {
    let mut best: Option<(f64, &str)> = None;
    for lane in &s.lanes {
        let pts = s.centerline(lane);
        let (seg, d, _) = geometry::project_onto_polyline(position, pts);
        let dir = math::atan2(pts[seg + 1].y - pts[seg].y, pts[seg + 1].x - pts[seg].x);
        let score = d + HEADING_WEIGHT * (1.0 - math::cos(heading - dir));
        let better = match best {
            None => true,
            Some((bs, bid)) => score < bs || (score == bs && lane.id.as_str() < bid),
        };
        if better {
            best = Some((score, lane.id.as_str()));
        }
    }
    best.map(|(_, id)| id)
}

/// A candidate waypoint with its sort key.
#[derive(Debug, Clone)]
struct Candidate {
    dist: f64,
    lane_id: String,
    waypoint_index: usize,
    point: Waypoint,
}

/// Breadth-first search over `children U neighbors` from the agent's lane,
/// collecting centerline waypoints within `d_max` of the agent, then uniform
/// rank sampling of `k` points from the distance-sorted candidates.
///
/// The starting lane contributes only the waypoints ahead of the agent's
/// projection onto it; reached lanes contribute all waypoints within range.
/// Each lane is visited at most once, so cyclic neighbor references
/// terminate. If fewer than `k` candidates exist the ranks cycle.
pub fn generate_intention_points(
    s: &Scenario,
    agent_id: &str,
    params: &IntentionParams,
) -> Result<IntentionPointSet, IntentionError> {
    if params.k == 0 {
        return Err(IntentionError::BadParams("k must be at least 1".into()));
    }
    if !(params.d_max > 0.0) {
        return Err(IntentionError::BadParams("d_max must be positive".into()));
    }
    let current = s.current_state(agent_id)?;
    if s.lanes.is_empty() {
        return Err(IntentionError::DegenerateScene("scenario has no lanes".into()));
    }
    let origin = current.position();
    let start_id = nearest_lane(s, origin, current.heading).expect("non-empty lane list");

    let mut candidates: Vec<Candidate> = Vec::new();

    // Waypoints of the starting lane ahead of the agent.
    let start_lane = s.lane(start_id).expect("nearest lane exists");
    let start_pts = s.centerline(start_lane);
    let (_, _, agent_arc) = geometry::project_onto_polyline(origin, start_pts);
    let mut arc = 0.0;
    for (i, w) in start_pts.iter().enumerate() {
        if i > 0 {
            arc += geometry::dist(start_pts[i - 1], *w);
        }
        if arc >= agent_arc {
            let d = geometry::dist(*w, origin);
            if d <= params.d_max {
                candidates.push(Candidate { dist: d, lane_id: start_lane.id.clone(), waypoint_index: i, point: *w });
            }
        }
    }

    // BFS over successors and neighbors.
    let mut visited: BTreeSet<&str> = BTreeSet::new();
    let mut frontier: VecDeque<&str> = VecDeque::new();
    visited.insert(start_id);
    frontier.push_back(start_id);
    while let Some(curr_id) = frontier.pop_front() {
        if visited.len() > params.max_lanes {
            break;
        }
        let curr = s.lane(curr_id).expect("validated lane id");
        for next_id in curr.children.iter().chain(curr.neighbors.iter()) {
            if visited.contains(next_id.as_str()) {
                continue;
            }
            let next = s.lane(next_id).expect("validated lane id");
            let pts = s.centerline(next);
            let lane_dist = pts.iter().map(|w| geometry::dist(*w, origin)).fold(f64::INFINITY, f64::min);
            if lane_dist > params.d_max {
                continue;
            }
            visited.insert(next_id);
            frontier.push_back(next_id);
            for (i, w) in pts.iter().enumerate() {
                let d = geometry::dist(*w, origin);
                if d <= params.d_max {
                    candidates.push(Candidate { dist: d, lane_id: next.id.clone(), waypoint_index: i, point: *w });
                }
            }
        }
    }

    if candidates.is_empty() {
        return Err(IntentionError::DegenerateScene(alloc::format!(
            "no candidate waypoints within {} m of agent {agent_id}",
            params.d_max
        )));
    }

    candidates.sort_by(|a, b| {
        a.dist
            .partial_cmp(&b.dist)
            .unwrap()
            .then_with(|| a.lane_id.cmp(&b.lane_id))
            .then_with(|| a.waypoint_index.cmp(&b.waypoint_index))
    });

    // Uniform rank sampling; cycles when there are fewer candidates than k.
    let frame = Pose::new(current.x, current.y, current.heading);
    let m = candidates.len();
    let mut points = Vec::with_capacity(params.k);
    let mut source_lane_ids = Vec::with_capacity(params.k);
    for i in 0..params.k {
        let rank = if m >= params.k {
            if params.k == 1 { 0 } else { (i * (m - 1) + (params.k - 1) / 2) / (params.k - 1) }
        } else {
            i % m
        };
        let c = &candidates[rank];
        points.push(frame.point_to_local(c.point));
        source_lane_ids.push(c.lane_id.clone());
    }

    Ok(IntentionPointSet { agent_id: agent_id.into(), points, source_lane_ids })
}
