//! Scene domain types: lane graph, typed map polylines, agent tracks.
//!
//! A [`Scenario`] is immutable after construction and is the unit of I/O.
//! Construction-time validation enforces every structural invariant so the
//! rest of the pipeline can index without checking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;

pub const MAX_COORD: f64 = 1.0e5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && math::abs(self.x) <= MAX_COORD && math::abs(self.y) <= MAX_COORD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolylineKind {
    LaneCenterline,
    RoadEdgeBoundary,
    RoadEdgeMedian,
    SolidDoubleYellow,
    SolidDoubleWhite,
    DashedLine,
    Crosswalk,
    SpeedBump,
    StopSign,
}

impl PolylineKind {
    pub const ALL: [PolylineKind; 9] = [
        PolylineKind::LaneCenterline,
        PolylineKind::RoadEdgeBoundary,
        PolylineKind::RoadEdgeMedian,
        PolylineKind::SolidDoubleYellow,
        PolylineKind::SolidDoubleWhite,
        PolylineKind::DashedLine,
        PolylineKind::Crosswalk,
        PolylineKind::SpeedBump,
        PolylineKind::StopSign,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolylineKind::LaneCenterline => "lane_centerline",
            PolylineKind::RoadEdgeBoundary => "road_edge_boundary",
            PolylineKind::RoadEdgeMedian => "road_edge_median",
            PolylineKind::SolidDoubleYellow => "solid_double_yellow",
            PolylineKind::SolidDoubleWhite => "solid_double_white",
            PolylineKind::DashedLine => "dashed_line",
            PolylineKind::Crosswalk => "crosswalk",
            PolylineKind::SpeedBump => "speed_bump",
            PolylineKind::StopSign => "stop_sign",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Uncrossable kinds for the cross-boundary metric.
    pub fn is_boundary(&self) -> bool {
        matches!(
            self,
            PolylineKind::RoadEdgeBoundary
                | PolylineKind::RoadEdgeMedian
                | PolylineKind::SolidDoubleYellow
                | PolylineKind::SolidDoubleWhite
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPolyline {
    pub id: String,
    pub kind: PolylineKind,
    pub points: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    /// Id of a polyline with kind `lane_centerline`.
    pub centerline: String,
    /// Legal successor lanes.
    pub children: Vec<String>,
    /// Legal adjacent lane changes.
    pub neighbors: Vec<String>,
    pub speed_limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Cyclist => "cyclist",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(AgentKind::Vehicle),
            "pedestrian" => Some(AgentKind::Pedestrian),
            "cyclist" => Some(AgentKind::Cyclist),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn invalid() -> Self {
        Self { x: 0.0, y: 0.0, heading: 0.0, vx: 0.0, vy: 0.0, valid: false }
    }

    pub fn speed(&self) -> f64 {
        math::hypot(self.vx, self.vy)
    }

    pub fn position(&self) -> Waypoint {
        Waypoint::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    /// `history_len + 1 + future_len` states; index `history_len` is "now".
    pub states: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// Seconds between consecutive states.
    pub timestep: f64,
    pub history_len: usize,
    pub future_len: usize,
    pub lanes: Vec<Lane>,
    pub polylines: Vec<MapPolyline>,
    pub tracks: Vec<AgentTrack>,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    /// A structural constraint failed; the message names the offending field
    /// or id.
    Invalid(String),
    UnknownAgent(String),
}

impl core::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ScenarioError::Invalid(msg) => write!(f, "invalid scenario: {msg}"),
            ScenarioError::UnknownAgent(id) => write!(f, "unknown agent id: {id}"),
        }
    }
}

impl Scenario {
    /// Total number of states per track.
    pub fn horizon(&self) -> usize {
        self.history_len + 1 + self.future_len
    }

    pub fn track(&self, agent_id: &str) -> Result<&AgentTrack, ScenarioError> {
        self.tracks
            .iter()
            .find(|t| t.id == agent_id)
            .ok_or_else(|| ScenarioError::UnknownAgent(agent_id.into()))
    }

    pub fn track_index(&self, agent_id: &str) -> Result<usize, ScenarioError> {
        self.tracks
            .iter()
            .position(|t| t.id == agent_id)
            .ok_or_else(|| ScenarioError::UnknownAgent(agent_id.into()))
    }

    /// State at the current step (`states[history_len]`).
    pub fn current_state(&self, agent_id: &str) -> Result<AgentState, ScenarioError> {
        Ok(self.track(agent_id)?.states[self.history_len])
    }

    pub fn lane(&self, lane_id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == lane_id)
    }

    pub fn polyline(&self, id: &str) -> Option<&MapPolyline> {
        self.polylines.iter().find(|p| p.id == id)
    }

    /// Centerline points of a lane. Panics if called on an unvalidated
    /// scenario with dangling references.
    pub fn centerline(&self, lane: &Lane) -> &[Waypoint] {
        &self.polyline(&lane.centerline).expect("validated lane centerline").points
    }

    /// Ground-truth future positions of an agent (after the current step)
    /// with per-step validity.
    pub fn future(&self, agent_id: &str) -> Result<(Vec<Waypoint>, Vec<bool>), ScenarioError> {
        let track = self.track(agent_id)?;
        let start = self.history_len + 1;
        let pts = track.states[start..].iter().map(|s| s.position()).collect();
        let mask = track.states[start..].iter().map(|s| s.valid).collect();
        Ok((pts, mask))
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::Invalid(msg));

        if !(self.timestep.is_finite() && self.timestep > 0.0) {
            return fail(format!("timestep must be positive, got {}", self.timestep));
        }
        for poly in &self.polylines {
            if poly.points.len() < 2 {
                return fail(format!("polyline {} has fewer than 2 points", poly.id));
            }
            for (i, p) in poly.points.iter().enumerate() {
                if !p.is_valid() {
                    return fail(format!("polyline {} point {} out of range", poly.id, i));
                }
            }
            for (i, w) in poly.points.windows(2).enumerate() {
                if w[0] == w[1] {
                    return fail(format!("polyline {} repeats point at index {}", poly.id, i));
                }
            }
        }
        for lane in &self.lanes {
            match self.polyline(&lane.centerline) {
                None => return fail(format!("lane {} references missing centerline {}", lane.id, lane.centerline)),
                Some(p) if p.kind != PolylineKind::LaneCenterline => {
                    return fail(format!("lane {} centerline {} has kind {}", lane.id, p.id, p.kind.name()))
                }
                _ => {}
            }
            for child in &lane.children {
                if child == &lane.id {
                    return fail(format!("lane {} lists itself as child", lane.id));
                }
                if self.lane(child).is_none() {
                    return fail(format!("lane {} references missing child {}", lane.id, child));
                }
            }
            for nb in &lane.neighbors {
                if self.lane(nb).is_none() {
                    return fail(format!("lane {} references missing neighbor {}", lane.id, nb));
                }
            }
            if let Some(sl) = lane.speed_limit {
                if !(sl.is_finite() && sl > 0.0) {
                    return fail(format!("lane {} speed_limit must be positive", lane.id));
                }
            }
        }
        let horizon = self.horizon();
        for track in &self.tracks {
            if track.states.len() != horizon {
                return fail(format!(
                    "track {} has {} states, scenario horizon is {}",
                    track.id,
                    track.states.len(),
                    horizon
                ));
            }
            let any_valid = track.states.iter().any(|s| s.valid);
            if any_valid && !(track.length > 0.0 && track.width > 0.0) {
                return fail(format!("track {} needs positive length and width", track.id));
            }
            for (i, s) in track.states.iter().enumerate() {
                if s.valid {
                    let finite = s.x.is_finite() && s.y.is_finite() && s.heading.is_finite() && s.vx.is_finite() && s.vy.is_finite();
                    if !finite || math::abs(s.x) > MAX_COORD || math::abs(s.y) > MAX_COORD {
                        return fail(format!("track {} state {} out of range", track.id, i));
                    }
                    if !(s.heading > -math::PI && s.heading <= math::PI) {
                        return fail(format!("track {} state {} heading {} not normalized", track.id, i, s.heading));
                    }
                } else if s.x != 0.0 || s.y != 0.0 || s.heading != 0.0 || s.vx != 0.0 || s.vy != 0.0 {
                    return fail(format!("track {} state {} is invalid but non-zero", track.id, i));
                }
            }
        }
        if self.targets.is_empty() {
            return fail("targets must not be empty".into());
        }
        if self.targets.len() > self.tracks.len() {
            return fail(format!("{} targets but only {} tracks", self.targets.len(), self.tracks.len()));
        }
        for t in &self.targets {
            if self.track(t).is_err() {
                return fail(format!("target {} is not a track id", t));
            }
        }
        Ok(())
    }
}
