//! 2-D geometry helpers shared by the map, the search and the metrics.

use alloc::vec::Vec;

use crate::math;
use crate::scenario::Waypoint;

/// Position plus heading; the frame primitive used for agent-centric
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    /// Expresses `other` in this pose's frame: translate by `-self`, rotate
    /// by `-heading`, difference headings.
    pub fn to_local(&self, other: &Pose) -> Pose {
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        let (c, s) = (math::cos(-self.heading), math::sin(-self.heading));
        Pose {
            x: c * dx - s * dy,
            y: s * dx + c * dy,
            heading: math::normalize_angle(other.heading - self.heading),
        }
    }

    /// Inverse of [`Pose::to_local`].
    pub fn to_world(&self, local: &Pose) -> Pose {
        let (c, s) = (math::cos(self.heading), math::sin(self.heading));
        Pose {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            heading: math::normalize_angle(local.heading + self.heading),
        }
    }

    pub fn point_to_local(&self, p: Waypoint) -> Waypoint {
        let (dx, dy) = (p.x - self.x, p.y - self.y);
        let (c, s) = (math::cos(-self.heading), math::sin(-self.heading));
        Waypoint::new(c * dx - s * dy, s * dx + c * dy)
    }

    pub fn point_to_world(&self, p: Waypoint) -> Waypoint {
        let (c, s) = (math::cos(self.heading), math::sin(self.heading));
        Waypoint::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Rotates a vector (velocity) into this pose's frame; no translation.
    pub fn vector_to_local(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (c, s) = (math::cos(-self.heading), math::sin(-self.heading));
        (c * vx - s * vy, s * vx + c * vy)
    }
}

pub fn dist(a: Waypoint, b: Waypoint) -> f64 {
    math::hypot(a.x - b.x, a.y - b.y)
}

/// Distance from `p` to the segment `a..b`.
pub fn point_segment_distance(p: Waypoint, a: Waypoint, b: Waypoint) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
    let t = t.clamp(0.0, 1.0);
    dist(p, Waypoint::new(a.x + t * abx, a.y + t * aby))
}

/// Nearest point on a polyline: returns (segment index, distance, arc length
/// of the projection measured from the first point).
pub fn project_onto_polyline(p: Waypoint, pts: &[Waypoint]) -> (usize, f64, f64) {
    debug_assert!(pts.len() >= 2);
    let mut best = (0usize, f64::INFINITY, 0.0);
    let mut arc = 0.0;
    for i in 0..pts.len() - 1 {
        let (a, b) = (pts[i], pts[i + 1]);
        let seg_len = dist(a, b);
        let (abx, aby) = (b.x - a.x, b.y - a.y);
        let len2 = abx * abx + aby * aby;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
        };
        let q = Waypoint::new(a.x + t * abx, a.y + t * aby);
        let d = dist(p, q);
        if d < best.1 {
            best = (i, d, arc + t * seg_len);
        }
        arc += seg_len;
    }
    best
}

pub fn polyline_length(pts: &[Waypoint]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Point at arc length `s` (clamped to the polyline extent).
pub fn point_at_arc(pts: &[Waypoint], s: f64) -> Waypoint {
    debug_assert!(pts.len() >= 2);
    if s <= 0.0 {
        return pts[0];
    }
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = dist(w[0], w[1]);
        if acc + seg >= s {
            let t = if seg == 0.0 { 0.0 } else { (s - acc) / seg };
            return Waypoint::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y));
        }
        acc += seg;
    }
    *pts.last().unwrap()
}

/// Direction (radians) of the segment containing arc length `s`.
pub fn direction_at_arc(pts: &[Waypoint], s: f64) -> f64 {
    debug_assert!(pts.len() >= 2);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = dist(w[0], w[1]);
        if acc + seg >= s && seg > 0.0 {
            return math::atan2(w[1].y - w[0].y, w[1].x - w[0].x);
        }
        acc += seg;
    }
    let n = pts.len();
    math::atan2(pts[n - 1].y - pts[n - 2].y, pts[n - 1].x - pts[n - 2].x)
}

/// Resamples a polyline to exactly `n` points uniform in arc length.
/// Endpoints are preserved.
pub fn resample(pts: &[Waypoint], n: usize) -> Vec<Waypoint> {
    debug_assert!(pts.len() >= 2 && n >= 2);
    let total = polyline_length(pts);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        out.push(point_at_arc(pts, s));
    }
    *out.last_mut().unwrap() = *pts.last().unwrap();
    out
}

fn orient(a: Waypoint, b: Waypoint, c: Waypoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Waypoint, b: Waypoint, p: Waypoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Segment intersection with orientation-sign tests. Collinear touching
/// counts as an intersection.
pub fn segments_intersect(a1: Waypoint, a2: Waypoint, b1: Waypoint, b2: Waypoint) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);

    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(b1, b2, a1))
        || (d2 == 0.0 && on_segment(b1, b2, a2))
        || (d3 == 0.0 && on_segment(a1, a2, b1))
        || (d4 == 0.0 && on_segment(a1, a2, b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn wp(x: f64, y: f64) -> Waypoint {
        Waypoint::new(x, y)
    }

    #[test]
    fn local_world_round_trip() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let frame = Pose::new(rng.range(-50.0, 50.0), rng.range(-50.0, 50.0), rng.range(-3.0, 3.0));
            let p = Pose::new(rng.range(-50.0, 50.0), rng.range(-50.0, 50.0), rng.range(-3.0, 3.0));
            let back = frame.to_world(&frame.to_local(&p));
            assert!(math::abs(back.x - p.x) < 1e-9);
            assert!(math::abs(back.y - p.y) < 1e-9);
            assert!(math::abs(math::normalize_angle(back.heading - p.heading)) < 1e-9);
        }
    }

    #[test]
    fn projection_on_straight_line() {
        let pts = [wp(0.0, 0.0), wp(10.0, 0.0)];
        let (seg, d, arc) = project_onto_polyline(wp(3.0, 4.0), &pts);
        assert_eq!(seg, 0);
        assert!(math::abs(d - 4.0) < 1e-12);
        assert!(math::abs(arc - 3.0) < 1e-12);
    }

    #[test]
    fn resample_preserves_endpoints_and_length() {
        let pts: Vec<Waypoint> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.1;
                wp(30.0 * math::cos(t), 30.0 * math::sin(t))
            })
            .collect();
        let r = resample(&pts, 20);
        assert_eq!(r.len(), 20);
        assert_eq!(r[0], pts[0]);
        assert_eq!(r[19], pts[29]);
        let (l0, l1) = (polyline_length(&pts), polyline_length(&r));
        assert!(math::abs(l0 - l1) / l0 < 0.01, "arc length drifted: {l0} vs {l1}");
    }

    #[test]
    fn segment_intersection_cases() {
        // Proper crossing.
        assert!(segments_intersect(wp(0.0, -1.0), wp(0.0, 1.0), wp(-1.0, 0.0), wp(1.0, 0.0)));
        // Disjoint.
        assert!(!segments_intersect(wp(0.0, 0.0), wp(1.0, 0.0), wp(0.0, 1.0), wp(1.0, 1.0)));
        // Endpoint touching counts.
        assert!(segments_intersect(wp(0.0, 0.0), wp(1.0, 0.0), wp(1.0, 0.0), wp(2.0, 5.0)));
        // Collinear overlap counts.
        assert!(segments_intersect(wp(0.0, 0.0), wp(2.0, 0.0), wp(1.0, 0.0), wp(3.0, 0.0)));
    }

    #[test]
    fn intersection_matches_brute_force_sampling() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let a1 = wp(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
            let a2 = wp(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
            let b1 = wp(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
            let b2 = wp(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
            let fast = segments_intersect(a1, a2, b1, b2);
            // Dense parametric sampling as an approximate reference; only
            // check clear-cut cases away from tangency.
            let mut min_gap = f64::INFINITY;
            for i in 0..=40 {
                let t = i as f64 / 40.0;
                let p = wp(a1.x + t * (a2.x - a1.x), a1.y + t * (a2.y - a1.y));
                min_gap = min_gap.min(point_segment_distance(p, b1, b2));
            }
            if min_gap > 0.05 {
                assert!(!fast, "gap {min_gap} but reported intersecting");
            }
            if fast {
                assert!(min_gap < 0.2, "reported intersecting but sampled gap {min_gap}");
            }
        }
    }
}
