//! Road layout and waypoint tracks.
//!
//! The horizontal road spans `x ∈ [-L, L]` with two lanes: the lower lane
//! (center `y = -w/2`, traffic toward `+x`) and the upper lane (center
//! `y = +w/2`, traffic toward `-x`). The ego approaches on the vertical line
//! `x = 0` and turns left into the upper lane along a quarter circle.

use std::f64::consts::FRAC_PI_2;

use crate::config::ScenarioConfig;
use crate::sim::LaneId;

pub type Vec2 = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
enum Segment {
    Line { start: Vec2, dir: Vec2, len: f64 },
    /// Counter-clockwise arc starting at `start_angle`.
    Arc { center: Vec2, radius: f64, start_angle: f64, len: f64 },
}

impl Segment {
    fn len(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } | Segment::Arc { len, .. } => len,
        }
    }

    /// Point and unit tangent at arc length `s` from the segment start.
    fn eval(&self, s: f64) -> (Vec2, Vec2) {
        match *self {
            Segment::Line { start, dir, .. } => {
                ([start[0] + dir[0] * s, start[1] + dir[1] * s], dir)
            }
            Segment::Arc { center, radius, start_angle, .. } => {
                let a = start_angle + s / radius;
                let (sin, cos) = a.sin_cos();
                ([center[0] + radius * cos, center[1] + radius * sin], [-sin, cos])
            }
        }
    }

    /// Distance from `p` to the segment.
    fn distance(&self, p: Vec2) -> f64 {
        match *self {
            Segment::Line { start, dir, len } => {
                let t = ((p[0] - start[0]) * dir[0] + (p[1] - start[1]) * dir[1]).clamp(0.0, len);
                let q = [start[0] + dir[0] * t, start[1] + dir[1] * t];
                (p[0] - q[0]).hypot(p[1] - q[1])
            }
            Segment::Arc { center, radius, start_angle, len } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let mut a = dy.atan2(dx) - start_angle;
                while a < -std::f64::consts::PI {
                    a += 2.0 * std::f64::consts::PI;
                }
                while a > std::f64::consts::PI {
                    a -= 2.0 * std::f64::consts::PI;
                }
                let sweep = len / radius;
                if (0.0..=sweep).contains(&a) {
                    (dx.hypot(dy) - radius).abs()
                } else {
                    let (p0, _) = self.eval(0.0);
                    let (p1, _) = self.eval(len);
                    (p[0] - p0[0]).hypot(p[1] - p0[1]).min((p[0] - p1[0]).hypot(p[1] - p1[1]))
                }
            }
        }
    }
}

/// A sequence of waypoint segments parameterized by arc length.
///
/// Progress below zero extends the first segment backwards (vehicles queued
/// before the lane entry); progress past the end extends the last segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    segments: Vec<Segment>,
    length: f64,
}

impl Track {
    fn new(segments: Vec<Segment>) -> Track {
        let length = segments.iter().map(Segment::len).sum();
        Track { segments, length }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Position and unit tangent at `progress`.
    pub fn pose(&self, progress: f64) -> (Vec2, Vec2) {
        if progress <= 0.0 {
            let (p, t) = self.segments[0].eval(0.0);
            return ([p[0] + t[0] * progress, p[1] + t[1] * progress], t);
        }
        let mut s = progress;
        for seg in &self.segments {
            if s <= seg.len() {
                return seg.eval(s);
            }
            s -= seg.len();
        }
        let last = self.segments.last().expect("track has segments");
        let (p, t) = last.eval(last.len());
        ([p[0] + t[0] * s, p[1] + t[1] * s], t)
    }

    pub fn tangent(&self, progress: f64) -> Vec2 {
        self.pose(progress).1
    }

    /// Distance from `p` to the track, including its straight extensions.
    pub fn lateral_distance(&self, p: Vec2) -> f64 {
        let first = &self.segments[0];
        let (p0, t0) = first.eval(0.0);
        let back = Segment::Line {
            start: [p0[0] - t0[0] * 1e3, p0[1] - t0[1] * 1e3],
            dir: t0,
            len: 1e3,
        };
        let last = self.segments.last().expect("track has segments");
        let (p1, t1) = last.eval(last.len());
        let fwd = Segment::Line { start: p1, dir: t1, len: 1e3 };
        self.segments
            .iter()
            .chain([&back, &fwd])
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Arc-length of the point on the track nearest `p` (straight parts and
    /// arcs handled exactly; extensions ignored).
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut offset = 0.0;
        for seg in &self.segments {
            let n = 64;
            for k in 0..=n {
                let s = seg.len() * k as f64 / n as f64;
                let (q, _) = seg.eval(s);
                let d = (p[0] - q[0]).hypot(p[1] - q[1]);
                if d < best.0 {
                    best = (d, offset + s);
                }
            }
            offset += seg.len();
        }
        best.1
    }
}

/// All tracks of the scenario plus the lane corridors.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub lower: Track,
    pub upper: Track,
    pub ego: Track,
    pub road_half_length: f64,
    pub lane_width: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
}

impl Geometry {
    pub fn new(cfg: &ScenarioConfig) -> Geometry {
        let l = cfg.road_half_length;
        let half = cfg.lane_width / 2.0;
        let r = cfg.turn_radius;
        let turn_start_y = half - r;
        let lower = Track::new(vec![Segment::Line { start: [-l, -half], dir: [1.0, 0.0], len: 2.0 * l }]);
        let upper = Track::new(vec![Segment::Line { start: [l, half], dir: [-1.0, 0.0], len: 2.0 * l }]);
        let ego = Track::new(vec![
            Segment::Line {
                start: [0.0, cfg.ego_start_y],
                dir: [0.0, 1.0],
                len: turn_start_y - cfg.ego_start_y,
            },
            Segment::Arc { center: [-r, turn_start_y], radius: r, start_angle: 0.0, len: r * FRAC_PI_2 },
            Segment::Line { start: [-r, half], dir: [-1.0, 0.0], len: l - r },
        ]);
        Geometry {
            lower,
            upper,
            ego,
            road_half_length: l,
            lane_width: cfg.lane_width,
            vehicle_length: cfg.vehicle_length,
            vehicle_width: cfg.vehicle_width,
        }
    }

    pub fn track(&self, lane: LaneId) -> &Track {
        match lane {
            LaneId::Lower => &self.lower,
            LaneId::Upper => &self.upper,
            LaneId::EgoApproach => &self.ego,
        }
    }

    pub fn lane_center_y(&self, lane: LaneId) -> Option<f64> {
        match lane {
            LaneId::Lower => Some(-self.lane_width / 2.0),
            LaneId::Upper => Some(self.lane_width / 2.0),
            LaneId::EgoApproach => None,
        }
    }

    /// Travel direction along x for a horizontal lane.
    pub fn lane_direction(&self, lane: LaneId) -> f64 {
        match lane {
            LaneId::Lower => 1.0,
            LaneId::Upper => -1.0,
            LaneId::EgoApproach => 0.0,
        }
    }

    /// `(y_min, y_max)` of a horizontal lane corridor.
    pub fn corridor(&self, lane: LaneId) -> Option<(f64, f64)> {
        self.lane_center_y(lane).map(|c| (c - self.lane_width / 2.0, c + self.lane_width / 2.0))
    }

    /// Horizontal lane whose corridor contains `y` (ties to the upper lane).
    pub fn lane_at(&self, y: f64) -> LaneId {
        if y >= 0.0 {
            LaneId::Upper
        } else {
            LaneId::Lower
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::new(&ScenarioConfig::default())
    }

    #[test]
    fn ego_track_layout() {
        let g = geom();
        let len = g.ego.length();
        let expected = 8.0 + 6.0 * FRAC_PI_2 + 24.0;
        assert!((len - expected).abs() < 1e-12);
        let (p, t) = g.ego.pose(0.0);
        assert_eq!(p, [0.0, -12.0]);
        assert_eq!(t, [0.0, 1.0]);
        let (p, t) = g.ego.pose(8.0 + 6.0 * FRAC_PI_2);
        assert!((p[0] + 6.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        assert!((t[0] + 1.0).abs() < 1e-12 && t[1].abs() < 1e-12);
        let (p, _) = g.ego.pose(len);
        assert!((p[0] + 30.0).abs() < 1e-9 && (p[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn tangents_are_unit() {
        let g = geom();
        for k in 0..200 {
            let s = -5.0 + k as f64 * 0.3;
            let t = g.ego.tangent(s);
            assert!((t[0].hypot(t[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_distance_and_projection() {
        let g = geom();
        assert!(g.lower.lateral_distance([5.0, -2.0]) < 1e-12);
        assert!((g.lower.lateral_distance([5.0, -1.0]) - 1.0).abs() < 1e-12);
        // queued vehicles before the lane entry are on the extension
        assert!(g.lower.lateral_distance([-40.0, -2.0]) < 1e-12);
        let (p, _) = g.ego.pose(12.0);
        assert!(g.ego.lateral_distance(p) < 1e-9);
        assert!((g.ego.project(p) - 12.0).abs() < 0.2);
    }
}
