//! Oriented-rectangle overlap by the separating-axis test.

use crate::sim::geometry::Vec2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    /// Unit heading.
    pub heading: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, heading: Vec2, length: f64, width: f64) -> Self {
        OrientedRect { center, heading, half_length: length / 2.0, half_width: width / 2.0 }
    }

    fn normal(&self) -> Vec2 {
        [-self.heading[1], self.heading[0]]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [hx, hy] = self.heading;
        let [nx, ny] = self.normal();
        let (l, w) = (self.half_length, self.half_width);
        let c = self.center;
        [
            [c[0] + hx * l + nx * w, c[1] + hy * l + ny * w],
            [c[0] + hx * l - nx * w, c[1] + hy * l - ny * w],
            [c[0] - hx * l - nx * w, c[1] - hy * l - ny * w],
            [c[0] - hx * l + nx * w, c[1] - hy * l + ny * w],
        ]
    }

    /// Half extent of the rectangle projected on unit axis `a`.
    fn radius_on(&self, a: Vec2) -> f64 {
        let n = self.normal();
        self.half_length * (self.heading[0] * a[0] + self.heading[1] * a[1]).abs()
            + self.half_width * (n[0] * a[0] + n[1] * a[1]).abs()
    }

    /// Strict overlap; touching edges do not count.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let d = [other.center[0] - self.center[0], other.center[1] - self.center[1]];
        let axes = [self.heading, self.normal(), other.heading, other.normal()];
        axes.iter().all(|&a| {
            let dist = (d[0] * a[0] + d[1] * a[1]).abs();
            dist < self.radius_on(a) + other.radius_on(a)
        })
    }
}
