use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Euclidean distance from a point to the rectangle; zero inside.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx.hypot(dy)
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point from the first vertex.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    /// Direction of the segment containing the foot point.
    pub heading: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(CoreError::invalid("a polyline needs at least two points"));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let len = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if !(len > 0.0) {
                return Err(CoreError::invalid("polyline has repeated points"));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        Ok(Polyline { points, cumulative })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best: Option<(f64, Projection)> = None;
        for (i, w) in self.points.windows(2).enumerate() {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            let (ex, ey) = (bx - ax, by - ay);
            let len2 = ex * ex + ey * ey;
            let t = (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0);
            let (px, py) = (ax + t * ex, ay + t * ey);
            let d2 = (x - px).powi(2) + (y - py).powi(2);
            if best.as_ref().is_none_or(|(bd, _)| d2 < *bd) {
                let len = len2.sqrt();
                let lateral = (ex * (y - ay) - ey * (x - ax)) / len;
                best = Some((
                    d2,
                    Projection {
                        s: self.cumulative[i] + t * len,
                        lateral,
                        heading: ey.atan2(ex),
                        segment: i,
                    },
                ));
            }
        }
        best.unwrap().1
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.points[i],
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let (ax, ay) = self.points[i];
        let (bx, by) = self.points[i + 1];
        let t = (s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]);
        (ax + t * (bx - ax), ay + t * (by - ay))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self
            .cumulative
            .partition_point(|c| *c <= s)
            .saturating_sub(1)
            .min(self.points.len() - 2);
        let (ax, ay) = self.points[i];
        let (bx, by) = self.points[i + 1];
        (by - ay).atan2(bx - ax)
    }

    /// First and last arc length at which the polyline lies inside `rect`
    /// (segment clipping, exact for straight segments).
    pub fn span_inside(&self, rect: &Rect) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for (i, w) in self.points.windows(2).enumerate() {
            let (ax, ay) = w[0];
            let (dx, dy) = (w[1].0 - ax, w[1].1 - ay);
            let (mut t0, mut t1) = (0.0f64, 1.0f64);
            let mut empty = false;
            for (p, q) in [
                (-dx, ax - rect.x_min),
                (dx, rect.x_max - ax),
                (-dy, ay - rect.y_min),
                (dy, rect.y_max - ay),
            ] {
                if p == 0.0 {
                    if q < 0.0 {
                        empty = true;
                    }
                } else {
                    let r = q / p;
                    if p < 0.0 {
                        t0 = t0.max(r);
                    } else {
                        t1 = t1.min(r);
                    }
                }
            }
            if empty || t0 > t1 {
                continue;
            }
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let (s0, s1) = (self.cumulative[i] + t0 * len, self.cumulative[i] + t1 * len);
            span = Some(match span {
                None => (s0, s1),
                Some((a, _)) => (a, s1),
            });
        }
        span
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_on_straight_line() {
        let line = Polyline::new(vec![(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)]).unwrap();
        let p = line.project(12.5, 1.5);
        assert!((p.s - 12.5).abs() < 1e-12);
        assert!((p.lateral - 1.5).abs() < 1e-12);
        let p = line.project(3.0, -2.0);
        assert!((p.lateral + 2.0).abs() < 1e-12);
        assert_eq!(line.point_at(15.0), (15.0, 0.0));
        assert_eq!(line.point_at(99.0), (20.0, 0.0));
    }

    #[test]
    fn zone_span() {
        let line = Polyline::new(vec![(0.0, 0.0), (120.0, 0.0)]).unwrap();
        let zone = Rect {
            x_min: 80.0,
            x_max: 84.0,
            y_min: -4.0,
            y_max: 4.0,
        };
        let (a, b) = line.span_inside(&zone).unwrap();
        assert_eq!((a, b), (80.0, 84.0));
        assert!((zone.distance(82.0, 9.6) - 5.6).abs() < 1e-12);
        assert_eq!(zone.distance(81.0, 0.0), 0.0);
    }

    #[test]
    fn wrap_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Polyline::new(vec![(0.0, 0.0)]).is_err());
        assert!(Polyline::new(vec![(0.0, 0.0), (0.0, 0.0)]).is_err());
    }
}
