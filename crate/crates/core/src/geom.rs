//! Small 2D geometry helpers shared across the pipeline.

use serde::{Deserialize, Serialize};

/// A point (or vector) in world coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle; `min` and `max` are opposite corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Rect { min, max }
    }

    /// Smallest rectangle containing all points; `None` for an empty slice.
    pub fn bounding(points: &[Point]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect::new(*first, *first);
        for p in &points[1..] {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    /// Inclusive on all edges.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn dist_point_segment(p: &Point, a: &Point, b: &Point) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len_sq = abx * abx + aby * aby;
    if len_sq == 0.0 {
        return p.dist(a);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len_sq;
    let t = t.clamp(0.0, 1.0);
    let proj = Point::new(a.x + t * abx, a.y + t * aby);
    p.dist(&proj)
}

/// Distance from `p` to a polyline given by consecutive vertices.
pub fn dist_point_polyline(p: &Point, vertices: &[Point]) -> f64 {
    match vertices {
        [] => f64::INFINITY,
        [single] => p.dist(single),
        _ => vertices
            .windows(2)
            .map(|w| dist_point_segment(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Even-odd test for `p` inside the simple polygon `vertices` (implicitly
/// closed). Points exactly on an edge count as inside.
pub fn point_in_polygon(p: &Point, vertices: &[Point]) -> bool {
    if vertices.len() < 3 {
        return false;
    }
    // Boundary points first: the crossing test below is unreliable there.
    let on_edge = vertices
        .iter()
        .zip(vertices.iter().cycle().skip(1))
        .take(vertices.len())
        .any(|(a, b)| dist_point_segment(p, a, b) < 1e-12);
    if on_edge {
        return true;
    }
    let mut inside = false;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        let (vi, vj) = (&vertices[i], &vertices[j]);
        if (vi.y > p.y) != (vj.y > p.y) {
            let x_cross = vj.x + (p.y - vj.y) / (vi.y - vj.y) * (vi.x - vj.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Signed area of a simple polygon (positive when counterclockwise).
pub fn polygon_signed_area(vertices: &[Point]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        acc += (vertices[j].x + vertices[i].x) * (vertices[i].y - vertices[j].y);
        j = i;
    }
    acc / 2.0
}

/// Perimeter of a simple polygon (implicitly closed).
pub fn polygon_perimeter(vertices: &[Point]) -> f64 {
    if vertices.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut j = vertices.len() - 1;
    for i in 0..vertices.len() {
        acc += vertices[i].dist(&vertices[j]);
        j = i;
    }
    acc
}

/// Characteristic width of an elongated polygon, `2 * area / perimeter`.
/// For a long rectangle this approaches the short side.
pub fn polygon_width(vertices: &[Point]) -> f64 {
    let per = polygon_perimeter(vertices);
    if per == 0.0 {
        return 0.0;
    }
    2.0 * polygon_signed_area(vertices).abs() / per
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn segment_distance_endpoints_and_interior() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(4.0, 0.0);
        assert_relative_eq!(dist_point_segment(&Point::new(2.0, 3.0), &a, &b), 3.0);
        assert_relative_eq!(dist_point_segment(&Point::new(-3.0, 4.0), &a, &b), 5.0);
        assert_relative_eq!(dist_point_segment(&Point::new(7.0, 4.0), &a, &b), 5.0);
        // Degenerate segment falls back to point distance.
        assert_relative_eq!(dist_point_segment(&Point::new(3.0, 4.0), &a, &a), 5.0);
    }

    #[test]
    fn polygon_containment_and_measures() {
        let square = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        assert!(point_in_polygon(&Point::new(1.0, 1.0), &square));
        assert!(point_in_polygon(&Point::new(0.0, 1.0), &square));
        assert!(point_in_polygon(&Point::new(2.0, 2.0), &square));
        assert!(!point_in_polygon(&Point::new(2.1, 1.0), &square));
        assert_relative_eq!(polygon_signed_area(&square), 4.0);
        assert_relative_eq!(polygon_perimeter(&square), 8.0);
        let road = [
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 3.0),
            Point::new(0.0, 3.0),
        ];
        // Elongated rectangle: characteristic width close to the short side.
        assert_relative_eq!(polygon_width(&road), 2.0 * 30.0 / 26.0);
    }

    #[test]
    fn bounding_rect() {
        let pts = [
            Point::new(1.0, 5.0),
            Point::new(-2.0, 0.5),
            Point::new(3.0, 2.0),
        ];
        let r = Rect::bounding(&pts).unwrap();
        assert_eq!(r.min, Point::new(-2.0, 0.5));
        assert_eq!(r.max, Point::new(3.0, 5.0));
        assert!(r.contains(&Point::new(0.0, 1.0)));
        assert!(!r.contains(&Point::new(0.0, 6.0)));
    }
}
