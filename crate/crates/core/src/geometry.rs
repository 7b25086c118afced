//! Oriented and axis-aligned rectangles with the two IOU variants used
//! throughout the pipeline.
//!
//! An [`OrientedRect`] is the 5D grasp rectangle `{x, y, w, h, theta}`: center
//! in pixels, gripper opening extent `w`, gripper plate extent `h`, and the
//! opening direction `theta` in radians. A parallel-jaw grasp is invariant
//! under a half-turn, so `theta` is always stored normalized into `[0, pi)`.
//!
//! Rotated IOU is computed exactly by convex polygon clipping rather than
//! rasterization, which keeps it deterministic and resolution independent.

use crate::error::{Error, Result};

/// One 2D point in pixel coordinates.
pub type Point = [f64; 2];

/// Normalize an angle into `[0, pi)` under the half-turn equivalence.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(std::f64::consts::PI);
    // rem_euclid may return exactly pi when theta is a tiny negative number.
    if r >= std::f64::consts::PI {
        0.0
    } else {
        r
    }
}

/// Fold an angle difference into `(-pi/2, pi/2]` under the half-turn equivalence.
pub fn wrap_half_turn(delta: f64) -> f64 {
    let r = delta.rem_euclid(std::f64::consts::PI);
    if r > std::f64::consts::FRAC_PI_2 {
        r - std::f64::consts::PI
    } else {
        r
    }
}

/// Oriented grasp rectangle: center, opening extent `w`, plate extent `h`,
/// opening direction `theta` in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedRect {
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidSize { w, h });
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The four corners in counterclockwise order.
    ///
    /// The first edge (`p1 -> p2`) runs along the gripper plate (`h`), the
    /// second (`p2 -> p3`) along the opening (`w`), so
    /// [`rect_from_vertices`] applied to the result reproduces `self` exactly.
    pub fn vertices(&self) -> [Point; 4] {
        let (sin, cos) = self.theta.sin_cos();
        let ux = cos * self.w * 0.5;
        let uy = sin * self.w * 0.5;
        let vx = -sin * self.h * 0.5;
        let vy = cos * self.h * 0.5;
        [
            [self.x + ux - vx, self.y + uy - vy],
            [self.x + ux + vx, self.y + uy + vy],
            [self.x - ux + vx, self.y - uy + vy],
            [self.x - ux - vx, self.y - uy - vy],
        ]
    }

    /// Tightest axis-aligned box containing all four vertices.
    pub fn aabb(&self) -> AxisRect {
        let vs = self.vertices();
        let mut min = vs[0];
        let mut max = vs[0];
        for v in &vs[1..] {
            min[0] = min[0].min(v[0]);
            min[1] = min[1].min(v[1]);
            max[0] = max[0].max(v[0]);
            max[1] = max[1].max(v[1]);
        }
        AxisRect {
            x1: min[0],
            y1: min[1],
            x2: max[0],
            y2: max[1],
        }
    }

    /// True when `p` lies inside the rectangle (boundary inclusive).
    pub fn contains(&self, p: Point) -> bool {
        let (sin, cos) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let along = dx * cos + dy * sin;
        let across = -dx * sin + dy * cos;
        along.abs() <= self.w * 0.5 && across.abs() <= self.h * 0.5
    }
}

/// Axis-aligned rectangle in corner form; `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl AxisRect {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidCorners);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        [(self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5]
    }

    /// Intersection area with another axis-aligned rectangle.
    pub fn intersection_area(&self, other: &AxisRect) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection-over-union of two axis-aligned rectangles.
pub fn axis_iou(a: &AxisRect, b: &AxisRect) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Build an [`OrientedRect`] from four corners.
///
/// Edge convention: `p1 -> p2` is the gripper plate (`h`), `p2 -> p3` the
/// opening (`w`); `theta` is the direction of `p2 -> p3` normalized into
/// `[0, pi)`. Opposite edge lengths may differ by up to 5% (relative to their
/// mean) to accommodate hand-labelled near-rectangles; the center is the mean
/// of the four corners.
pub fn rect_from_vertices(points: &[Point; 4]) -> Result<OrientedRect> {
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite);
    }
    let edge = |i: usize, j: usize| -> f64 {
        let dx = points[j][0] - points[i][0];
        let dy = points[j][1] - points[i][1];
        (dx * dx + dy * dy).sqrt()
    };
    let e01 = edge(0, 1);
    let e12 = edge(1, 2);
    let e23 = edge(2, 3);
    let e30 = edge(3, 0);
    let check = |a: f64, b: f64| -> Result<()> {
        let mean = (a + b) * 0.5;
        if mean <= 0.0 || (a - b).abs() > 0.05 * mean {
            Err(Error::NotARectangle { a, b })
        } else {
            Ok(())
        }
    };
    check(e01, e23)?;
    check(e12, e30)?;

    let cx = points.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let theta = (points[2][1] - points[1][1]).atan2(points[2][0] - points[1][0]);
    OrientedRect::new(cx, cy, e12, e01, theta)
}

/// Exact intersection-over-union of two oriented rectangles via convex
/// polygon clipping (Sutherland–Hodgman) and the shoelace area formula.
pub fn rotated_iou(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Area of the convex intersection polygon of two oriented rectangles.
pub fn intersection_area(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let mut poly: Vec<Point> = a.vertices().to_vec();
    let clip = b.vertices();
    // Clip successively against each (counterclockwise) edge of `b`.
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        let p = clip[i];
        let q = clip[(i + 1) % 4];
        poly = clip_against_edge(&poly, p, q);
    }
    polygon_area(&poly)
}

fn clip_against_edge(poly: &[Point], p: Point, q: Point) -> Vec<Point> {
    // Keep the half-plane to the left of p -> q (interior of a CCW polygon).
    let side = |v: Point| (q[0] - p[0]) * (v[1] - p[1]) - (q[1] - p[1]) * (v[0] - p[0]);
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let s_cur = side(cur);
        let s_next = side(next);
        if s_cur >= 0.0 {
            out.push(cur);
        }
        if (s_cur > 0.0 && s_next < 0.0) || (s_cur < 0.0 && s_next > 0.0) {
            let t = s_cur / (s_cur - s_next);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc.abs() * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

    fn sorted_points(mut pts: Vec<Point>) -> Vec<Point> {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts
    }

    #[test]
    fn vertices_axis_aligned() {
        let r = OrientedRect::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        let got = sorted_points(r.vertices().to_vec());
        let want = sorted_points(vec![[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]]);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn vertices_quarter_turn() {
        let r = OrientedRect::new(0.0, 0.0, 4.0, 2.0, FRAC_PI_2).unwrap();
        let got = sorted_points(r.vertices().to_vec());
        let want = sorted_points(vec![[1.0, 2.0], [-1.0, 2.0], [-1.0, -2.0], [1.0, -2.0]]);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn vertices_diagonal_square() {
        // Hand-computed with the rotation matrix at theta = pi/4.
        let r = OrientedRect::new(1.0, 1.0, 2.0, 2.0, FRAC_PI_4).unwrap();
        let got = sorted_points(r.vertices().to_vec());
        let want = sorted_points(vec![
            [1.0, 1.0 + SQRT_2],
            [1.0 - SQRT_2, 1.0],
            [1.0, 1.0 - SQRT_2],
            [1.0 + SQRT_2, 1.0],
        ]);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g[0], w[0], epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn vertex_mean_is_center() {
        let r = OrientedRect::new(3.7, -1.2, 5.0, 2.5, 1.1).unwrap();
        let vs = r.vertices();
        let cx = vs.iter().map(|p| p[0]).sum::<f64>() / 4.0;
        let cy = vs.iter().map(|p| p[1]).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(cx, r.x, epsilon = 1e-9);
        assert_abs_diff_eq!(cy, r.y, epsilon = 1e-9);
    }

    #[test]
    fn from_vertices_edge_convention() {
        let pts = [[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]];
        let r = rect_from_vertices(&pts).unwrap();
        assert_abs_diff_eq!(r.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.h, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.w, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn from_vertices_rejects_nan() {
        let pts = [[f64::NAN, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]];
        assert!(matches!(rect_from_vertices(&pts), Err(Error::NonFinite)));
    }

    #[test]
    fn from_vertices_rejects_non_rectangle() {
        let pts = [[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [-1.0, 2.0]];
        assert!(matches!(
            rect_from_vertices(&pts),
            Err(Error::NotARectangle { .. })
        ));
    }

    #[test]
    fn axis_iou_cases() {
        let a = AxisRect::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(axis_iou(&a, &a), 1.0, epsilon = 1e-15);
        let b = AxisRect::new(3.0, 3.0, 4.0, 4.0).unwrap();
        assert_eq!(axis_iou(&a, &b), 0.0);
        let c = AxisRect::new(1.0, 1.0, 3.0, 3.0).unwrap();
        // intersection 1, union 7
        assert_abs_diff_eq!(axis_iou(&a, &c), 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_iou_perpendicular_congruent() {
        let a = OrientedRect::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        let b = OrientedRect::new(0.0, 0.0, 4.0, 2.0, FRAC_PI_2).unwrap();
        // intersection 4, union 12
        assert_abs_diff_eq!(rotated_iou(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_iou_identity_and_disjoint() {
        let a = OrientedRect::new(5.0, 5.0, 3.0, 1.0, 0.7).unwrap();
        assert_abs_diff_eq!(rotated_iou(&a, &a), 1.0, epsilon = 1e-12);
        let b = OrientedRect::new(100.0, 100.0, 3.0, 1.0, 0.7).unwrap();
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn rotated_iou_matches_axis_iou_when_unrotated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = OrientedRect::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
                0.0,
            )
            .unwrap();
            let b = OrientedRect::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
                0.0,
            )
            .unwrap();
            let expected = axis_iou(&a.aabb(), &b.aabb());
            assert_abs_diff_eq!(rotated_iou(&a, &b), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn aabb_cases() {
        let r = OrientedRect::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        let bb = r.aabb();
        assert_abs_diff_eq!(bb.x1, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bb.y1, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bb.x2, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bb.y2, 1.0, epsilon = 1e-12);

        let sq = OrientedRect::new(0.0, 0.0, 2.0, 2.0, FRAC_PI_4).unwrap();
        let bb = sq.aabb();
        assert_abs_diff_eq!(bb.x1, -SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(bb.x2, SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_on_random_rects() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let r = OrientedRect::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(0.1..50.0),
                rng.random_range(0.1..50.0),
                rng.random_range(-10.0..10.0),
            )
            .unwrap();
            let back = rect_from_vertices(&r.vertices()).unwrap();
            assert_abs_diff_eq!(back.x, r.x, epsilon = 1e-6);
            assert_abs_diff_eq!(back.y, r.y, epsilon = 1e-6);
            assert_abs_diff_eq!(back.w, r.w, epsilon = 1e-6);
            assert_abs_diff_eq!(back.h, r.h, epsilon = 1e-6);
            assert!(wrap_half_turn(back.theta - r.theta).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            x1 in -10.0..10.0f64, y1 in -10.0..10.0f64,
            w1 in 0.2..8.0f64, h1 in 0.2..8.0f64, t1 in 0.0..PI,
            x2 in -10.0..10.0f64, y2 in -10.0..10.0f64,
            w2 in 0.2..8.0f64, h2 in 0.2..8.0f64, t2 in 0.0..PI,
        ) {
            let a = OrientedRect::new(x1, y1, w1, h1, t1).unwrap();
            let b = OrientedRect::new(x2, y2, w2, h2, t2).unwrap();
            let ab = rotated_iou(&a, &b);
            let ba = rotated_iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn vertices_inside_aabb(
            x in -10.0..10.0f64, y in -10.0..10.0f64,
            w in 0.2..8.0f64, h in 0.2..8.0f64, t in 0.0..PI,
        ) {
            let r = OrientedRect::new(x, y, w, h, t).unwrap();
            let bb = r.aabb();
            for v in r.vertices() {
                prop_assert!(v[0] >= bb.x1 - 1e-9 && v[0] <= bb.x2 + 1e-9);
                prop_assert!(v[1] >= bb.y1 - 1e-9 && v[1] <= bb.y2 + 1e-9);
            }
        }
    }
}
