//! Peg and hole cross-sections and the containment predicate that decides
//! whether a descent inserts or collides.
//!
//! All shapes are convex polygons in millimetres, counter-clockwise, centered
//! at the origin. A round peg is a regular 64-gon with its vertices on the
//! nominal circle.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertices used to approximate a round cross-section.
pub const ROUND_SEGMENTS: usize = 64;

/// Tolerance under which a vertex is treated as lying on the hole boundary.
/// The boundary is part of the hole, so ties resolve toward success.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Clearances of the benchmark grid, largest first.
pub const BENCHMARK_CLEARANCES: [f64; 4] = [2.0, 1.6, 1.0, 0.6];

/// Range of clearances drawn during data generation.
pub const CLEARANCE_RANGE: (f64, f64) = (0.6, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Triangle,
    Hexagon,
    Pentagon,
    Round,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Hexagon,
        ShapeKind::Pentagon,
        ShapeKind::Round,
    ];

    /// Shapes seen during training.
    pub const IN_DISTRIBUTION: [ShapeKind; 3] =
        [ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Hexagon];

    /// Held-out shapes.
    pub const OUT_OF_DISTRIBUTION: [ShapeKind; 2] = [ShapeKind::Pentagon, ShapeKind::Round];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Hexagon => "hexagon",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Round => "round",
        }
    }

    pub fn vertex_count(self) -> usize {
        match self {
            ShapeKind::Square => 4,
            ShapeKind::Triangle => 3,
            ShapeKind::Hexagon => 6,
            ShapeKind::Pentagon => 5,
            ShapeKind::Round => ROUND_SEGMENTS,
        }
    }

    pub fn index(self) -> usize {
        ShapeKind::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn is_in_distribution(self) -> bool {
        ShapeKind::IN_DISTRIBUTION.contains(&self)
    }

    pub fn parse(s: &str) -> Option<ShapeKind> {
        ShapeKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A peg or hole cross-section: side length for polygons, diameter for round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub size_mm: f64,
}

impl Shape {
    pub fn new(kind: ShapeKind, size_mm: f64) -> Result<Self> {
        if !(size_mm.is_finite() && size_mm > 0.0) {
            return Err(Error::InvalidPolygon(format!(
                "characteristic size must be positive, got {size_mm}"
            )));
        }
        Ok(Self { kind, size_mm })
    }

    /// The matching hole for this peg at the given clearance.
    pub fn hole(self, clearance_mm: f64) -> Shape {
        Shape {
            kind: self.kind,
            size_mm: self.size_mm + clearance_mm,
        }
    }

    /// Distance from the center to each vertex of the regular polygon.
    pub fn circumradius(self) -> f64 {
        match self.kind {
            ShapeKind::Round => self.size_mm / 2.0,
            kind => {
                let n = kind.vertex_count() as f64;
                self.size_mm / (2.0 * libm::sin(std::f64::consts::PI / n))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Planar misalignment of the peg relative to the hole: millimetres and
/// degrees about z.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub rz: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, rz: f64) -> Self {
        Self { x, y, rz }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.rz.is_finite()
    }
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Convex polygon, counter-clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl Polygon {
    /// Validates convexity, orientation and non-zero area.
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon(format!("{n} vertices")));
        }
        if vertices.iter().any(|v| !(v.x.is_finite() && v.y.is_finite())) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if cross(b.x - a.x, b.y - a.y, c.x - b.x, c.y - b.y) < 0.0 {
                return Err(Error::InvalidPolygon(format!(
                    "not convex counter-clockwise at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        let poly = Self { vertices };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                cross(a.x, a.y, b.x, b.y)
            })
            .sum();
        twice / 2.0
    }

    /// Edges as `(start, end)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed distance from `p` to the nearest supporting line; positive
    /// inside, zero on the boundary, negative outside.
    pub fn signed_depth(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| {
                let (ex, ey) = (b.x - a.x, b.y - a.y);
                cross(ex, ey, p.x - a.x, p.y - a.y) / (ex * ex + ey * ey).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.signed_depth(p) >= -BOUNDARY_EPS
    }
}

/// Regular polygon centered at the origin. Squares are axis-aligned; every
/// other shape has a vertex on the +y axis.
pub fn make_polygon(shape: Shape) -> Polygon {
    let vertices = match shape.kind {
        ShapeKind::Square => {
            let h = shape.size_mm / 2.0;
            vec![
                Point2::new(h, h),
                Point2::new(-h, h),
                Point2::new(-h, -h),
                Point2::new(h, -h),
            ]
        }
        kind => {
            let n = kind.vertex_count();
            let r = shape.circumradius();
            (0..n)
                .map(|k| {
                    let a = std::f64::consts::FRAC_PI_2
                        + std::f64::consts::TAU * k as f64 / n as f64;
                    Point2::new(r * libm::cos(a), r * libm::sin(a))
                })
                .collect()
        }
    };
    Polygon { vertices }
}

/// Rotates every vertex by `pose.rz` about the origin, then translates.
pub fn transform(poly: &Polygon, pose: Pose) -> Polygon {
    let (s, c) = libm::sincos(pose.rz.to_radians());
    Polygon {
        vertices: poly
            .vertices
            .iter()
            .map(|v| Point2::new(c * v.x - s * v.y + pose.x, s * v.x + c * v.y + pose.y))
            .collect(),
    }
}

/// Smallest depth of any transformed peg vertex inside the hole. Positive
/// means clearance on every side; negative means a collision.
pub fn containment_margin(hole: &Polygon, peg: &Polygon, pose: Pose) -> f64 {
    transform(peg, pose)
        .vertices
        .iter()
        .map(|&v| hole.signed_depth(v))
        .fold(f64::INFINITY, f64::min)
}

/// True when the peg at `pose` lies inside the hole (boundary included).
/// Vertex containment suffices because both polygons are convex.
pub fn fits_inside(hole: &Polygon, peg: &Polygon, pose: Pose) -> bool {
    containment_margin(hole, peg, pose) >= -BOUNDARY_EPS
}

/// Largest translation along +x that still inserts at the given rotation,
/// resolved by bisection to 1e-6 mm.
pub fn max_admissible_offset(shape: Shape, clearance_mm: f64, rz_deg: f64) -> Result<f64> {
    let peg = make_polygon(shape);
    let hole = make_polygon(shape.hole(clearance_mm));
    let at = |t: f64| fits_inside(&hole, &peg, Pose::new(t, 0.0, rz_deg));
    if !at(0.0) {
        return Err(Error::DoesNotFit { rz_deg });
    }
    let (mut lo, mut hi) = (0.0, 2.0 * shape.hole(clearance_mm).circumradius());
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
