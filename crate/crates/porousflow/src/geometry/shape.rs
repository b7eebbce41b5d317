//! Compiled shapes: exact signed distances and boundary sampling.

use rand::Rng;

use super::{GeometryError, Primitive, ShapeSpec};

/// Attempts before boundary sampling on a union reports failure.
const BOUNDARY_SAMPLE_ATTEMPTS: usize = 1_000_000;

/// Tolerance treating a point as on (not inside) another member's boundary.
const SHARED_BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
enum Kind {
    Circle,
    /// Counterclockwise vertices on the unit circumcircle.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Canonical semi-axes (1, aspect).
    Ellipse { semi: [f64; 2] },
}

/// A primitive with its accumulated world transform.
#[derive(Clone, Debug)]
struct Placed {
    kind: Kind,
    scale: f64,
    cos_rot: f64,
    sin_rot: f64,
    offset: [f64; 2],
}

impl Placed {
    /// World point to the canonical frame.
    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.offset[0];
        let dy = p[1] - self.offset[1];
        [
            (self.cos_rot * dx + self.sin_rot * dy) / self.scale,
            (-self.sin_rot * dx + self.cos_rot * dy) / self.scale,
        ]
    }

    /// Canonical point to world coordinates.
    fn to_world(&self, q: [f64; 2]) -> [f64; 2] {
        let sx = self.scale * q[0];
        let sy = self.scale * q[1];
        [
            self.cos_rot * sx - self.sin_rot * sy + self.offset[0],
            self.sin_rot * sx + self.cos_rot * sy + self.offset[1],
        ]
    }

    /// Exact signed distance; the uniform scale turns canonical distances
    /// into world distances.
    fn signed_distance(&self, p: [f64; 2]) -> f64 {
        let q = self.to_local(p);
        let canonical = match &self.kind {
            Kind::Circle => q[0].hypot(q[1]) - 1.0,
            Kind::Polygon { vertices } => polygon_signed_distance(vertices, q),
            Kind::Ellipse { semi } => ellipse_signed_distance(*semi, q),
        };
        canonical * self.scale
    }

    fn perimeter(&self) -> f64 {
        let canonical = match &self.kind {
            Kind::Circle => std::f64::consts::TAU,
            Kind::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let side = 2.0 * (std::f64::consts::PI / vertices.len() as f64).sin();
                n * side
            }
            Kind::Ellipse { semi } => {
                // Ramanujan's approximation; only used as a sampling weight.
                let (a, b) = (semi[0], semi[1]);
                std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt())
            }
        };
        canonical * self.scale
    }

    /// Uniform-by-arclength point on the canonical outline.
    fn sample_boundary_local<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        match &self.kind {
            Kind::Circle => {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                [t.cos(), t.sin()]
            }
            Kind::Polygon { vertices } => {
                // Regular polygon: every edge has the same length.
                let edge = rng.random_range(0..vertices.len());
                let a = vertices[edge];
                let b = vertices[(edge + 1) % vertices.len()];
                let t = rng.random_range(0.0..1.0);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            }
            Kind::Ellipse { semi } => {
                // Rejection on the local speed makes the parameter draw
                // uniform in arclength.
                let (a, b) = (semi[0], semi[1]);
                let top = a.max(b);
                loop {
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    let speed = (a * t.sin()).hypot(b * t.cos());
                    if rng.random_range(0.0..1.0) * top <= speed {
                        return [a * t.cos(), b * t.sin()];
                    }
                }
            }
        }
    }

    /// Axis-aligned bounding box in world coordinates.
    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match &self.kind {
            Kind::Circle => {
                let r = self.scale;
                (
                    [self.offset[0] - r, self.offset[1] - r],
                    [self.offset[0] + r, self.offset[1] + r],
                )
            }
            Kind::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    let w = self.to_world(*v);
                    for k in 0..2 {
                        lo[k] = lo[k].min(w[k]);
                        hi[k] = hi[k].max(w[k]);
                    }
                }
                (lo, hi)
            }
            Kind::Ellipse { semi } => {
                let a = semi[0] * self.scale;
                let b = semi[1] * self.scale;
                let ex = (a * self.cos_rot).hypot(b * self.sin_rot);
                let ey = (a * self.sin_rot).hypot(b * self.cos_rot);
                (
                    [self.offset[0] - ex, self.offset[1] - ey],
                    [self.offset[0] + ex, self.offset[1] + ey],
                )
            }
        }
    }
}

/// A compiled obstacle: one or more placed primitives treated as a union.
#[derive(Clone, Debug)]
pub struct Shape {
    members: Vec<Placed>,
}

impl Shape {
    pub(crate) fn build(spec: &ShapeSpec) -> Result<Shape, GeometryError> {
        let root = Placed {
            kind: Kind::Circle, // placeholder transform carrier
            scale: 1.0,
            cos_rot: 1.0,
            sin_rot: 0.0,
            offset: [0.0, 0.0],
        };
        let mut members = Vec::new();
        place(spec, &root, &mut members)?;
        Ok(Shape { members })
    }

    /// Signed distance to the porous interface: negative inside, positive
    /// outside, zero on the boundary. Unions take the minimum over members.
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        self.members
            .iter()
            .map(|m| m.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.signed_distance(p) < 0.0
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in &self.members {
            let (mlo, mhi) = m.bounding_box();
            for k in 0..2 {
                lo[k] = lo[k].min(mlo[k]);
                hi[k] = hi[k].max(mhi[k]);
            }
        }
        (lo, hi)
    }

    /// Bounding-box diagonal, the size measure used by the densified
    /// sampler.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    }

    /// Random point on the union's interface. Members are chosen by
    /// perimeter and candidates strictly inside another member are
    /// rejected, so the result always lies on the outline of the union.
    pub fn sample_boundary_point<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<[f64; 2], GeometryError> {
        let perimeters: Vec<f64> = self.members.iter().map(Placed::perimeter).collect();
        let total: f64 = perimeters.iter().sum();
        for _ in 0..BOUNDARY_SAMPLE_ATTEMPTS {
            let mut pick = rng.random_range(0.0..total);
            let mut index = self.members.len() - 1;
            for (i, p) in perimeters.iter().enumerate() {
                if pick < *p {
                    index = i;
                    break;
                }
                pick -= p;
            }
            let local = self.members[index].sample_boundary_local(rng);
            let world = self.members[index].to_world(local);
            let covered = self
                .members
                .iter()
                .enumerate()
                .any(|(j, m)| j != index && m.signed_distance(world) < -SHARED_BOUNDARY_TOLERANCE);
            if !covered {
                return Ok(world);
            }
        }
        Err(GeometryError::SamplingExhausted {
            context: "union boundary point",
            attempts: BOUNDARY_SAMPLE_ATTEMPTS,
        })
    }
}

/// Validates and flattens a spec, composing each member's transform with
/// its parent's.
fn place(spec: &ShapeSpec, parent: &Placed, out: &mut Vec<Placed>) -> Result<(), GeometryError> {
    if !(spec.scale.is_finite() && spec.scale > 0.0) {
        return Err(GeometryError::NonPositiveScale { value: spec.scale });
    }
    let own_offset =
        [spec.center[0] + spec.translation[0], spec.center[1] + spec.translation[1]];
    let (sin, cos) = spec.rotation.sin_cos();
    let combined = Placed {
        kind: Kind::Circle, // replaced below for leaf primitives
        scale: parent.scale * spec.scale,
        cos_rot: parent.cos_rot * cos - parent.sin_rot * sin,
        sin_rot: parent.sin_rot * cos + parent.cos_rot * sin,
        offset: parent.to_world(own_offset),
    };
    match &spec.primitive {
        Primitive::Circle => out.push(Placed { kind: Kind::Circle, ..combined }),
        Primitive::RegularPolygon { sides } => {
            if !(3..=8).contains(sides) {
                return Err(GeometryError::UnsupportedPolygon { sides: *sides });
            }
            let vertices = (0..*sides)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / *sides as f64;
                    [t.cos(), t.sin()]
                })
                .collect();
            out.push(Placed { kind: Kind::Polygon { vertices }, ..combined });
        }
        Primitive::Ellipse { aspect } => {
            if !(aspect.is_finite() && *aspect > 0.0) {
                return Err(GeometryError::NonPositiveAspect { value: *aspect });
            }
            out.push(Placed { kind: Kind::Ellipse { semi: [1.0, *aspect] }, ..combined });
        }
        Primitive::CompositeUnion(members) => {
            if members.len() < 2 {
                return Err(GeometryError::CompositeTooSmall { members: members.len() });
            }
            for member in members {
                place(member, &combined, out)?;
            }
        }
    }
    Ok(())
}

/// Exact signed distance to a convex polygon given counterclockwise
/// vertices: the distance to the nearest edge segment, negative when the
/// point is on the left of every edge.
fn polygon_signed_distance(vertices: &[[f64; 2]], q: [f64; 2]) -> f64 {
    let mut best = f64::INFINITY;
    let mut inside = true;
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        let e = [b[0] - a[0], b[1] - a[1]];
        let w = [q[0] - a[0], q[1] - a[1]];
        let t = ((w[0] * e[0] + w[1] * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        let dx = w[0] - t * e[0];
        let dy = w[1] - t * e[1];
        best = best.min(dx.hypot(dy));
        if e[0] * w[1] - e[1] * w[0] < 0.0 {
            inside = false;
        }
    }
    if inside {
        -best
    } else {
        best
    }
}

/// Exact signed distance to an axis-aligned ellipse centered at the origin.
fn ellipse_signed_distance(semi: [f64; 2], q: [f64; 2]) -> f64 {
    let closest = ellipse_closest_point(semi, q);
    let dist = (q[0] - closest[0]).hypot(q[1] - closest[1]);
    let level = (q[0] / semi[0]).powi(2) + (q[1] / semi[1]).powi(2);
    if level < 1.0 {
        -dist
    } else {
        dist
    }
}

/// Closest point on the ellipse outline, solved in the first quadrant with
/// a bracketed bisection on the Lagrange parameter. The bracket endpoints
/// come from bounding the constraint function, so the iteration cannot
/// escape or diverge.
fn ellipse_closest_point(semi: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    // Reduce to the first quadrant with the major axis first.
    let flip = semi[0] < semi[1];
    let (e0, e1) = if flip { (semi[1], semi[0]) } else { (semi[0], semi[1]) };
    let (y0, s0) = (q[if flip { 1 } else { 0 }].abs(), q[if flip { 1 } else { 0 }].signum());
    let (y1, s1) = (q[if flip { 0 } else { 1 }].abs(), q[if flip { 0 } else { 1 }].signum());

    let (x0, x1) = if y1 > 0.0 {
        if y0 > 0.0 {
            // Solve f(t) = (e0 y0 / (t + e0^2))^2 + (e1 y1 / (t + e1^2))^2 - 1 = 0,
            // strictly decreasing on (-e1^2, inf) with a sign change inside
            // [lo, hi] by construction.
            let f = |t: f64| {
                let a = e0 * y0 / (t + e0 * e0);
                let b = e1 * y1 / (t + e1 * e1);
                a * a + b * b - 1.0
            };
            let mut lo = -e1 * e1 + e1 * y1;
            let mut hi = -e1 * e1 + (e0 * y0).hypot(e1 * y1);
            for _ in 0..120 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            (e0 * e0 * y0 / (t + e0 * e0), e1 * e1 * y1 / (t + e1 * e1))
        } else {
            (0.0, e1)
        }
    } else {
        // On the major axis the closest point leaves the axis while the
        // query sits inside the evolute.
        let critical = (e0 * e0 - e1 * e1) / e0;
        if y0 < critical {
            let x0 = e0 * e0 * y0 / (e0 * e0 - e1 * e1);
            let x1 = e1 * (1.0 - (x0 / e0) * (x0 / e0)).max(0.0).sqrt();
            (x0, x1)
        } else {
            (e0, 0.0)
        }
    };

    let restore = |x0: f64, x1: f64| {
        let sx0 = if s0 == 0.0 { 1.0 } else { s0 };
        let sx1 = if s1 == 0.0 { 1.0 } else { s1 };
        if flip {
            [sx1 * x1, sx0 * x0]
        } else {
            [sx0 * x0, sx1 * x1]
        }
    };
    restore(x0, x1)
}
