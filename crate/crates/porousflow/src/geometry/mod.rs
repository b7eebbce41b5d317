//! Parametric 2D flow domains with porous inclusions.
//!
//! A [`ShapeSpec`] describes a porous obstacle as a transformed primitive
//! (circle, regular polygon, ellipse) or a union of such primitives.
//! [`build_shape`] turns the spec into a [`Shape`] supporting containment
//! queries and exact signed distances, with transforms applied in the order
//! scale, rotate, translate. [`sample_case`] draws a fixed-size labeled point
//! cloud from a rectangular duct around the shape, densified near the porous
//! interface.

mod sampling;
mod shape;

pub use sampling::{halton_points, sample_case, sample_case_with, SampleCounts, SamplerOptions};
pub use shape::Shape;

use thiserror::Error;

/// Errors from shape construction, domain validation, and sampling.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("shape scale must be positive and finite, got {value}")]
    NonPositiveScale { value: f64 },
    #[error("regular polygons support 3 through 8 sides, got {sides}")]
    UnsupportedPolygon { sides: u32 },
    #[error("ellipse aspect ratio must be positive and finite, got {value}")]
    NonPositiveAspect { value: f64 },
    #[error("composite shapes need at least 2 members, got {members}")]
    CompositeTooSmall { members: usize },
    #[error("invalid domain: {reason}")]
    InvalidDomain { reason: String },
    #[error("shape must sit strictly inside the duct; clearance is {clearance}")]
    ShapeOutsideDomain { clearance: f64 },
    #[error("rejection sampling for {context} gave up after {attempts} attempts")]
    SamplingExhausted { context: &'static str, attempts: usize },
    #[error("{what} count must be positive")]
    ZeroCount { what: &'static str },
    #[error("porous pixel count must satisfy 0 < porous <= total, got {porous}/{total}")]
    BadPorosityCounts { porous: usize, total: usize },
    #[error("sampler option {name} out of range: {value}")]
    BadSamplerOption { name: &'static str, value: f64 },
}

/// Primitive obstacle outline in its canonical frame (unit size, origin
/// centered). Size and placement come from the owning [`ShapeSpec`].
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Unit-radius circle.
    Circle,
    /// Regular polygon with unit circumradius, first vertex at angle 0.
    RegularPolygon { sides: u32 },
    /// Ellipse with semi-axes (1, aspect).
    Ellipse { aspect: f64 },
    /// Union of transformed members; inside means inside any member.
    CompositeUnion(Vec<ShapeSpec>),
}

/// A primitive plus its placement. The world transform maps a canonical
/// point p to `rotate(rotation) * (scale * p) + center + translation`.
/// `center` is the nominal location; `translation` is an extra offset used
/// for augmentation, so related cases can share a center.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub primitive: Primitive,
    pub center: [f64; 2],
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl ShapeSpec {
    /// Circle of the given radius.
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        ShapeSpec {
            primitive: Primitive::Circle,
            center,
            scale: radius,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    /// Regular polygon with the given circumradius and rotation.
    pub fn regular_polygon(center: [f64; 2], sides: u32, circumradius: f64, rotation: f64) -> Self {
        ShapeSpec {
            primitive: Primitive::RegularPolygon { sides },
            center,
            scale: circumradius,
            rotation,
            translation: [0.0, 0.0],
        }
    }

    /// Ellipse with semi-axes (major, major * aspect) and rotation.
    pub fn ellipse(center: [f64; 2], major: f64, aspect: f64, rotation: f64) -> Self {
        ShapeSpec {
            primitive: Primitive::Ellipse { aspect },
            center,
            scale: major,
            rotation,
            translation: [0.0, 0.0],
        }
    }

    /// Union of at least two members, placed in a shared frame.
    pub fn composite(members: Vec<ShapeSpec>) -> Self {
        ShapeSpec {
            primitive: Primitive::CompositeUnion(members),
            center: [0.0, 0.0],
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    /// Returns the spec shifted by the given offset.
    pub fn translated(mut self, offset: [f64; 2]) -> Self {
        self.translation = [self.translation[0] + offset[0], self.translation[1] + offset[1]];
        self
    }
}

/// Compiles a spec into a queryable shape, validating every member.
pub fn build_shape(spec: &ShapeSpec) -> Result<Shape, GeometryError> {
    Shape::build(spec)
}

/// One of the four sides of the rectangular duct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    /// All sides in a fixed order used for deterministic allocation.
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];
}

/// Rectangular duct with labeled inlet and outlet sides; the remaining two
/// sides are walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub inlet: Side,
    pub outlet: Side,
}

impl DomainSpec {
    pub fn new(
        min: [f64; 2],
        max: [f64; 2],
        inlet: Side,
        outlet: Side,
    ) -> Result<Self, GeometryError> {
        let spec = DomainSpec { min, max, inlet, outlet };
        spec.validate()?;
        Ok(spec)
    }

    /// The [0, 2pi]^2 square duct used by the manufactured-solution cases,
    /// flowing left to right.
    pub fn mms_square() -> Self {
        let l = 2.0 * std::f64::consts::PI;
        DomainSpec { min: [0.0, 0.0], max: [l, l], inlet: Side::Left, outlet: Side::Right }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for k in 0..2 {
            if !(self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] < self.max[k]) {
                return Err(GeometryError::InvalidDomain {
                    reason: format!(
                        "extent {k} must satisfy min < max, got [{}, {}]",
                        self.min[k], self.max[k]
                    ),
                });
            }
        }
        if self.inlet == self.outlet {
            return Err(GeometryError::InvalidDomain {
                reason: "inlet and outlet must be different sides".to_string(),
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.height(),
            Side::Bottom | Side::Top => self.width(),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    /// The two wall sides, in the fixed [`Side::ALL`] order.
    pub fn walls(&self) -> [Side; 2] {
        let mut walls = [Side::Left; 2];
        let mut n = 0;
        for side in Side::ALL {
            if side != self.inlet && side != self.outlet {
                walls[n] = side;
                n += 1;
            }
        }
        walls
    }

    /// Boundary role of a duct side.
    pub fn tag_of(&self, side: Side) -> BoundaryTag {
        if side == self.inlet {
            BoundaryTag::Inlet
        } else if side == self.outlet {
            BoundaryTag::Outlet
        } else {
            BoundaryTag::Wall
        }
    }
}

/// Role of a point in the cloud. Boundary points carry exactly one of the
/// four roles in their one-hot encoding; interior points encode as all
/// zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    Inlet,
    Outlet,
    Wall,
    Interface,
}

impl BoundaryTag {
    /// Encoding order: inlet, outlet, wall, porous interface.
    pub fn onehot(self) -> [f64; 4] {
        match self {
            BoundaryTag::Interior => [0.0, 0.0, 0.0, 0.0],
            BoundaryTag::Inlet => [1.0, 0.0, 0.0, 0.0],
            BoundaryTag::Outlet => [0.0, 1.0, 0.0, 0.0],
            BoundaryTag::Wall => [0.0, 0.0, 1.0, 0.0],
            BoundaryTag::Interface => [0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Decodes a one-hot vector; all zeros means interior.
    pub fn from_onehot(v: [f64; 4]) -> Option<Self> {
        let tags =
            [BoundaryTag::Inlet, BoundaryTag::Outlet, BoundaryTag::Wall, BoundaryTag::Interface];
        let mut found = BoundaryTag::Interior;
        let mut ones = 0;
        for (x, tag) in v.iter().zip(tags) {
            match *x {
                0.0 => {}
                1.0 => {
                    found = tag;
                    ones += 1;
                }
                _ => return None,
            }
        }
        (ones <= 1).then_some(found)
    }

    pub fn is_boundary(self) -> bool {
        self != BoundaryTag::Interior
    }
}

/// Porosity estimated from a pixel count: porous pixels over total pixels.
pub fn porosity_from_counts(porous: usize, total: usize) -> Result<f64, GeometryError> {
    if total == 0 || porous == 0 || porous > total {
        return Err(GeometryError::BadPorosityCounts { porous, total });
    }
    Ok(porous as f64 / total as f64)
}

/// Splits `total` items over groups proportionally to nonnegative weights,
/// using the largest-remainder rule. Ties in the remainders resolve toward
/// lower indices, making the allocation deterministic.
///
/// Panics if weights are empty, negative, non-finite, or all zero; callers
/// control the weights, so a bad weight is a programming error.
pub fn largest_remainder_allocation(weights: &[f64], total: usize) -> Vec<usize> {
    assert!(!weights.is_empty(), "allocation needs at least one weight");
    assert!(
        weights.iter().all(|w| w.is_finite() && *w >= 0.0),
        "allocation weights must be finite and nonnegative"
    );
    let sum: f64 = weights.iter().sum();
    assert!(sum > 0.0, "allocation weights must not all be zero");

    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn porosity_is_the_pixel_ratio() {
        assert_eq!(porosity_from_counts(50, 100).unwrap(), 0.5);
        assert_eq!(porosity_from_counts(100, 100).unwrap(), 1.0);
        assert_eq!(porosity_from_counts(1, 1000).unwrap(), 0.001);
        assert!(porosity_from_counts(5, 0).is_err());
        assert!(porosity_from_counts(0, 10).is_err());
        assert!(porosity_from_counts(11, 10).is_err());
    }

    #[test]
    fn largest_remainder_matches_hand_allocation() {
        assert_eq!(largest_remainder_allocation(&[120.0, 40.0, 200.0, 40.0], 50), [15, 5, 25, 5]);
        assert_eq!(largest_remainder_allocation(&[1.0, 1.0, 1.0], 7), [3, 2, 2]);
        assert_eq!(largest_remainder_allocation(&[2.0, 2.0, 4.0, 4.0], 90), [15, 15, 30, 30]);
    }

    #[test]
    fn allocation_always_sums_to_the_total() {
        let weights = [0.3, 2.7, 1.1, 0.0, 5.9];
        for total in 0..200 {
            let counts = largest_remainder_allocation(&weights, total);
            assert_eq!(counts.iter().sum::<usize>(), total);
            assert_eq!(counts[3], 0, "zero weight never receives items");
        }
    }

    #[test]
    fn onehot_round_trips_every_tag() {
        for tag in [
            BoundaryTag::Interior,
            BoundaryTag::Inlet,
            BoundaryTag::Outlet,
            BoundaryTag::Wall,
            BoundaryTag::Interface,
        ] {
            let v = tag.onehot();
            let total: f64 = v.iter().sum();
            assert_eq!(total, if tag.is_boundary() { 1.0 } else { 0.0 });
            assert_eq!(BoundaryTag::from_onehot(v), Some(tag));
        }
        assert_eq!(BoundaryTag::from_onehot([1.0, 1.0, 0.0, 0.0]), None);
        assert_eq!(BoundaryTag::from_onehot([0.5, 0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn domain_labels_sides_and_walls() {
        let d = DomainSpec::mms_square();
        assert_eq!(d.tag_of(Side::Left), BoundaryTag::Inlet);
        assert_eq!(d.tag_of(Side::Right), BoundaryTag::Outlet);
        assert_eq!(d.tag_of(Side::Top), BoundaryTag::Wall);
        assert_eq!(d.walls(), [Side::Bottom, Side::Top]);
        assert!(DomainSpec::new([0.0, 0.0], [1.0, 1.0], Side::Left, Side::Left).is_err());
        assert!(DomainSpec::new([1.0, 0.0], [0.0, 1.0], Side::Left, Side::Right).is_err());
    }
}
