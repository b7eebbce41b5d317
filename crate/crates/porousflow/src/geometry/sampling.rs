//! Fixed-size point-cloud sampling with interface densification.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{largest_remainder_allocation, BoundaryTag, DomainSpec, GeometryError, Shape, Side};
use crate::dataset::{CaseMeta, PointCloudCase, PointRecord};

/// Requested cloud sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleCounts {
    pub interior: usize,
    pub boundary: usize,
}

/// Tunable sampler behavior. Defaults follow the densification rule used
/// throughout: 40% of interior points cluster around the porous interface
/// with a Gaussian spread of 5% of the duct height, and a quarter of the
/// boundary budget lands on the interface itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    /// Fraction of interior points drawn from the interface annulus.
    pub interface_mixture_weight: f64,
    /// Gaussian spread around the interface as a fraction of duct height.
    pub interface_sigma_fraction: f64,
    /// Fraction of boundary points placed on the porous interface.
    pub interface_boundary_quota: f64,
    /// Rejection-sampling attempts before giving up loudly.
    pub max_attempts: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            interface_mixture_weight: 0.4,
            interface_sigma_fraction: 0.05,
            interface_boundary_quota: 0.25,
            max_attempts: 1_000_000,
        }
    }
}

impl SamplerOptions {
    fn validate(&self) -> Result<(), GeometryError> {
        let fraction_checks = [
            ("interface_mixture_weight", self.interface_mixture_weight),
            ("interface_boundary_quota", self.interface_boundary_quota),
        ];
        for (name, value) in fraction_checks {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(GeometryError::BadSamplerOption { name, value });
            }
        }
        if !(self.interface_sigma_fraction.is_finite() && self.interface_sigma_fraction > 0.0) {
            return Err(GeometryError::BadSamplerOption {
                name: "interface_sigma_fraction",
                value: self.interface_sigma_fraction,
            });
        }
        Ok(())
    }
}

/// Samples a labeled point cloud with the default options.
pub fn sample_case(
    domain: &DomainSpec,
    shape: &Shape,
    counts: SampleCounts,
    seed: u64,
) -> Result<PointCloudCase, GeometryError> {
    sample_case_with(domain, shape, counts, &SamplerOptions::default(), seed)
}

/// Samples exactly `counts.interior` interior and `counts.boundary`
/// boundary points. Interior points mix uniform draws over the duct with
/// Gaussian draws anchored on the porous interface; boundary points split
/// between the duct sides (proportional to side length) and a fixed quota
/// on the interface. Identical inputs and seed give identical clouds.
pub fn sample_case_with(
    domain: &DomainSpec,
    shape: &Shape,
    counts: SampleCounts,
    options: &SamplerOptions,
    seed: u64,
) -> Result<PointCloudCase, GeometryError> {
    domain.validate()?;
    options.validate()?;
    if counts.interior == 0 {
        return Err(GeometryError::ZeroCount { what: "interior" });
    }
    if counts.boundary == 0 {
        return Err(GeometryError::ZeroCount { what: "boundary" });
    }

    let (lo, hi) = shape.bounding_box();
    let clearance = (lo[0] - domain.min[0])
        .min(lo[1] - domain.min[1])
        .min(domain.max[0] - hi[0])
        .min(domain.max[1] - hi[1]);
    if clearance <= 0.0 {
        return Err(GeometryError::ShapeOutsideDomain { clearance });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sigma = options.interface_sigma_fraction * domain.height();
    let mut points = Vec::with_capacity(counts.interior + counts.boundary);

    for _ in 0..counts.interior {
        let near = rng.random_range(0.0..1.0) < options.interface_mixture_weight;
        let p = if near {
            annulus_point(&mut rng, shape, domain, sigma, options.max_attempts)?
        } else {
            [
                rng.random_range(domain.min[0]..domain.max[0]),
                rng.random_range(domain.min[1]..domain.max[1]),
            ]
        };
        let sdf = shape.signed_distance(p);
        points.push(PointRecord {
            coords: p.to_vec(),
            chi: u8::from(sdf < 0.0),
            sdf,
            boundary: BoundaryTag::Interior,
            darcy: 0.0,
            forchheimer: 0.0,
        });
    }

    let interface_quota = ((options.interface_boundary_quota * counts.boundary as f64).round()
        as usize)
        .min(counts.boundary);
    let side_total = counts.boundary - interface_quota;
    let side_lengths: Vec<f64> = Side::ALL.iter().map(|s| domain.side_length(*s)).collect();
    let per_side = largest_remainder_allocation(&side_lengths, side_total);

    for (side, quota) in Side::ALL.into_iter().zip(per_side) {
        for _ in 0..quota {
            let p = side_point(domain, side, &mut rng);
            points.push(PointRecord {
                coords: p.to_vec(),
                chi: 0,
                sdf: shape.signed_distance(p),
                boundary: domain.tag_of(side),
                darcy: 0.0,
                forchheimer: 0.0,
            });
        }
    }

    for _ in 0..interface_quota {
        let p = shape.sample_boundary_point(&mut rng)?;
        points.push(PointRecord {
            coords: p.to_vec(),
            chi: 1,
            sdf: shape.signed_distance(p),
            boundary: BoundaryTag::Interface,
            darcy: 0.0,
            forchheimer: 0.0,
        });
    }

    Ok(PointCloudCase {
        dim: 2,
        points,
        reference: None,
        observations: vec![],
        meta: CaseMeta::unspecified(format!("sampled point cloud, seed {seed}")),
    })
}

/// Gaussian draw around a random interface anchor, rejected until it lands
/// inside the duct.
fn annulus_point<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &Shape,
    domain: &DomainSpec,
    sigma: f64,
    max_attempts: usize,
) -> Result<[f64; 2], GeometryError> {
    for _ in 0..max_attempts {
        let anchor = shape.sample_boundary_point(rng)?;
        let (g0, g1) = standard_normal_pair(rng);
        let p = [anchor[0] + sigma * g0, anchor[1] + sigma * g1];
        if domain.contains(p) {
            return Ok(p);
        }
    }
    Err(GeometryError::SamplingExhausted {
        context: "interface-densified interior point",
        attempts: max_attempts,
    })
}

/// Box-Muller transform; two uniforms to two independent standard normals.
fn standard_normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random_range(0.0..1.0); // (0, 1], keeps ln finite
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// The `index`-th element of the van der Corput sequence in the given
/// base: the base-`base` digits of `index + 1` mirrored across the radix
/// point. Low-discrepancy and fully deterministic.
fn van_der_corput(index: usize, base: usize) -> f64 {
    let mut n = index + 1;
    let mut value = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= base as f64;
        value += (n % base) as f64 / denom;
        n /= base;
    }
    value
}

/// `n` quasi-random points covering `domain` evenly: a Halton sequence
/// with bases 2 and 3 stretched over the duct. Unlike pseudo-random
/// draws, every prefix of the sequence is well spread, which makes it a
/// good grid-free net for residual sweeps.
pub fn halton_points(domain: &DomainSpec, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            [
                domain.min[0] + domain.width() * van_der_corput(i, 2),
                domain.min[1] + domain.height() * van_der_corput(i, 3),
            ]
        })
        .collect()
}

/// Uniform point on one duct side.
fn side_point<R: Rng + ?Sized>(domain: &DomainSpec, side: Side, rng: &mut R) -> [f64; 2] {
    match side {
        Side::Left => [domain.min[0], rng.random_range(domain.min[1]..domain.max[1])],
        Side::Right => [domain.max[0], rng.random_range(domain.min[1]..domain.max[1])],
        Side::Bottom => [rng.random_range(domain.min[0]..domain.max[0]), domain.min[1]],
        Side::Top => [rng.random_range(domain.min[0]..domain.max[0]), domain.max[1]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_shape, ShapeSpec};

    fn circle_in_mms_duct(radius: f64) -> (DomainSpec, Shape) {
        let domain = DomainSpec::mms_square();
        let center = [std::f64::consts::PI, std::f64::consts::PI];
        (domain, build_shape(&ShapeSpec::circle(center, radius)).unwrap())
    }

    #[test]
    fn cloud_sizes_match_the_request_exactly() {
        let (domain, shape) = circle_in_mms_duct(1.0);
        let counts = SampleCounts { interior: 667, boundary: 168 };
        let case = sample_case(&domain, &shape, counts, 1).unwrap();
        let interior = case.points.iter().filter(|p| !p.boundary.is_boundary()).count();
        let boundary = case.points.iter().filter(|p| p.boundary.is_boundary()).count();
        assert_eq!(interior, 667);
        assert_eq!(boundary, 168);
        case.validate().unwrap();
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let (domain, shape) = circle_in_mms_duct(1.0);
        let counts = SampleCounts { interior: 50, boundary: 20 };
        let a = sample_case(&domain, &shape, counts, 7).unwrap();
        let b = sample_case(&domain, &shape, counts, 7).unwrap();
        let c = sample_case(&domain, &shape, counts, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn porous_indicator_tracks_the_signed_distance() {
        let (domain, shape) = circle_in_mms_duct(1.2);
        let counts = SampleCounts { interior: 400, boundary: 100 };
        let case = sample_case(&domain, &shape, counts, 3).unwrap();
        for p in &case.points {
            match p.boundary {
                BoundaryTag::Interface => {
                    assert_eq!(p.chi, 1);
                    assert!(p.sdf.abs() <= 1e-9);
                }
                _ => assert_eq!(p.chi == 1, p.sdf < 0.0),
            }
            let total: f64 = p.boundary.onehot().iter().sum();
            assert_eq!(total, if p.boundary.is_boundary() { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn boundary_points_split_by_side_length_plus_interface_quota() {
        let domain = DomainSpec::new([0.0, 0.0], [4.0, 2.0], Side::Left, Side::Right).unwrap();
        let shape = build_shape(&ShapeSpec::circle([2.0, 1.0], 0.5)).unwrap();
        let case =
            sample_case(&domain, &shape, SampleCounts { interior: 10, boundary: 120 }, 5).unwrap();
        let count = |tag: BoundaryTag| case.points.iter().filter(|p| p.boundary == tag).count();
        // Quota: 30 interface points, 90 split 2:2:4:4 over the sides.
        assert_eq!(count(BoundaryTag::Interface), 30);
        assert_eq!(count(BoundaryTag::Inlet), 15);
        assert_eq!(count(BoundaryTag::Outlet), 15);
        assert_eq!(count(BoundaryTag::Wall), 60);
        // Side points sit exactly on the duct outline.
        for p in &case.points {
            let on_edge = p.coords[0] == 0.0
                || p.coords[0] == 4.0
                || p.coords[1] == 0.0
                || p.coords[1] == 2.0;
            match p.boundary {
                BoundaryTag::Inlet | BoundaryTag::Outlet | BoundaryTag::Wall => assert!(on_edge),
                _ => {}
            }
        }
    }

    #[test]
    fn interface_densification_reaches_the_golden_fraction() {
        // With mixture weight 0.4 at least 30% of interior points must land
        // within 0.1 shape diameters of the interface, aggregated over 20
        // seeds.
        let (domain, shape) = circle_in_mms_duct(1.5);
        let near_cut = 0.1 * shape.diameter();
        let counts = SampleCounts { interior: 667, boundary: 168 };
        let mut near = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let case = sample_case(&domain, &shape, counts, seed).unwrap();
            for p in case.points.iter().filter(|p| !p.boundary.is_boundary()) {
                total += 1;
                if p.sdf.abs() <= near_cut {
                    near += 1;
                }
            }
        }
        let fraction = near as f64 / total as f64;
        assert!(fraction >= 0.30, "near-interface fraction {fraction:.3} below 0.30");
    }

    #[test]
    fn the_halton_prefix_matches_hand_computed_values() {
        // Base-2 van der Corput: 1/2, 1/4, 3/4, 1/8, 5/8.
        // Base-3: 1/3, 2/3, 1/9, 4/9, 7/9.
        let domain = DomainSpec::new([0.0, 0.0], [1.0, 1.0], Side::Left, Side::Right).unwrap();
        let points = halton_points(&domain, 5);
        let expected = [
            [0.5, 1.0 / 3.0],
            [0.25, 2.0 / 3.0],
            [0.75, 1.0 / 9.0],
            [0.125, 4.0 / 9.0],
            [0.625, 7.0 / 9.0],
        ];
        for (p, e) in points.iter().zip(expected) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15, "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn halton_points_stay_inside_and_spread_over_the_domain() {
        let domain = DomainSpec::mms_square();
        let points = halton_points(&domain, 1000);
        assert_eq!(points.len(), 1000);
        assert!(points.iter().all(|p| domain.contains(*p)));
        // Every quadrant of the square receives close to a quarter of the
        // points; a uniform pseudo-random draw could miss this, a Halton
        // net cannot.
        let mid = std::f64::consts::PI;
        for qx in 0..2 {
            for qy in 0..2 {
                let count = points
                    .iter()
                    .filter(|p| (p[0] > mid) == (qx == 1) && (p[1] > mid) == (qy == 1))
                    .count();
                assert!((200..=300).contains(&count), "quadrant ({qx},{qy}) holds {count}");
            }
        }
    }

    #[test]
    fn oversized_shapes_are_rejected() {
        let domain = DomainSpec::mms_square();
        let shape = build_shape(&ShapeSpec::circle([1.0, 1.0], 2.0)).unwrap();
        let err = sample_case(&domain, &shape, SampleCounts { interior: 5, boundary: 5 }, 1)
            .unwrap_err();
        assert!(matches!(err, GeometryError::ShapeOutsideDomain { .. }), "{err}");
    }

    #[test]
    fn zero_counts_and_degenerate_options_fail_loudly() {
        let (domain, shape) = circle_in_mms_duct(1.0);
        assert!(matches!(
            sample_case(&domain, &shape, SampleCounts { interior: 0, boundary: 5 }, 1),
            Err(GeometryError::ZeroCount { what: "interior" })
        ));
        let mut options = SamplerOptions { interface_mixture_weight: 1.5, ..Default::default() };
        assert!(sample_case_with(
            &domain,
            &shape,
            SampleCounts { interior: 5, boundary: 5 },
            &options,
            1
        )
        .is_err());
        // An attempt budget of zero makes the annulus sampler give up on
        // its first draw.
        options.interface_mixture_weight = 1.0;
        options.max_attempts = 0;
        let err = sample_case_with(
            &domain,
            &shape,
            SampleCounts { interior: 5, boundary: 5 },
            &options,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::SamplingExhausted { attempts: 0, .. }), "{err}");
    }
}
