//! Boundary-condition records for the operator branch.
//!
//! The branch consumes a fixed number of boundary points per case. Each
//! record carries a position plus whatever conditions are known there:
//! velocity on the inlet, porous coefficients on the interface. Conditions
//! that do not apply are stored as exact zeros with the availability mask
//! cleared, and normalization preserves those zeros so the network sees a
//! consistent "absent" encoding.

use ndarray::Array2;
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::ModelError;
use crate::dataset::{NormalizationStats, PointCloudCase};
use crate::geometry::{largest_remainder_allocation, BoundaryTag};

/// One boundary point fed to the branch: position, known conditions, and
/// which condition slots are populated.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchRecord {
    /// Position, `dim` entries.
    pub position: Vec<f64>,
    /// Boundary velocity, `dim` entries; exact zeros when unavailable.
    pub velocity: Vec<f64>,
    /// Darcy coefficient; exact zero when unavailable.
    pub darcy: f64,
    /// Forchheimer coefficient; exact zero when unavailable.
    pub forchheimer: f64,
    pub has_velocity: bool,
    pub has_coefficients: bool,
}

impl BranchRecord {
    /// A record with a position but no known conditions.
    pub fn passive(position: Vec<f64>) -> Self {
        let dim = position.len();
        BranchRecord {
            position,
            velocity: vec![0.0; dim],
            darcy: 0.0,
            forchheimer: 0.0,
            has_velocity: false,
            has_coefficients: false,
        }
    }
}

/// The branch's input for one case: exactly M records.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInput {
    pub dim: usize,
    pub records: Vec<BranchRecord>,
}

impl BranchInput {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks dimensions, finiteness, and that every unavailable condition
    /// is stored as an exact zero.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, r) in self.records.iter().enumerate() {
            let fail = |reason: String| Err(ModelError::InvalidBranchRecord { index: i, reason });
            if r.position.len() != self.dim || r.velocity.len() != self.dim {
                return fail(format!(
                    "expected {} position and velocity entries, got {} and {}",
                    self.dim,
                    r.position.len(),
                    r.velocity.len()
                ));
            }
            let values = r
                .position
                .iter()
                .chain(&r.velocity)
                .chain([&r.darcy, &r.forchheimer]);
            if values.into_iter().any(|v| !v.is_finite()) {
                return fail("non-finite entry".to_string());
            }
            if !r.has_velocity && r.velocity.iter().any(|&v| v != 0.0) {
                return fail("unavailable velocity must be exactly zero".to_string());
            }
            if !r.has_coefficients && (r.darcy != 0.0 || r.forchheimer != 0.0) {
                return fail("unavailable coefficients must be exactly zero".to_string());
            }
        }
        Ok(())
    }

    /// Record features as a matrix: position, velocity, Darcy, Forchheimer.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let d = self.dim;
        let mut out = Array2::zeros((self.records.len(), 2 * d + 2));
        for (i, r) in self.records.iter().enumerate() {
            for k in 0..d {
                out[[i, k]] = r.position[k];
                out[[i, d + k]] = r.velocity[k];
            }
            out[[i, 2 * d]] = r.darcy;
            out[[i, 2 * d + 1]] = r.forchheimer;
        }
        out
    }
}

/// Boundary groups in one-hot order, with human-readable names.
const BOUNDARY_ORDER: [(BoundaryTag, &str); 4] = [
    (BoundaryTag::Inlet, "inlet"),
    (BoundaryTag::Outlet, "outlet"),
    (BoundaryTag::Wall, "wall"),
    (BoundaryTag::Interface, "interface"),
];

/// Chooses exactly `m` boundary points for the branch, with per-boundary
/// quotas proportional to boundary sizes (largest-remainder rounding) and a
/// seeded uniform draw inside each boundary. Inlet records carry the
/// boundary velocity: the case's reference values when present, otherwise
/// the uniform inlet condition from the manifest. Interface records carry
/// the porous coefficients. All other condition slots are exact zeros.
pub fn select_branch_points(
    case: &PointCloudCase,
    m: usize,
    seed: u64,
) -> Result<BranchInput, ModelError> {
    if m == 0 {
        return Err(ModelError::InvalidConfig {
            reason: "branch needs a positive record count".to_string(),
        });
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); BOUNDARY_ORDER.len()];
    for (i, p) in case.points.iter().enumerate() {
        if let Some(g) = BOUNDARY_ORDER.iter().position(|(tag, _)| *tag == p.boundary) {
            groups[g].push(i);
        }
    }
    for (g, (_, name)) in BOUNDARY_ORDER.iter().enumerate() {
        if groups[g].is_empty() {
            return Err(ModelError::MissingBoundary { tag: name });
        }
    }
    let available: usize = groups.iter().map(Vec::len).sum();
    if m > available {
        return Err(ModelError::BranchTooLarge { requested: m, available });
    }

    let weights: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let quotas = largest_remainder_allocation(&weights, m);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(m);
    for (g, quota) in quotas.into_iter().enumerate() {
        let mut picks: Vec<usize> =
            sample(&mut rng, groups[g].len(), quota).into_iter().map(|i| groups[g][i]).collect();
        picks.sort_unstable();
        for idx in picks {
            let point = &case.points[idx];
            let mut record = BranchRecord::passive(point.coords.clone());
            match BOUNDARY_ORDER[g].0 {
                BoundaryTag::Inlet => {
                    record.velocity = match &case.reference {
                        Some(reference) => reference[idx].velocity.clone(),
                        None => case.meta.inlet_velocity(case.dim),
                    };
                    record.has_velocity = true;
                }
                BoundaryTag::Interface => {
                    record.darcy = point.darcy;
                    record.forchheimer = point.forchheimer;
                    record.has_coefficients = true;
                }
                _ => {}
            }
            records.push(record);
        }
    }
    let input = BranchInput { dim: case.dim, records };
    input.validate()?;
    Ok(input)
}

/// Transforms a branch into normalized units: positions and available
/// velocities are Z-scored, available coefficients are range-scaled, and
/// unavailable slots stay exactly zero so the "absent" encoding survives.
pub fn normalize_branch(
    branch: &BranchInput,
    stats: &NormalizationStats,
) -> Result<BranchInput, ModelError> {
    if stats.dim() != branch.dim {
        return Err(ModelError::FeatureShape {
            context: "normalization statistics",
            expected: branch.dim,
            got: stats.dim(),
        });
    }
    let mut out = branch.clone();
    for r in &mut out.records {
        for k in 0..branch.dim {
            r.position[k] = stats.coords[k].normalize(r.position[k]);
            if r.has_velocity {
                r.velocity[k] = stats.velocity[k].normalize(r.velocity[k]);
            }
        }
        if r.has_coefficients {
            r.darcy = stats.darcy.normalize(r.darcy);
            r.forchheimer = stats.forchheimer.normalize(r.forchheimer);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CaseMeta, FlowSample, PointRecord};
    use crate::physics::FluidProperties;

    /// A rectangular case with the requested number of points per boundary.
    /// Boundary points sit on distinct lattice sites; interface points are
    /// porous (chi = 1, sdf = 0) and carry the case coefficients.
    fn boundary_case(counts: [usize; 4], with_reference: bool) -> PointCloudCase {
        let tags = [BoundaryTag::Inlet, BoundaryTag::Outlet, BoundaryTag::Wall, BoundaryTag::Interface];
        let mut points = Vec::new();
        for (g, (&count, tag)) in counts.iter().zip(tags).enumerate() {
            for i in 0..count {
                let porous = tag == BoundaryTag::Interface;
                points.push(PointRecord {
                    coords: vec![g as f64, i as f64],
                    chi: porous as u8,
                    sdf: if porous { 0.0 } else { 1.0 },
                    boundary: tag,
                    darcy: if porous { 250.0 } else { 0.0 },
                    forchheimer: if porous { 4.5 } else { 0.0 },
                });
            }
        }
        let reference = with_reference.then(|| {
            points
                .iter()
                .map(|p| FlowSample {
                    velocity: vec![p.coords[0] + 0.5, p.coords[1] - 0.25],
                    pressure: 2.0 * p.coords[0],
                })
                .collect()
        });
        let case = PointCloudCase {
            dim: 2,
            points,
            reference,
            observations: Vec::new(),
            meta: CaseMeta {
                inlet_speed: 1.5,
                inlet_angle: 0.0,
                fluid: FluidProperties::unit(),
                darcy: 250.0,
                forchheimer: 4.5,
                manufactured_forcing: false,
                provenance: "test".to_string(),
            },
        };
        case.validate().expect("test case must be structurally valid");
        case
    }

    fn group_counts(branch: &BranchInput) -> [usize; 4] {
        // The synthetic case encodes the group in the first coordinate.
        let mut counts = [0usize; 4];
        for r in &branch.records {
            counts[r.position[0] as usize] += 1;
        }
        counts
    }

    #[test]
    fn equal_boundaries_split_the_quota_evenly() {
        let case = boundary_case([50, 50, 50, 50], false);
        let branch = select_branch_points(&case, 40, 11).unwrap();
        assert_eq!(branch.len(), 40);
        assert_eq!(group_counts(&branch), [10, 10, 10, 10]);
    }

    #[test]
    fn quotas_match_a_brute_force_largest_remainder_oracle() {
        let sizes = [120usize, 40, 200, 40];
        let m = 50usize;
        // Independent proportional allocation: floor the shares, then hand
        // out the leftovers by descending fractional remainder.
        let total: usize = sizes.iter().sum();
        let shares: Vec<f64> = sizes.iter().map(|&s| m as f64 * s as f64 / total as f64).collect();
        let mut oracle: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            (shares[b] - shares[b].floor())
                .partial_cmp(&(shares[a] - shares[a].floor()))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut left = m - oracle.iter().sum::<usize>();
        for &g in &order {
            if left == 0 {
                break;
            }
            oracle[g] += 1;
            left -= 1;
        }
        assert_eq!(oracle, vec![15, 5, 25, 5]);

        let case = boundary_case(sizes, false);
        let branch = select_branch_points(&case, m, 5).unwrap();
        assert_eq!(group_counts(&branch).to_vec(), oracle);
    }

    #[test]
    fn availability_masks_follow_the_boundary_role() {
        let case = boundary_case([8, 8, 8, 8], false);
        let branch = select_branch_points(&case, 12, 2).unwrap();
        for r in &branch.records {
            match r.position[0] as usize {
                0 => {
                    assert!(r.has_velocity && !r.has_coefficients);
                    // Inlet angle 0: the manifest speed along x.
                    assert_eq!(r.velocity, vec![1.5, 0.0]);
                    assert_eq!((r.darcy, r.forchheimer), (0.0, 0.0));
                }
                3 => {
                    assert!(r.has_coefficients && !r.has_velocity);
                    assert_eq!((r.darcy, r.forchheimer), (250.0, 4.5));
                    assert!(r.velocity.iter().all(|&v| v == 0.0));
                }
                _ => {
                    assert!(!r.has_velocity && !r.has_coefficients);
                    assert!(r.velocity.iter().all(|&v| v == 0.0));
                    assert_eq!((r.darcy, r.forchheimer), (0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn inlet_records_prefer_reference_velocities_when_present() {
        let case = boundary_case([8, 8, 8, 8], true);
        let branch = select_branch_points(&case, 12, 2).unwrap();
        let inlet: Vec<&BranchRecord> =
            branch.records.iter().filter(|r| r.has_velocity).collect();
        assert!(!inlet.is_empty());
        for r in inlet {
            assert_eq!(r.velocity, vec![r.position[0] + 0.5, r.position[1] - 0.25]);
        }
    }

    #[test]
    fn selection_is_deterministic_in_the_seed() {
        let case = boundary_case([30, 20, 40, 10], false);
        let a = select_branch_points(&case, 25, 9).unwrap();
        let b = select_branch_points(&case, 25, 9).unwrap();
        assert_eq!(a, b);
        let c = select_branch_points(&case, 25, 10).unwrap();
        assert_ne!(a, c, "different seeds should draw different boundary points");
    }

    #[test]
    fn missing_boundaries_and_oversized_requests_are_rejected() {
        let mut case = boundary_case([8, 8, 8, 8], false);
        case.points.retain(|p| p.boundary != BoundaryTag::Outlet);
        let err = select_branch_points(&case, 10, 0).unwrap_err();
        assert!(err.to_string().contains("outlet"), "unexpected message: {err}");

        let case = boundary_case([3, 3, 3, 3], false);
        assert!(matches!(
            select_branch_points(&case, 13, 0),
            Err(ModelError::BranchTooLarge { requested: 13, available: 12 })
        ));
        assert!(matches!(
            select_branch_points(&case, 0, 0),
            Err(ModelError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn validation_catches_nonzero_unavailable_slots() {
        let mut record = BranchRecord::passive(vec![0.0, 0.0]);
        record.darcy = 1.0;
        let branch = BranchInput { dim: 2, records: vec![record] };
        let err = branch.validate().unwrap_err();
        assert!(err.to_string().contains("exactly zero"), "unexpected message: {err}");
    }

    #[test]
    fn feature_matrix_lays_out_position_velocity_coefficients() {
        let branch = BranchInput {
            dim: 2,
            records: vec![BranchRecord {
                position: vec![1.0, 2.0],
                velocity: vec![3.0, 4.0],
                darcy: 5.0,
                forchheimer: 6.0,
                has_velocity: true,
                has_coefficients: true,
            }],
        };
        let m = branch.feature_matrix();
        assert_eq!(m.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn normalization_preserves_exact_zeros_for_unavailable_slots() {
        let case = boundary_case([8, 8, 8, 8], true);
        let stats = crate::dataset::compute_normalization(&[&case]).unwrap();
        let branch = select_branch_points(&case, 12, 2).unwrap();
        let normalized = normalize_branch(&branch, &stats).unwrap();
        normalized.validate().unwrap();
        for (raw, norm) in branch.records.iter().zip(&normalized.records) {
            for k in 0..2 {
                assert_eq!(norm.position[k], stats.coords[k].normalize(raw.position[k]));
            }
            if raw.has_velocity {
                for k in 0..2 {
                    assert_eq!(norm.velocity[k], stats.velocity[k].normalize(raw.velocity[k]));
                }
            } else {
                assert!(norm.velocity.iter().all(|&v| v == 0.0));
            }
            if raw.has_coefficients {
                assert_eq!(norm.darcy, stats.darcy.normalize(raw.darcy));
            } else {
                assert_eq!((norm.darcy, norm.forchheimer), (0.0, 0.0));
            }
        }
    }
}
