//! The four-term loss, in plain arithmetic and as a recorded tape graph.
//!
//! [`compute_loss`] evaluates the loss from finished [`CloudDerivatives`];
//! it backs validation, tests, and diagnostics. [`record_loss`] builds the
//! same quantity as tape nodes on top of a recorded forward pass so that
//! one backward sweep yields parameter gradients. Both paths perform the
//! identical floating-point operations in the identical order, so their
//! results agree to machine precision; any change here must preserve that
//! pairing.

use std::sync::Arc;

use ndarray::Array2;

use crate::ad::{DualRows, NodeId, Tape, UnaryFn};
use crate::dataset::{normalize_case, NormalizationStats, PointCloudCase};
use crate::geometry::BoundaryTag;
use crate::models::{normalize_branch, select_branch_points, BranchInput};
use crate::models::CloudDerivatives;
use crate::physics::{
    mms, FluidProperties, PorousCoefficients, ResidualScaling, MAGNITUDE_SMOOTHING,
};

use super::{LossBreakdown, LossWeights, TrainError};

/// Everything the recorded loss needs about one case, precomputed once so
/// each training step only assembles tape nodes.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    id: String,
    /// Normalized network inputs, n-by-(dim+5).
    features: Array2<f64>,
    /// Normalized coordinates, n-by-dim (conditioned-model query points).
    coords: Array2<f64>,
    /// Normalized boundary-condition records for the conditioned model.
    branch: Option<BranchInput>,
    /// Rows whose residuals enter the loss (interior points only).
    interior: Arc<Vec<usize>>,
    /// Porous indicator per interior row, ni-by-1.
    chi: Array2<f64>,
    /// Manufactured forcing per interior row in physical units, ni-by-dim.
    forcing: Option<Array2<f64>>,
    /// Rows carrying boundary data.
    boundary: Arc<Vec<usize>>,
    /// Normalized boundary targets, nb-by-(dim+1).
    boundary_targets: Array2<f64>,
    /// Component mask over the boundary targets (1 keeps, 0 drops).
    boundary_mask: Array2<f64>,
    /// Rows carrying sparse observation data.
    observations: Arc<Vec<usize>>,
    observation_targets: Array2<f64>,
    observation_mask: Array2<f64>,
    scaling: ResidualScaling,
    props: FluidProperties,
    coeffs: PorousCoefficients,
    dim: usize,
    points: usize,
}

impl PreparedCase {
    /// Precomputes inputs, index sets, and targets for one case.
    ///
    /// `branch` carries `(records, seed)` for the conditioned model and is
    /// `None` for the point-cloud model.
    pub fn build(
        id: &str,
        case: &PointCloudCase,
        stats: &NormalizationStats,
        branch: Option<(usize, u64)>,
    ) -> Result<Self, TrainError> {
        case.validate()?;
        if case.dim != stats.dim() {
            return Err(TrainError::Config {
                reason: format!(
                    "case {id} has dimension {} but the statistics expect {}",
                    case.dim,
                    stats.dim()
                ),
            });
        }
        ensure_forcing_supported(case)?;

        let normalized = normalize_case(case, stats)?;
        let features = normalized.input_features();
        let coords = normalized.coords_matrix();
        let branch = match branch {
            Some((records, seed)) => {
                let raw = select_branch_points(case, records, seed)?;
                Some(normalize_branch(&raw, stats)?)
            }
            None => None,
        };

        let interior: Vec<usize> = (0..case.points.len())
            .filter(|&i| case.points[i].boundary == BoundaryTag::Interior)
            .collect();
        let chi = Array2::from_shape_fn((interior.len(), 1), |(r, _)| {
            case.region(interior[r]).indicator()
        });
        let props = case.meta.fluid;
        let coeffs = PorousCoefficients::new(case.meta.darcy, case.meta.forchheimer)?;
        let forcing = if case.meta.manufactured_forcing {
            let mut f = Array2::zeros((interior.len(), case.dim));
            for (r, &i) in interior.iter().enumerate() {
                let row = mms::forcing(&case.points[i].coords, props, coeffs, case.region(i));
                for k in 0..case.dim {
                    f[[r, k]] = row[k];
                }
            }
            Some(f)
        } else {
            None
        };

        let (boundary, boundary_targets, boundary_mask) = boundary_data(case, stats);
        let (observation_targets, observation_mask) = observation_data(case, stats)?;

        Ok(PreparedCase {
            id: id.to_string(),
            features,
            coords,
            branch,
            interior: Arc::new(interior),
            chi,
            forcing,
            boundary: Arc::new(boundary),
            boundary_targets,
            boundary_mask,
            observations: Arc::new(case.observations.clone()),
            observation_targets,
            observation_mask,
            scaling: stats.residual_scaling()?,
            props,
            coeffs,
            dim: case.dim,
            points: case.points.len(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Normalized network inputs.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Normalized query coordinates for the conditioned model.
    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    /// Normalized boundary-condition records, when prepared for one.
    pub fn branch(&self) -> Option<&BranchInput> {
        self.branch.as_ref()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Recorded loss: the scalar value of each part plus the tape nodes, with
/// `total` ready to seed a backward sweep.
#[derive(Clone, Debug)]
pub struct RecordedLoss {
    pub breakdown: LossBreakdown,
    /// Weighted total as a 1-by-1 tape node.
    pub total: NodeId,
    /// Unweighted `[momentum, continuity, boundary, data]` term nodes.
    pub terms: [NodeId; 4],
}

/// Evaluates the four-term loss from finished derivatives.
///
/// Outputs and derivatives are in normalized units; the residual terms
/// rescale them through `stats` so the physics is enforced in physical
/// units. Boundary and observation targets compare in normalized units.
pub fn compute_loss(
    derivs: &CloudDerivatives,
    case: &PointCloudCase,
    stats: &NormalizationStats,
    weights: &LossWeights,
) -> Result<LossBreakdown, TrainError> {
    weights.validate()?;
    let dim = case.dim;
    if stats.dim() != dim {
        return Err(TrainError::Config {
            reason: format!(
                "case has dimension {dim} but the statistics expect {}",
                stats.dim()
            ),
        });
    }
    if derivs.values.dim() != (case.points.len(), dim + 1) {
        return Err(TrainError::Config {
            reason: format!(
                "derivative values have shape {:?}, expected ({}, {})",
                derivs.values.dim(),
                case.points.len(),
                dim + 1
            ),
        });
    }
    if derivs.dim() != dim {
        return Err(TrainError::Config {
            reason: format!(
                "derivatives cover {} directions, expected {dim}",
                derivs.dim()
            ),
        });
    }
    ensure_forcing_supported(case)?;
    ensure_observations(weights, case.observations.len(), "the case")?;

    let scaling = stats.residual_scaling()?;
    let props = case.meta.fluid;
    let coeffs = PorousCoefficients::new(case.meta.darcy, case.meta.forchheimer)?;

    let mut momentum_sum = 0.0;
    let mut continuity_sum = 0.0;
    let mut interior_count = 0usize;
    for i in 0..case.points.len() {
        if case.points[i].boundary != BoundaryTag::Interior {
            continue;
        }
        interior_count += 1;
        let jac = derivs.jacobian(i);
        let second = derivs.second_derivatives(i);
        let u_hat: Vec<f64> = (0..dim).map(|k| derivs.values[[i, k]]).collect();
        let grad_p: Vec<f64> = (0..dim).map(|k| jac[[dim, k]]).collect();
        let forcing_row;
        let forcing = if case.meta.manufactured_forcing {
            forcing_row = mms::forcing(&case.points[i].coords, props, coeffs, case.region(i));
            Some(&forcing_row[..])
        } else {
            None
        };
        let residual = scaling.scaled_momentum(
            &u_hat,
            &jac,
            &second,
            &grad_p,
            props,
            coeffs,
            case.region(i),
            forcing,
        )?;
        let norm2: f64 = residual.iter().map(|r| r * r).sum();
        momentum_sum += norm2;
        let cont = scaling.scaled_continuity(&jac);
        continuity_sum += cont * cont;
    }
    let (l_m, l_c) = if interior_count == 0 {
        (0.0, 0.0)
    } else {
        (momentum_sum / interior_count as f64, continuity_sum / interior_count as f64)
    };

    let (rows, targets, mask) = boundary_data(case, stats);
    let l_b = masked_mean(&derivs.values, &rows, &targets, &mask);
    let (obs_targets, obs_mask) = observation_data(case, stats)?;
    let l_d = masked_mean(&derivs.values, &case.observations, &obs_targets, &obs_mask);

    Ok(LossBreakdown::from_parts(l_m, l_c, l_b, l_d, weights))
}

/// Builds the loss as tape nodes over a recorded forward pass.
///
/// `output` must be the dual recording for `prepared`'s cloud: values of
/// shape points-by-(dim+1) with one first- and second-derivative channel
/// per coordinate.
pub fn record_loss(
    tape: &mut Tape<f64>,
    output: &DualRows,
    prepared: &PreparedCase,
    weights: &LossWeights,
) -> Result<RecordedLoss, TrainError> {
    weights.validate()?;
    let dim = prepared.dim;
    if tape.value(output.value).dim() != (prepared.points, dim + 1) {
        return Err(TrainError::Config {
            reason: format!(
                "recorded output has shape {:?}, expected ({}, {})",
                tape.value(output.value).dim(),
                prepared.points,
                dim + 1
            ),
        });
    }
    if output.d1.len() != dim || output.d2.len() != dim {
        return Err(TrainError::Config {
            reason: format!(
                "recording carries {} first and {} second derivative channels, expected {dim}",
                output.d1.len(),
                output.d2.len()
            ),
        });
    }
    ensure_observations(weights, prepared.observations.len(), prepared.id())?;

    let (l_m, l_c) = if prepared.interior.is_empty() {
        (zero_node(tape), zero_node(tape))
    } else {
        record_residual_terms(tape, output, prepared)
    };
    let l_b = record_data_term(
        tape,
        output.value,
        &prepared.boundary,
        &prepared.boundary_targets,
        &prepared.boundary_mask,
    );
    let l_d = record_data_term(
        tape,
        output.value,
        &prepared.observations,
        &prepared.observation_targets,
        &prepared.observation_mask,
    );

    let weighted_m = tape.scale(l_m, weights.lambda_m);
    let weighted_c = tape.scale(l_c, weights.lambda_c);
    let weighted_b = tape.scale(l_b, weights.lambda_b);
    let weighted_d = tape.scale(l_d, weights.lambda_d);
    let mc = tape.add(weighted_m, weighted_c);
    let mcb = tape.add(mc, weighted_b);
    let total = tape.add(mcb, weighted_d);

    let breakdown = LossBreakdown::from_parts(
        tape.scalar(l_m),
        tape.scalar(l_c),
        tape.scalar(l_b),
        tape.scalar(l_d),
        weights,
    );
    Ok(RecordedLoss { breakdown, total, terms: [l_m, l_c, l_b, l_d] })
}

/// Momentum and continuity means over the interior rows, as tape nodes.
///
/// Mirrors [`ResidualScaling::scaled_continuity`] and
/// [`ResidualScaling::scaled_momentum`] operation for operation.
fn record_residual_terms(
    tape: &mut Tape<f64>,
    output: &DualRows,
    prepared: &PreparedCase,
) -> (NodeId, NodeId) {
    let dim = prepared.dim;
    let scaling = &prepared.scaling;
    let props = prepared.props;
    let coeffs = prepared.coeffs;
    let rows = &prepared.interior;

    let values = tape.gather_rows(output.value, rows.clone());
    let d1: Vec<NodeId> =
        output.d1.iter().map(|&id| tape.gather_rows(id, rows.clone())).collect();
    let d2: Vec<NodeId> =
        output.d2.iter().map(|&id| tape.gather_rows(id, rows.clone())).collect();

    // Continuity: sum of sigma-ratio-weighted diagonal Jacobian entries.
    let mut divergence: Option<NodeId> = None;
    for (k, &channel) in d1.iter().enumerate() {
        let diag = tape.slice_cols(channel, k, k + 1);
        let term = tape.scale(diag, scaling.sigma_u()[k] / scaling.sigma_x()[k]);
        divergence = Some(accumulate(tape, divergence, term));
    }
    let divergence = divergence.expect("at least one spatial direction");
    let cont_sq = tape.mul(divergence, divergence);
    let l_c = tape.mean_all(cont_sq);

    // Physical velocity components, recovered from normalized outputs.
    let u_phys: Vec<NodeId> = (0..dim)
        .map(|k| {
            let col = tape.slice_cols(values, k, k + 1);
            let scaled = tape.scale(col, scaling.sigma_u()[k]);
            tape.add_scalar(scaled, scaling.mean_u()[k])
        })
        .collect();

    // Smoothed speed and the porous drag coefficient, gated by chi.
    let mut speed_sq: Option<NodeId> = None;
    for &component in &u_phys {
        let sq = tape.mul(component, component);
        speed_sq = Some(accumulate(tape, speed_sq, sq));
    }
    let smoothed = tape.add_scalar(speed_sq.expect("dim >= 1"), MAGNITUDE_SMOOTHING);
    let speed = tape.unary(smoothed, UnaryFn::Sqrt);
    let inertial = tape.scale(speed, 0.5 * props.rho * coeffs.forchheimer);
    let coefficient = tape.add_scalar(inertial, props.mu * coeffs.darcy);
    let chi = tape.input(prepared.chi.clone());
    let drag = tape.mul(chi, coefficient);

    let forcing = prepared.forcing.as_ref().map(|f| tape.input(f.clone()));

    let mut norm2: Option<NodeId> = None;
    for i in 0..dim {
        let gamma = scaling.sigma_x()[i] / (scaling.sigma_u()[i] * scaling.sigma_u()[i]);
        let mut residual: Option<NodeId> = None;
        for k in 0..dim {
            let coeff =
                props.rho * scaling.sigma_x()[i] / (scaling.sigma_u()[i] * scaling.sigma_x()[k]);
            let advect = tape.scale(u_phys[k], coeff);
            let jac_ik = tape.slice_cols(d1[k], i, i + 1);
            let convective = tape.mul(advect, jac_ik);
            residual = Some(accumulate(tape, residual, convective));
            let visc = props.mu * scaling.sigma_x()[i]
                / (scaling.sigma_u()[i] * scaling.sigma_x()[k] * scaling.sigma_x()[k]);
            let second_ik = tape.slice_cols(d2[k], i, i + 1);
            let viscous = tape.scale(second_ik, -visc);
            residual = Some(accumulate(tape, residual, viscous));
        }
        let grad_p = tape.slice_cols(d1[i], dim, dim + 1);
        let pressure = tape.scale(
            grad_p,
            scaling.sigma_p() / (scaling.sigma_u()[i] * scaling.sigma_u()[i]),
        );
        let mut residual = accumulate(tape, residual, pressure);
        let along = tape.mul(drag, u_phys[i]);
        let drag_term = tape.scale(along, gamma);
        residual = tape.add(residual, drag_term);
        if let Some(f) = forcing {
            let col = tape.slice_cols(f, i, i + 1);
            let negated = tape.scale(col, -gamma);
            residual = tape.add(residual, negated);
        }
        let sq = tape.mul(residual, residual);
        norm2 = Some(accumulate(tape, norm2, sq));
    }
    let l_m = tape.mean_all(norm2.expect("at least one spatial direction"));
    (l_m, l_c)
}

/// Mean over `rows` of the masked squared error against `targets`.
fn record_data_term(
    tape: &mut Tape<f64>,
    value: NodeId,
    rows: &Arc<Vec<usize>>,
    targets: &Array2<f64>,
    mask: &Array2<f64>,
) -> NodeId {
    if rows.is_empty() {
        return zero_node(tape);
    }
    let picked = tape.gather_rows(value, rows.clone());
    let target = tape.input(targets.clone());
    let diff = tape.sub(picked, target);
    let sq = tape.mul(diff, diff);
    let mask = tape.input(mask.clone());
    let masked = tape.mul(sq, mask);
    let per_point = tape.row_sum(masked);
    tape.mean_all(per_point)
}

/// Plain-arithmetic twin of [`record_data_term`].
fn masked_mean(
    values: &Array2<f64>,
    rows: &[usize],
    targets: &Array2<f64>,
    mask: &Array2<f64>,
) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        let mut row = 0.0;
        for c in 0..targets.ncols() {
            let diff = values[[i, c]] - targets[[r, c]];
            row += diff * diff * mask[[r, c]];
        }
        sum += row;
    }
    sum / rows.len() as f64
}

/// Boundary rows with their normalized targets and component mask.
///
/// With reference fields, every non-interior point is supervised on all
/// components. Without them the targets come from the case conditions:
/// inlet and wall rows pin the velocity components (the wall to zero),
/// outlet rows pin the pressure to the zero gauge level, and interface
/// rows carry no data. Targets are normalized after synthesis so a zero
/// wall velocity lands at the Z-score of physical zero.
fn boundary_data(
    case: &PointCloudCase,
    stats: &NormalizationStats,
) -> (Vec<usize>, Array2<f64>, Array2<f64>) {
    let dim = case.dim;
    match case.reference.as_ref() {
        Some(reference) => {
            let rows: Vec<usize> = (0..case.points.len())
                .filter(|&i| case.points[i].boundary.is_boundary())
                .collect();
            let mut targets = Array2::zeros((rows.len(), dim + 1));
            for (r, &i) in rows.iter().enumerate() {
                for k in 0..dim {
                    targets[[r, k]] = stats.velocity[k].normalize(reference[i].velocity[k]);
                }
                targets[[r, dim]] = stats.pressure.normalize(reference[i].pressure);
            }
            let mask = Array2::ones((rows.len(), dim + 1));
            (rows, targets, mask)
        }
        None => {
            let rows: Vec<usize> = (0..case.points.len())
                .filter(|&i| {
                    matches!(
                        case.points[i].boundary,
                        BoundaryTag::Inlet | BoundaryTag::Outlet | BoundaryTag::Wall
                    )
                })
                .collect();
            let inlet = case.meta.inlet_velocity(dim);
            let mut targets = Array2::zeros((rows.len(), dim + 1));
            let mut mask = Array2::zeros((rows.len(), dim + 1));
            for (r, &i) in rows.iter().enumerate() {
                match case.points[i].boundary {
                    BoundaryTag::Inlet => {
                        for k in 0..dim {
                            targets[[r, k]] = stats.velocity[k].normalize(inlet[k]);
                            mask[[r, k]] = 1.0;
                        }
                    }
                    BoundaryTag::Wall => {
                        for k in 0..dim {
                            targets[[r, k]] = stats.velocity[k].normalize(0.0);
                            mask[[r, k]] = 1.0;
                        }
                    }
                    BoundaryTag::Outlet => {
                        targets[[r, dim]] = stats.pressure.normalize(0.0);
                        mask[[r, dim]] = 1.0;
                    }
                    BoundaryTag::Interior | BoundaryTag::Interface => unreachable!(),
                }
            }
            (rows, targets, mask)
        }
    }
}

/// Normalized targets and all-ones mask for the observation rows.
fn observation_data(
    case: &PointCloudCase,
    stats: &NormalizationStats,
) -> Result<(Array2<f64>, Array2<f64>), TrainError> {
    let dim = case.dim;
    let n = case.observations.len();
    if n == 0 {
        return Ok((Array2::zeros((0, dim + 1)), Array2::zeros((0, dim + 1))));
    }
    let reference = case.reference.as_ref().ok_or_else(|| TrainError::Config {
        reason: "case lists observation points but carries no reference fields".to_string(),
    })?;
    let mut targets = Array2::zeros((n, dim + 1));
    for (r, &i) in case.observations.iter().enumerate() {
        for k in 0..dim {
            targets[[r, k]] = stats.velocity[k].normalize(reference[i].velocity[k]);
        }
        targets[[r, dim]] = stats.pressure.normalize(reference[i].pressure);
    }
    Ok((targets, Array2::ones((n, dim + 1))))
}

fn ensure_forcing_supported(case: &PointCloudCase) -> Result<(), TrainError> {
    if case.meta.manufactured_forcing && case.dim != 2 {
        return Err(TrainError::Config {
            reason: format!(
                "manufactured forcing is only defined in two dimensions, case has {}",
                case.dim
            ),
        });
    }
    Ok(())
}

/// Rejects a positive data weight when the case has nothing to fit.
fn ensure_observations(
    weights: &LossWeights,
    observed: usize,
    what: &str,
) -> Result<(), TrainError> {
    if weights.lambda_d > 0.0 && observed == 0 {
        return Err(TrainError::Config {
            reason: format!("data weight is positive but {what} has no observation points"),
        });
    }
    Ok(())
}

fn zero_node(tape: &mut Tape<f64>) -> NodeId {
    tape.input(Array2::zeros((1, 1)))
}

fn accumulate(tape: &mut Tape<f64>, acc: Option<NodeId>, term: NodeId) -> NodeId {
    match acc {
        None => term,
        Some(a) => tape.add(a, term),
    }
}
