//! The geometry-aware operator: pooled geometry and boundary-condition
//! latents conditioning a per-point trunk.
//!
//! The geometry encoder runs a shared layer stack over the full case cloud
//! (coordinates, signed distance, one-hot) and max-pools into a geometry
//! latent; the branch does the same over its fixed set of boundary records.
//! Each query point's trunk embedding is concatenated with both latents and
//! mapped through the shared output stack. Spatial derivative channels flow
//! through the trunk only: the latents describe the case, not the query
//! point, so their derivatives with respect to query coordinates are zero.

use ndarray::Array2;

use super::{
    broadcast_constant_dual, check_dropout_masks, ensure_finite, first_dropout_site, BoundParams,
    BranchInput, CloudDerivatives, ModelConfig, ModelError, ModelParameters,
};
use crate::ad::{NodeId, Tape};

/// Handles into a recorded forward pass.
#[derive(Clone, Debug)]
pub struct PiganoRecording {
    /// Per-query outputs (velocity components then pressure), with
    /// derivative channels when requested.
    pub output: crate::ad::DualRows,
    /// The 1-row pooled geometry latent.
    pub geometry_latent: NodeId,
    /// The 1-row pooled condition latent.
    pub branch_latent: NodeId,
}

/// Records the full model on a tape. `query` rows are coordinates only;
/// `geometry` rows are `coords | sdf | one-hot` over the whole case cloud;
/// `branch` supplies exactly the configured number of boundary records.
/// Dropout masks (training only) apply to the last two hidden layers of the
/// output stack; pass `None` for evaluation.
pub fn record_pigano(
    tape: &mut Tape<f64>,
    bound: &BoundParams<'_>,
    query: &Array2<f64>,
    geometry: &Array2<f64>,
    branch: &BranchInput,
    derivatives: bool,
    dropout_masks: Option<&[Array2<f64>]>,
) -> Result<PiganoRecording, ModelError> {
    let params = bound.params();
    let config = match &params.config {
        ModelConfig::Pigano(c) => c,
        ModelConfig::Pipn(_) => {
            return Err(ModelError::WrongArchitecture { expected: "pigano", got: "pipn" })
        }
    };
    let (n, query_width) = query.dim();
    if n == 0 {
        return Err(ModelError::EmptyCloud { context: "query points" });
    }
    if query_width != config.dim {
        return Err(ModelError::FeatureShape {
            context: "query points",
            expected: config.dim,
            got: query_width,
        });
    }
    let (m, geom_width) = geometry.dim();
    if m == 0 {
        return Err(ModelError::EmptyCloud { context: "geometry cloud" });
    }
    if geom_width != config.geometry_feature_width() {
        return Err(ModelError::FeatureShape {
            context: "geometry cloud",
            expected: config.geometry_feature_width(),
            got: geom_width,
        });
    }
    if branch.len() != config.branch_points {
        return Err(ModelError::BranchCount { expected: config.branch_points, got: branch.len() });
    }
    if branch.dim != config.dim {
        return Err(ModelError::FeatureShape {
            context: "branch records",
            expected: config.dim,
            got: branch.dim,
        });
    }
    branch.validate()?;
    let masks = check_dropout_masks(&params.config, n, dropout_masks)?;
    let dirs = if derivatives { config.dim } else { 0 };
    let mut cursor = bound.cursor();

    // Geometry and branch paths carry no spatial channels: only their
    // pooled values condition the queries.
    let mut gx = tape.dual_constant(geometry.clone(), 0);
    for _ in &config.geometry_widths {
        let (w, b) = cursor.next_layer();
        gx = tape.dual_linear(&gx, w, b);
        gx = tape.dual_activation(&gx, config.activation);
    }
    let geometry_latent = tape.max_pool_rows(gx.value);

    let mut bx = tape.dual_constant(branch.feature_matrix(), 0);
    for _ in &config.branch_widths {
        let (w, b) = cursor.next_layer();
        bx = tape.dual_linear(&bx, w, b);
        bx = tape.dual_activation(&bx, config.activation);
    }
    let branch_latent = tape.max_pool_rows(bx.value);

    let mut t = tape.seed_coordinate_duals(query.clone(), dirs);
    for _ in &config.trunk_widths {
        let (w, b) = cursor.next_layer();
        t = tape.dual_linear(&t, w, b);
        t = tape.dual_activation(&t, config.activation);
    }

    let geom_rows = broadcast_constant_dual(tape, geometry_latent, n, dirs);
    let branch_rows = broadcast_constant_dual(tape, branch_latent, n, dirs);
    let conditioned = tape.dual_concat_cols(&t, &geom_rows);
    let mut y = tape.dual_concat_cols(&conditioned, &branch_rows);

    let first_site = first_dropout_site(config.head_widths.len());
    let mut next_mask = 0;
    for i in 0..config.head_widths.len() {
        let (w, b) = cursor.next_layer();
        y = tape.dual_linear(&y, w, b);
        y = tape.dual_activation(&y, config.activation);
        if let Some(masks) = masks {
            if i >= first_site {
                let mask = tape.input(masks[next_mask].clone());
                next_mask += 1;
                y = tape.dual_dropout(&y, mask);
            }
        }
    }
    let (w, b) = cursor.next_layer();
    let output = tape.dual_linear(&y, w, b);
    tape.mark_output(output.value);
    Ok(PiganoRecording { output, geometry_latent, branch_latent })
}

/// Evaluates the model at the query points, returning per-point (velocity,
/// pressure) rows in normalized units.
pub fn pigano_forward(
    params: &ModelParameters,
    query: &Array2<f64>,
    geometry: &Array2<f64>,
    branch: &BranchInput,
) -> Result<Array2<f64>, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let recording = record_pigano(&mut tape, &bound, query, geometry, branch, false, None)?;
    let out = tape.value(recording.output.value).clone();
    ensure_finite(&out, "model outputs")?;
    Ok(out)
}

/// Evaluates the model and its spatial derivatives at the query points.
pub fn pigano_derivatives(
    params: &ModelParameters,
    query: &Array2<f64>,
    geometry: &Array2<f64>,
    branch: &BranchInput,
) -> Result<CloudDerivatives, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let recording = record_pigano(&mut tape, &bound, query, geometry, branch, true, None)?;
    CloudDerivatives::from_tape(&tape, &recording.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Activation;
    use crate::models::{init_parameters, sample_dropout_masks, BranchRecord, PiganoConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small_config(branch_points: usize) -> ModelConfig {
        ModelConfig::Pigano(PiganoConfig {
            dim: 2,
            geometry_widths: vec![8, 10],
            branch_widths: vec![8],
            branch_points,
            trunk_widths: vec![8, 8],
            head_widths: vec![10, 8],
            activation: Activation::Tanh,
            dropout: 0.0,
        })
    }

    fn random_query(n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0))
    }

    fn random_geometry(m: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
        let mut f = Array2::zeros((m, 7));
        for i in 0..m {
            f[[i, 0]] = rng.random_range(-1.0..1.0);
            f[[i, 1]] = rng.random_range(-1.0..1.0);
            f[[i, 2]] = rng.random_range(-0.5..0.5);
            let tag = rng.random_range(0..5usize);
            if tag > 0 {
                f[[i, 2 + tag]] = 1.0;
            }
        }
        f
    }

    fn random_branch(m: usize, rng: &mut ChaCha20Rng) -> BranchInput {
        let records = (0..m)
            .map(|i| {
                let mut r = BranchRecord::passive(vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]);
                if i % 3 == 0 {
                    r.velocity = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    r.has_velocity = true;
                } else if i % 3 == 1 {
                    r.darcy = rng.random_range(0.0..1.0);
                    r.forchheimer = rng.random_range(0.0..1.0);
                    r.has_coefficients = true;
                }
                r
            })
            .collect();
        BranchInput { dim: 2, records }
    }

    #[test]
    fn forward_produces_velocity_and_pressure_rows() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = init_parameters(&small_config(6), 2).unwrap();
        let out = pigano_forward(
            &params,
            &random_query(9, &mut rng),
            &random_geometry(14, &mut rng),
            &random_branch(6, &mut rng),
        )
        .unwrap();
        assert_eq!(out.dim(), (9, 3));
    }

    #[test]
    fn shape_and_count_mismatches_are_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let params = init_parameters(&small_config(6), 2).unwrap();
        let query = random_query(4, &mut rng);
        let geometry = random_geometry(8, &mut rng);
        let branch = random_branch(6, &mut rng);

        assert!(matches!(
            pigano_forward(&params, &query, &geometry, &random_branch(5, &mut rng)),
            Err(ModelError::BranchCount { expected: 6, got: 5 })
        ));
        assert!(matches!(
            pigano_forward(&params, &query, &Array2::zeros((0, 7)), &branch),
            Err(ModelError::EmptyCloud { context: "geometry cloud" })
        ));
        assert!(matches!(
            pigano_forward(&params, &Array2::zeros((0, 2)), &geometry, &branch),
            Err(ModelError::EmptyCloud { context: "query points" })
        ));
        assert!(matches!(
            pigano_forward(&params, &random_query(4, &mut rng), &Array2::zeros((5, 6)), &branch),
            Err(ModelError::FeatureShape { context: "geometry cloud", .. })
        ));
        let pipn = init_parameters(
            &ModelConfig::Pipn(crate::models::PipnConfig::paper(2, Activation::Tanh, 0.0)),
            1,
        )
        .unwrap();
        assert!(matches!(
            pigano_forward(&pipn, &query, &geometry, &branch),
            Err(ModelError::WrongArchitecture { expected: "pigano", got: "pipn" })
        ));
    }

    #[test]
    fn geometry_and_branch_permutations_leave_outputs_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = init_parameters(&small_config(6), 6).unwrap();
        let query = random_query(7, &mut rng);
        let geometry = random_geometry(12, &mut rng);
        let branch = random_branch(6, &mut rng);
        let out = pigano_forward(&params, &query, &geometry, &branch).unwrap();

        let perm: Vec<usize> = (0..12).rev().collect();
        let geometry_perm = geometry.select(ndarray::Axis(0), &perm);
        let out_g = pigano_forward(&params, &query, &geometry_perm, &branch).unwrap();
        assert!(
            out.iter().zip(out_g.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "geometry permutation changed outputs"
        );

        let mut branch_perm = branch.clone();
        branch_perm.records.reverse();
        let out_b = pigano_forward(&params, &query, &geometry, &branch_perm).unwrap();
        assert!(
            out.iter().zip(out_b.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "branch permutation changed outputs"
        );
    }

    #[test]
    fn query_permutation_permutes_outputs_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let params = init_parameters(&small_config(5), 8).unwrap();
        let query = random_query(9, &mut rng);
        let geometry = random_geometry(10, &mut rng);
        let branch = random_branch(5, &mut rng);
        let out = pigano_forward(&params, &query, &geometry, &branch).unwrap();

        let perm: Vec<usize> = (0..9).rev().collect();
        let query_perm = query.select(ndarray::Axis(0), &perm);
        let out_perm = pigano_forward(&params, &query_perm, &geometry, &branch).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(out_perm[[row, c]].to_bits(), out[[src, c]].to_bits());
            }
        }
    }

    #[test]
    fn branch_conditions_steer_the_outputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let params = init_parameters(&small_config(6), 10).unwrap();
        let query = random_query(6, &mut rng);
        let geometry = random_geometry(10, &mut rng);
        let branch = random_branch(6, &mut rng);
        let out = pigano_forward(&params, &query, &geometry, &branch).unwrap();

        let mut faster = branch.clone();
        let inlet = faster.records.iter_mut().find(|r| r.has_velocity).unwrap();
        inlet.velocity[0] += 0.5;
        let out_faster = pigano_forward(&params, &query, &geometry, &faster).unwrap();
        assert_ne!(out, out_faster, "inlet velocity change left outputs untouched");
    }

    #[test]
    fn moving_a_geometry_point_changes_the_latent() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let params = init_parameters(&small_config(4), 12).unwrap();
        let geometry = random_geometry(9, &mut rng);
        // Push the point far outside the cloud so it wins at least one
        // pooled channel; a small nudge may leave every winner unchanged.
        let mut shifted = geometry.clone();
        shifted[[4, 0]] += 2.5;
        shifted[[4, 1]] -= 2.5;
        let branch = random_branch(4, &mut rng);
        let query = random_query(3, &mut rng);

        let latent = |g: &Array2<f64>| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let rec = record_pigano(&mut tape, &bound, &query, g, &branch, false, None).unwrap();
            tape.value(rec.geometry_latent).clone()
        };
        assert_ne!(latent(&geometry), latent(&shifted));
    }

    #[test]
    fn spatial_derivatives_match_finite_differences_at_the_queries() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let params = init_parameters(&small_config(5), 14).unwrap();
        let query = random_query(10, &mut rng);
        let geometry = random_geometry(11, &mut rng);
        let branch = random_branch(5, &mut rng);
        let derivs = pigano_derivatives(&params, &query, &geometry, &branch).unwrap();

        // Two-scale stencil: first differences tolerate a small step, second
        // differences divide by h^2 and need a larger one to stay clear of
        // rounding noise.
        let h1 = 1e-5;
        let h2 = 1e-4;
        for point in 0..10 {
            for k in 0..2 {
                let probe = |offset: f64| {
                    let mut moved = query.clone();
                    moved[[point, k]] += offset;
                    pigano_forward(&params, &moved, &geometry, &branch).unwrap()
                };
                let (u1, d1) = (probe(h1), probe(-h1));
                let (u2, d2) = (probe(h2), probe(-h2));
                for out in 0..3 {
                    let fd1 = (u1[[point, out]] - d1[[point, out]]) / (2.0 * h1);
                    let fd2 = (u2[[point, out]] - 2.0 * derivs.values[[point, out]]
                        + d2[[point, out]])
                        / (h2 * h2);
                    let an1 = derivs.jacobian(point)[[out, k]];
                    let an2 = derivs.second_derivatives(point)[[out, k]];
                    assert!(
                        (an1 - fd1).abs() / fd1.abs().max(1e-7) < 1e-5,
                        "point {point} dir {k} out {out}: d1 {an1} vs {fd1}"
                    );
                    assert!(
                        (an2 - fd2).abs() / fd2.abs().max(1e-4) < 1e-3,
                        "point {point} dir {k} out {out}: d2 {an2} vs {fd2}"
                    );
                }
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences_through_derivatives() {
        let config = ModelConfig::Pigano(PiganoConfig {
            dim: 2,
            geometry_widths: vec![4],
            branch_widths: vec![4],
            branch_points: 3,
            trunk_widths: vec![4],
            head_widths: vec![],
            activation: Activation::Tanh,
            dropout: 0.0,
        });
        let params = init_parameters(&config, 15).unwrap();
        assert!(params.count() <= 200, "gradient check wants a small model");
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let query = random_query(5, &mut rng);
        let geometry = random_geometry(6, &mut rng);
        let branch = random_branch(3, &mut rng);

        let objective = |p: &ModelParameters, trainable: bool| {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape, trainable);
            let rec =
                record_pigano(&mut tape, &bound, &query, &geometry, &branch, true, None).unwrap();
            let s0 = tape.sum_all(rec.output.value);
            let s1 = tape.sum_all(rec.output.d2[0]);
            let s2 = tape.sum_all(rec.output.d2[1]);
            let partial = tape.add(s0, s1);
            let total = tape.add(partial, s2);
            let value = tape.scalar(total);
            let grads = trainable.then(|| tape.backward(total).unwrap());
            (value, grads)
        };
        let (_, grads) = objective(&params, true);
        let grads = grads.unwrap();

        let h = 1e-5;
        for ti in 0..params.tensors().len() {
            let shape = params.tensors()[ti].values.dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let mut up = params.clone();
                    up.tensors_mut()[ti].values[[r, c]] += h;
                    let mut down = params.clone();
                    down.tensors_mut()[ti].values[[r, c]] -= h;
                    let fd = (objective(&up, false).0 - objective(&down, false).0) / (2.0 * h);
                    let an = grads.get(crate::ad::ParamId(ti as u32))[[r, c]];
                    assert!(
                        (an - fd).abs() / fd.abs().max(1e-6) < 1e-4,
                        "tensor {} ({r},{c}): analytic {an} vs fd {fd}",
                        params.tensors()[ti].name
                    );
                }
            }
        }
    }

    #[test]
    fn zero_rate_dropout_matches_evaluation_exactly() {
        let config = small_config(4);
        let params = init_parameters(&config, 18).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let query = random_query(6, &mut rng);
        let geometry = random_geometry(8, &mut rng);
        let branch = random_branch(4, &mut rng);
        let eval = pigano_forward(&params, &query, &geometry, &branch).unwrap();

        let masks = sample_dropout_masks(&config, 6, &mut rng);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let rec =
            record_pigano(&mut tape, &bound, &query, &geometry, &branch, false, Some(&masks))
                .unwrap();
        assert_eq!(tape.value(rec.output.value), &eval);
    }
}
