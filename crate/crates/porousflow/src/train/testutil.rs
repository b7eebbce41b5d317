//! Case, model, and derivative builders shared by the training tests.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::ad::Activation;
use crate::dataset::{
    CaseMeta, FlowSample, NormalizationStats, PointCloudCase, PointRecord,
};
use crate::geometry::BoundaryTag;
use crate::models::{
    init_parameters, CloudDerivatives, ModelConfig, ModelParameters, PiganoConfig, PipnConfig,
};
use crate::physics::{mms, FluidProperties};

/// Grid case on `[0, 2 pi]^2` with exact trigonometric reference fields.
///
/// Edge points are walls. With `porous_left`, the half plane x < pi is
/// porous and the interface sits at x = pi. Every `observe_every`-th point
/// becomes an observation, and the manufactured forcing is switched on so
/// the reference fields solve the governing equations exactly.
pub(crate) fn mms_grid_case(
    nx: usize,
    ny: usize,
    porous_left: bool,
    darcy: f64,
    forchheimer: f64,
    observe_every: usize,
) -> PointCloudCase {
    let props = FluidProperties::unit();
    let mut points = Vec::new();
    let mut reference = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let x = 2.0 * PI * ix as f64 / (nx - 1) as f64;
            let y = 2.0 * PI * iy as f64 / (ny - 1) as f64;
            let edge = ix == 0 || iy == 0 || ix == nx - 1 || iy == ny - 1;
            let sdf = if porous_left { x - PI } else { 1.0 };
            points.push(PointRecord {
                coords: vec![x, y],
                chi: u8::from(sdf < 0.0),
                sdf,
                boundary: if edge { BoundaryTag::Wall } else { BoundaryTag::Interior },
                darcy: 0.0,
                forchheimer: 0.0,
            });
            let u = mms::velocity(&[x, y]);
            reference.push(FlowSample {
                velocity: u.to_vec(),
                pressure: mms::pressure(&[x, y], props),
            });
        }
    }
    let observations = (0..points.len()).filter(|i| i % observe_every == 0).collect();
    let mut case = PointCloudCase {
        dim: 2,
        points,
        reference: Some(reference),
        observations,
        meta: CaseMeta {
            inlet_speed: 1.0,
            inlet_angle: 0.0,
            fluid: props,
            darcy,
            forchheimer,
            manufactured_forcing: true,
            provenance: "trigonometric grid test case".to_string(),
        },
    };
    case.assign_porous_coefficients(darcy, forchheimer);
    case.validate().expect("builder produces a valid case");
    case
}

/// Grid case with the full set of boundary roles: inlet on the left edge,
/// outlet on the right, walls top and bottom, a porous strip over
/// x in [pi, 3 pi / 2] with interface rows where the grid lands on its
/// edges, exact trigonometric reference fields, and observations.
pub(crate) fn annotated_mms_case(
    nx: usize,
    ny: usize,
    darcy: f64,
    forchheimer: f64,
) -> PointCloudCase {
    let props = FluidProperties::unit();
    let strip = (PI, 1.5 * PI);
    let mut points = Vec::new();
    let mut reference = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let x = 2.0 * PI * ix as f64 / (nx - 1) as f64;
            let y = 2.0 * PI * iy as f64 / (ny - 1) as f64;
            let sdf = if x < strip.0 {
                strip.0 - x
            } else if x > strip.1 {
                x - strip.1
            } else {
                -((x - strip.0).min(strip.1 - x))
            };
            let ring = if ix == 0 {
                Some(BoundaryTag::Inlet)
            } else if ix == nx - 1 {
                Some(BoundaryTag::Outlet)
            } else if iy == 0 || iy == ny - 1 {
                Some(BoundaryTag::Wall)
            } else {
                None
            };
            let (boundary, chi) = match ring {
                Some(tag) => (tag, u8::from(sdf < 0.0)),
                None if sdf.abs() <= 1e-9 => (BoundaryTag::Interface, 1),
                None => (BoundaryTag::Interior, u8::from(sdf < 0.0)),
            };
            points.push(PointRecord {
                coords: vec![x, y],
                chi,
                sdf,
                boundary,
                darcy: 0.0,
                forchheimer: 0.0,
            });
            let u = mms::velocity(&[x, y]);
            reference.push(FlowSample {
                velocity: u.to_vec(),
                pressure: mms::pressure(&[x, y], props),
            });
        }
    }
    let observations = (0..points.len()).filter(|i| i % 5 == 0).collect();
    let mut case = PointCloudCase {
        dim: 2,
        points,
        reference: Some(reference),
        observations,
        meta: CaseMeta {
            inlet_speed: 1.0,
            inlet_angle: 0.0,
            fluid: props,
            darcy,
            forchheimer,
            manufactured_forcing: true,
            provenance: "annotated trigonometric test case".to_string(),
        },
    };
    case.assign_porous_coefficients(darcy, forchheimer);
    case.validate().expect("builder produces a valid case");
    case
}

/// Point-cloud model small enough for finite-difference sweeps.
pub(crate) fn tiny_pipn(activation: Activation) -> ModelParameters {
    let config = ModelConfig::Pipn(PipnConfig {
        dim: 2,
        local_widths: vec![4],
        global_widths: vec![6],
        decoder_widths: vec![],
        activation,
        dropout: 0.0,
    });
    init_parameters(&config, 9).expect("valid test configuration")
}

/// Conditioned model small enough for finite-difference sweeps.
pub(crate) fn tiny_pigano() -> ModelParameters {
    let config = ModelConfig::Pigano(PiganoConfig {
        dim: 2,
        geometry_widths: vec![4],
        branch_widths: vec![4],
        branch_points: 4,
        trunk_widths: vec![4],
        head_widths: vec![],
        activation: Activation::Tanh,
        dropout: 0.0,
    });
    init_parameters(&config, 17).expect("valid test configuration")
}

/// Normalized derivatives of the exact trigonometric fields.
///
/// Mimics a perfect model: outputs are the Z-scored reference fields, and
/// every derivative channel carries the chain-rule factor that converts a
/// physical derivative to one taken with respect to normalized inputs.
pub(crate) fn analytic_mms_derivatives(
    case: &PointCloudCase,
    stats: &NormalizationStats,
) -> CloudDerivatives {
    assert_eq!(case.dim, 2, "trigonometric fields are two-dimensional");
    let n = case.points.len();
    let dim = case.dim;
    let props = case.meta.fluid;
    let mut values = Array2::zeros((n, dim + 1));
    let mut first = vec![Array2::zeros((n, dim + 1)); dim];
    let mut second = vec![Array2::zeros((n, dim + 1)); dim];
    for (i, p) in case.points.iter().enumerate() {
        let x = &p.coords;
        let u = mms::velocity(x);
        let pr = mms::pressure(x, props);
        for j in 0..dim {
            values[[i, j]] = stats.velocity[j].normalize(u[j]);
        }
        values[[i, dim]] = stats.pressure.normalize(pr);
        let jac = mms::velocity_jacobian(x);
        let grad_p = mms::pressure_gradient(x, props);
        // Every pure second derivative of these velocity fields is the
        // negated field itself; the pressure seconds follow the doubled
        // angles.
        let d2p = [props.rho * (2.0 * x[0]).cos(), props.rho * (2.0 * x[1]).cos()];
        for k in 0..dim {
            let sx = stats.coords[k].std;
            for j in 0..dim {
                first[k][[i, j]] = sx / stats.velocity[j].std * jac[[j, k]];
                second[k][[i, j]] = sx * sx / stats.velocity[j].std * (-u[j]);
            }
            first[k][[i, dim]] = sx / stats.pressure.std * grad_p[k];
            second[k][[i, dim]] = sx * sx / stats.pressure.std * d2p[k];
        }
    }
    CloudDerivatives { values, first, second }
}

/// Seeded random derivative channels for invariance tests.
pub(crate) fn random_derivatives(n: usize, dim: usize, seed: u64) -> CloudDerivatives {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha20Rng| {
        Array2::from_shape_fn((n, dim + 1), |_| rng.random_range(-0.5..0.5))
    };
    let values = draw(&mut rng);
    let first = (0..dim).map(|_| draw(&mut rng)).collect();
    let second = (0..dim).map(|_| draw(&mut rng)).collect();
    CloudDerivatives { values, first, second }
}
