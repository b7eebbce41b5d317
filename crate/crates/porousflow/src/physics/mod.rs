//! Governing equations for steady incompressible flow with porous regions.
//!
//! Fluid regions satisfy mass conservation and steady Navier-Stokes momentum
//! balance. Porous regions add a Darcy-Forchheimer drag, gated by a binary
//! region indicator so one residual expression covers both:
//!
//! ```text
//! div(u) = 0
//! rho (u . grad) u + grad p - mu lap(u) + chi (mu D + rho F |u| / 2) u = f
//! ```
//!
//! `D` and `F` follow the packed-bed closure in
//! [`darcy_forchheimer_from_porosity`]. The velocity magnitude in the drag is
//! smoothed as `sqrt(u . u + 1e-12)` so derivatives exist at stagnation
//! points; [`mms`] uses the same smoothing so manufactured forcings cancel
//! the drag exactly.

pub mod mms;
mod scaling;

pub use scaling::ResidualScaling;

use ndarray::Array2;
use thiserror::Error;

/// Smoothing constant under the square root of velocity magnitudes.
pub const MAGNITUDE_SMOOTHING: f64 = 1e-12;

/// Errors from constructing or evaluating the governing equations.
#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("porosity must lie strictly inside (0, 1), got {0}")]
    PorosityOutOfRange(f64),
    #[error("region indicator must be 0 or 1, got {0}")]
    BadIndicator(f64),
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Density and dynamic viscosity of the working fluid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluidProperties {
    pub rho: f64,
    pub mu: f64,
}

impl FluidProperties {
    pub fn new(rho: f64, mu: f64) -> Result<Self, PhysicsError> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(PhysicsError::NonPositive { name: "density", value: rho });
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(PhysicsError::NonPositive { name: "viscosity", value: mu });
        }
        Ok(FluidProperties { rho, mu })
    }

    /// Unit density and viscosity, the manufactured-solution default.
    pub fn unit() -> Self {
        FluidProperties { rho: 1.0, mu: 1.0 }
    }
}

/// Darcy (viscous) and Forchheimer (inertial) drag coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PorousCoefficients {
    pub darcy: f64,
    pub forchheimer: f64,
}

impl PorousCoefficients {
    pub fn new(darcy: f64, forchheimer: f64) -> Result<Self, PhysicsError> {
        if !(darcy.is_finite() && darcy >= 0.0) {
            return Err(PhysicsError::Negative { name: "Darcy coefficient", value: darcy });
        }
        if !(forchheimer.is_finite() && forchheimer >= 0.0) {
            return Err(PhysicsError::Negative {
                name: "Forchheimer coefficient",
                value: forchheimer,
            });
        }
        Ok(PorousCoefficients { darcy, forchheimer })
    }

    /// No drag at all; what a pure fluid case carries.
    pub fn none() -> Self {
        PorousCoefficients { darcy: 0.0, forchheimer: 0.0 }
    }
}

/// Which side of the porous interface a point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Fluid,
    Porous,
}

impl Region {
    /// The binary gate multiplying the drag term.
    pub fn indicator(self) -> f64 {
        match self {
            Region::Fluid => 0.0,
            Region::Porous => 1.0,
        }
    }

    pub fn from_indicator(chi: f64) -> Result<Self, PhysicsError> {
        if chi == 0.0 {
            Ok(Region::Fluid)
        } else if chi == 1.0 {
            Ok(Region::Porous)
        } else {
            Err(PhysicsError::BadIndicator(chi))
        }
    }
}

/// Packed-bed drag closure:
/// `D = 180 (1 - phi)^2 / (dp^2 phi^3)`, `F = 1.8 (1 - phi) / (dp phi^3)`.
///
/// Porosity must lie strictly inside (0, 1) and the particle diameter must
/// be positive.
pub fn darcy_forchheimer_from_porosity(
    porosity: f64,
    particle_diameter: f64,
) -> Result<PorousCoefficients, PhysicsError> {
    if !(porosity.is_finite() && porosity > 0.0 && porosity < 1.0) {
        return Err(PhysicsError::PorosityOutOfRange(porosity));
    }
    if !(particle_diameter.is_finite() && particle_diameter > 0.0) {
        return Err(PhysicsError::NonPositive {
            name: "particle diameter",
            value: particle_diameter,
        });
    }
    let solid = 1.0 - porosity;
    let phi3 = porosity.powi(3);
    let darcy = 180.0 * solid * solid / (particle_diameter * particle_diameter * phi3);
    let forchheimer = 1.8 * solid / (particle_diameter * phi3);
    Ok(PorousCoefficients { darcy, forchheimer })
}

/// Smoothed Euclidean norm used by the drag term.
pub fn velocity_magnitude(u: &[f64]) -> f64 {
    (u.iter().map(|c| c * c).sum::<f64>() + MAGNITUDE_SMOOTHING).sqrt()
}

/// Scalar drag coefficient `mu D + rho F |u| / 2` multiplying the velocity.
pub fn drag_coefficient(
    velocity_magnitude: f64,
    props: FluidProperties,
    coeffs: PorousCoefficients,
) -> f64 {
    props.mu * coeffs.darcy + 0.5 * props.rho * coeffs.forchheimer * velocity_magnitude
}

/// Mass-conservation residual: the trace of the velocity Jacobian.
///
/// `jacobian[[i, k]]` holds `d u_i / d x_k`.
pub fn continuity_residual(jacobian: &Array2<f64>) -> f64 {
    assert_eq!(jacobian.nrows(), jacobian.ncols(), "velocity jacobian must be square");
    (0..jacobian.nrows()).map(|i| jacobian[[i, i]]).sum()
}

/// Momentum residual per component:
///
/// `rho (u . grad) u_i + dp/dx_i - mu lap(u_i) + chi (mu D + rho F |u|/2) u_i - f_i`
///
/// A zero residual means the fields satisfy the governing equations at this
/// point. `forcing` of `None` means an unforced flow.
#[allow(clippy::too_many_arguments)]
pub fn momentum_residual(
    u: &[f64],
    jacobian: &Array2<f64>,
    laplacian: &[f64],
    grad_p: &[f64],
    props: FluidProperties,
    coeffs: PorousCoefficients,
    region: Region,
    forcing: Option<&[f64]>,
) -> Result<Vec<f64>, PhysicsError> {
    let dim = u.len();
    let check = |name: &'static str, got: usize| {
        if got == dim {
            Ok(())
        } else {
            Err(PhysicsError::DimensionMismatch { context: name, expected: dim, got })
        }
    };
    check("laplacian", laplacian.len())?;
    check("pressure gradient", grad_p.len())?;
    check("jacobian rows", jacobian.nrows())?;
    check("jacobian columns", jacobian.ncols())?;
    if let Some(f) = forcing {
        check("forcing", f.len())?;
    }

    let chi = region.indicator();
    let drag = chi * drag_coefficient(velocity_magnitude(u), props, coeffs);
    let mut residual = Vec::with_capacity(dim);
    for i in 0..dim {
        let convective: f64 = (0..dim).map(|k| u[k] * jacobian[[i, k]]).sum();
        let mut r = props.rho * convective + grad_p[i] - props.mu * laplacian[i] + drag * u[i];
        if let Some(f) = forcing {
            r -= f[i];
        }
        residual.push(r);
    }
    Ok(residual)
}
