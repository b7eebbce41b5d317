//! Manufactured solution for verifying residuals and training end to end.
//!
//! The prescribed two-dimensional fields on `[0, 2 pi]^2` are
//!
//! ```text
//! u_x =  cos(x) sin(y)
//! u_y = -cos(y) sin(x)
//! p   = -(rho / 4) (cos(2x) + cos(2y))
//! ```
//!
//! The velocity is divergence-free and the pressure gradient cancels the
//! convective term exactly, so the momentum balance reduces to the viscous
//! and drag terms. Substituting the fields gives the forcing
//!
//! ```text
//! f = 2 mu u + chi (mu D + rho F |u| / 2) u
//! ```
//!
//! identical in structure for both components (the Laplacian of each velocity
//! component is `-2` times itself). The drag part reuses the smoothed
//! magnitude from the residual so the cancellation is exact, not just up to
//! the smoothing constant.

use ndarray::Array2;

use super::{drag_coefficient, velocity_magnitude, FluidProperties, PorousCoefficients, Region};

/// Manufactured velocity at a 2D point.
pub fn velocity(point: &[f64]) -> [f64; 2] {
    let (x, y) = (point[0], point[1]);
    [x.cos() * y.sin(), -(y.cos() * x.sin())]
}

/// Manufactured pressure at a 2D point.
pub fn pressure(point: &[f64], props: FluidProperties) -> f64 {
    let (x, y) = (point[0], point[1]);
    -(props.rho / 4.0) * ((2.0 * x).cos() + (2.0 * y).cos())
}

/// Closed-form velocity Jacobian, `jacobian[[i, k]] = d u_i / d x_k`.
pub fn velocity_jacobian(point: &[f64]) -> Array2<f64> {
    let (x, y) = (point[0], point[1]);
    ndarray::array![
        [-(x.sin()) * y.sin(), x.cos() * y.cos()],
        [-(y.cos()) * x.cos(), y.sin() * x.sin()],
    ]
}

/// Closed-form velocity Laplacian; each component equals `-2` times itself.
pub fn velocity_laplacian(point: &[f64]) -> [f64; 2] {
    let u = velocity(point);
    [-2.0 * u[0], -2.0 * u[1]]
}

/// Closed-form pressure gradient.
pub fn pressure_gradient(point: &[f64], props: FluidProperties) -> [f64; 2] {
    let (x, y) = (point[0], point[1]);
    [
        (props.rho / 2.0) * (2.0 * x).sin(),
        (props.rho / 2.0) * (2.0 * y).sin(),
    ]
}

/// Forcing that makes the manufactured fields satisfy the momentum balance:
/// `f = 2 mu u + chi (mu D + rho F |u| / 2) u`.
pub fn forcing(
    point: &[f64],
    props: FluidProperties,
    coeffs: PorousCoefficients,
    region: Region,
) -> [f64; 2] {
    let u = velocity(point);
    let drag = region.indicator() * drag_coefficient(velocity_magnitude(&u), props, coeffs);
    [
        (2.0 * props.mu + drag) * u[0],
        (2.0 * props.mu + drag) * u[1],
    ]
}
