//! Residuals evaluated directly on normalized network outputs.
//!
//! Networks see Z-scored coordinates and fields, so their derivatives are
//! taken with respect to normalized coordinates. Rather than denormalizing
//! every quantity before applying the governing equations, the chain-rule
//! ratios are folded into the residual coefficients. Each scaled residual
//! differs from its physical counterpart by a fixed positive factor per
//! equation:
//!
//! * continuity: factor 1 (the sigma ratios already restore physical units),
//! * momentum component `i`: factor `sigma_u[i]^2 / sigma_x[i]`, which makes
//!   the leading convective coefficient of the scaled equation exactly `rho`.
//!
//! With identity normalization (unit sigmas, zero means) scaled and physical
//! residuals coincide.

use ndarray::Array2;

use super::{drag_coefficient, velocity_magnitude, FluidProperties, PhysicsError, PorousCoefficients, Region};

/// Chain-rule coefficients tying normalized derivatives to physical
/// residuals. Construct via [`ResidualScaling::new`] with the normalization
/// scales; all scales must be strictly positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualScaling {
    mean_u: Vec<f64>,
    sigma_u: Vec<f64>,
    sigma_x: Vec<f64>,
    sigma_p: f64,
}

impl ResidualScaling {
    pub fn new(
        mean_u: Vec<f64>,
        sigma_u: Vec<f64>,
        sigma_x: Vec<f64>,
        sigma_p: f64,
    ) -> Result<Self, PhysicsError> {
        let dim = mean_u.len();
        if sigma_u.len() != dim || sigma_x.len() != dim {
            return Err(PhysicsError::DimensionMismatch {
                context: "residual scaling sigmas",
                expected: dim,
                got: sigma_u.len().min(sigma_x.len()),
            });
        }
        for (name, values) in [("velocity scale", &sigma_u), ("coordinate scale", &sigma_x)] {
            if let Some(&bad) = values.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(PhysicsError::NonPositive { name, value: bad });
            }
        }
        if !(sigma_p.is_finite() && sigma_p > 0.0) {
            return Err(PhysicsError::NonPositive { name: "pressure scale", value: sigma_p });
        }
        if let Some(&bad) = mean_u.iter().find(|m| !m.is_finite()) {
            return Err(PhysicsError::NonPositive { name: "velocity mean", value: bad });
        }
        Ok(ResidualScaling { mean_u, sigma_u, sigma_x, sigma_p })
    }

    pub fn dim(&self) -> usize {
        self.mean_u.len()
    }

    pub fn mean_u(&self) -> &[f64] {
        &self.mean_u
    }

    pub fn sigma_u(&self) -> &[f64] {
        &self.sigma_u
    }

    pub fn sigma_x(&self) -> &[f64] {
        &self.sigma_x
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    /// Factor relating the scaled momentum residual `i` to the physical one:
    /// `physical = factor * scaled`. Strictly positive by construction.
    pub fn momentum_factor(&self, i: usize) -> f64 {
        self.sigma_u[i] * self.sigma_u[i] / self.sigma_x[i]
    }

    /// The continuity residual is already in physical units.
    pub fn continuity_factor(&self) -> f64 {
        1.0
    }

    /// Continuity residual from the normalized Jacobian:
    /// `sum_k (sigma_u[k] / sigma_x[k]) d u_hat_k / d x_hat_k`.
    pub fn scaled_continuity(&self, jacobian_hat: &Array2<f64>) -> f64 {
        (0..self.dim())
            .map(|k| self.sigma_u[k] / self.sigma_x[k] * jacobian_hat[[k, k]])
            .sum()
    }

    /// Momentum residual from normalized outputs and derivatives.
    ///
    /// `second_hat[[i, k]]` holds the pure second derivative of normalized
    /// velocity `i` along normalized coordinate `k`; the anisotropic sigma
    /// ratios forbid pre-summing it into a Laplacian. The forcing, drag
    /// coefficients, and fluid properties stay in physical units.
    #[allow(clippy::too_many_arguments)]
    pub fn scaled_momentum(
        &self,
        u_hat: &[f64],
        jacobian_hat: &Array2<f64>,
        second_hat: &Array2<f64>,
        grad_p_hat: &[f64],
        props: FluidProperties,
        coeffs: PorousCoefficients,
        region: Region,
        forcing: Option<&[f64]>,
    ) -> Result<Vec<f64>, PhysicsError> {
        let dim = self.dim();
        if u_hat.len() != dim {
            return Err(PhysicsError::DimensionMismatch {
                context: "scaled momentum velocity",
                expected: dim,
                got: u_hat.len(),
            });
        }
        if grad_p_hat.len() != dim {
            return Err(PhysicsError::DimensionMismatch {
                context: "scaled momentum pressure gradient",
                expected: dim,
                got: grad_p_hat.len(),
            });
        }

        let u_phys: Vec<f64> = (0..dim).map(|i| self.mean_u[i] + self.sigma_u[i] * u_hat[i]).collect();
        let drag =
            region.indicator() * drag_coefficient(velocity_magnitude(&u_phys), props, coeffs);

        let mut residual = Vec::with_capacity(dim);
        for i in 0..dim {
            let gamma = self.sigma_x[i] / (self.sigma_u[i] * self.sigma_u[i]);
            let mut r = 0.0;
            for k in 0..dim {
                // Convective term with the per-direction chain-rule ratio.
                let coeff = props.rho * self.sigma_x[i] / (self.sigma_u[i] * self.sigma_x[k]);
                r += u_phys[k] * coeff * jacobian_hat[[i, k]];
                // Viscous term: second derivative picks up 1 / sigma_x^2.
                let visc = props.mu * self.sigma_x[i]
                    / (self.sigma_u[i] * self.sigma_x[k] * self.sigma_x[k]);
                r -= visc * second_hat[[i, k]];
            }
            r += self.sigma_p / (self.sigma_u[i] * self.sigma_u[i]) * grad_p_hat[i];
            r += drag * u_phys[i] * gamma;
            if let Some(f) = forcing {
                r -= f[i] * gamma;
            }
            residual.push(r);
        }
        Ok(residual)
    }
}
