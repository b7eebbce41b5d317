//! Scalar forward-mode duals carrying value, first, and second derivative.
//!
//! A [`Dual2`] tracks a function of one scalar parameter `t` (a point moving
//! along a fixed direction). Arithmetic follows the truncated Taylor rules,
//! so after evaluating `f(x + t v)` the fields hold `f`, `df/dt`, `d2f/dt2`
//! at `t = 0`. This gives exact directional derivatives without graph
//! bookkeeping and is the reference semantics the tensor tape must match.

use super::AdError;

/// Value with first and second derivative along one direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual2 {
    /// A constant: zero first and second derivative.
    pub fn constant(value: f64) -> Self {
        Dual2 { value, d1: 0.0, d2: 0.0 }
    }

    /// A coordinate moving with the given tangent (second derivative zero,
    /// since the path `x + t v` is straight).
    pub fn variable(value: f64, tangent: f64) -> Self {
        Dual2 { value, d1: tangent, d2: 0.0 }
    }

    /// Chain rule through a scalar map `g` with derivatives `g'`, `g''`:
    /// `(g∘f)' = g'(f) f'` and `(g∘f)'' = g''(f) f'^2 + g'(f) f''`.
    #[inline]
    fn compose(self, g: f64, dg: f64, ddg: f64) -> Self {
        Dual2 {
            value: g,
            d1: dg * self.d1,
            d2: ddg * self.d1 * self.d1 + dg * self.d2,
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.compose(e, e, e)
    }

    pub fn ln(self) -> Self {
        let v = self.value;
        self.compose(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.compose(s, 0.5 / s, -0.25 / (s * s * s))
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        let sech2 = 1.0 - t * t;
        self.compose(t, sech2, -2.0 * t * sech2)
    }

    /// `x * sigmoid(x)`, the SiLU activation.
    pub fn silu(self) -> Self {
        let x = self.value;
        let s = 1.0 / (1.0 + (-x).exp());
        let sp = s * (1.0 - s);
        // f = x s, f' = s + x s', f'' = 2 s' + x s'' with s'' = s'(1 - 2s).
        let g = x * s;
        let dg = s + x * sp;
        let ddg = 2.0 * sp + x * sp * (1.0 - 2.0 * s);
        self.compose(g, dg, ddg)
    }

    pub fn powi(self, n: i32) -> Self {
        let v = self.value;
        let g = v.powi(n);
        let dg = f64::from(n) * v.powi(n - 1);
        let ddg = f64::from(n) * f64::from(n - 1) * v.powi(n - 2);
        self.compose(g, dg, ddg)
    }

    pub fn powf(self, p: f64) -> Self {
        let v = self.value;
        self.compose(v.powf(p), p * v.powf(p - 1.0), p * (p - 1.0) * v.powf(p - 2.0))
    }

    pub fn recip(self) -> Self {
        let v = self.value;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    /// Smoothed absolute value `sqrt(x^2 + 1e-12)`, differentiable at zero.
    /// Matches the smoothing applied to velocity magnitudes in the drag term.
    pub fn smooth_abs(self) -> Self {
        (self * self + 1e-12).sqrt()
    }

    /// Pointwise maximum by value; on a tie the left operand wins, matching
    /// the tape's lowest-index pooling rule.
    pub fn max(self, other: Self) -> Self {
        if other.value > self.value {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other.value < self.value {
            other
        } else {
            self
        }
    }

    /// True when value and both derivatives are finite.
    pub fn is_finite(self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl std::ops::Add for Dual2 {
    type Output = Dual2;
    fn add(self, rhs: Dual2) -> Dual2 {
        Dual2 {
            value: self.value + rhs.value,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl std::ops::Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, rhs: Dual2) -> Dual2 {
        Dual2 {
            value: self.value - rhs.value,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
        }
    }
}

impl std::ops::Mul for Dual2 {
    type Output = Dual2;
    /// Product rule: `(fg)'' = f''g + 2 f'g' + fg''`.
    fn mul(self, rhs: Dual2) -> Dual2 {
        Dual2 {
            value: self.value * rhs.value,
            d1: self.d1 * rhs.value + self.value * rhs.d1,
            d2: self.d2 * rhs.value + 2.0 * self.d1 * rhs.d1 + self.value * rhs.d2,
        }
    }
}

impl std::ops::Div for Dual2 {
    type Output = Dual2;
    /// Quotient via `q = f/g`: `q' = (f' - q g')/g`, `q'' = (f'' - 2q'g' - qg'')/g`.
    /// Division by zero follows IEEE semantics; the resulting non-finite
    /// values are reported when derivatives are extracted.
    fn div(self, rhs: Dual2) -> Dual2 {
        let q = self.value / rhs.value;
        let dq = (self.d1 - q * rhs.d1) / rhs.value;
        let ddq = (self.d2 - 2.0 * dq * rhs.d1 - q * rhs.d2) / rhs.value;
        Dual2 { value: q, d1: dq, d2: ddq }
    }
}

impl std::ops::Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        Dual2 { value: -self.value, d1: -self.d1, d2: -self.d2 }
    }
}

impl std::ops::Add<f64> for Dual2 {
    type Output = Dual2;
    fn add(self, rhs: f64) -> Dual2 {
        Dual2 { value: self.value + rhs, ..self }
    }
}

impl std::ops::Add<Dual2> for f64 {
    type Output = Dual2;
    fn add(self, rhs: Dual2) -> Dual2 {
        rhs + self
    }
}

impl std::ops::Sub<f64> for Dual2 {
    type Output = Dual2;
    fn sub(self, rhs: f64) -> Dual2 {
        Dual2 { value: self.value - rhs, ..self }
    }
}

impl std::ops::Sub<Dual2> for f64 {
    type Output = Dual2;
    fn sub(self, rhs: Dual2) -> Dual2 {
        -rhs + self
    }
}

impl std::ops::Mul<f64> for Dual2 {
    type Output = Dual2;
    fn mul(self, rhs: f64) -> Dual2 {
        Dual2 { value: self.value * rhs, d1: self.d1 * rhs, d2: self.d2 * rhs }
    }
}

impl std::ops::Mul<Dual2> for f64 {
    type Output = Dual2;
    fn mul(self, rhs: Dual2) -> Dual2 {
        rhs * self
    }
}

impl std::ops::Div<f64> for Dual2 {
    type Output = Dual2;
    fn div(self, rhs: f64) -> Dual2 {
        Dual2 { value: self.value / rhs, d1: self.d1 / rhs, d2: self.d2 / rhs }
    }
}

impl std::ops::Div<Dual2> for f64 {
    type Output = Dual2;
    fn div(self, rhs: Dual2) -> Dual2 {
        Dual2::constant(self) / rhs
    }
}

/// Per-output value and directional derivatives returned by
/// [`directional_derivatives`].
#[derive(Clone, Debug)]
pub struct DirectionalDerivatives {
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// First and second derivative of `f(x + t v)` with respect to `t` at `t = 0`.
///
/// `v` must be unit norm so the result is a true directional derivative.
/// Non-finite outputs (for example after a division by zero inside `f`) are
/// rejected rather than silently returned.
pub fn directional_derivatives<F>(
    f: F,
    x: &[f64],
    v: &[f64],
) -> Result<DirectionalDerivatives, AdError>
where
    F: Fn(&[Dual2]) -> Vec<Dual2>,
{
    if x.len() != v.len() {
        return Err(AdError::DimensionMismatch {
            context: "directional_derivatives direction",
            expected: x.len(),
            got: v.len(),
        });
    }
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(AdError::NotUnitDirection { norm });
    }
    let inputs: Vec<Dual2> = x
        .iter()
        .zip(v)
        .map(|(&xi, &vi)| Dual2::variable(xi, vi))
        .collect();
    let outputs = f(&inputs);
    let mut result = DirectionalDerivatives {
        values: Vec::with_capacity(outputs.len()),
        d1: Vec::with_capacity(outputs.len()),
        d2: Vec::with_capacity(outputs.len()),
    };
    for (index, out) in outputs.iter().enumerate() {
        if !out.is_finite() {
            return Err(AdError::NonFinite { context: "directional_derivatives", index });
        }
        result.values.push(out.value);
        result.d1.push(out.d1);
        result.d2.push(out.d2);
    }
    Ok(result)
}

/// Maximum relative disagreement between a claimed gradient and central
/// finite differences of `f` at `x`, using step `h` per coordinate.
///
/// The relative error denominator is `max(|analytic|, |fd|, 1e-12)` so that
/// near-zero components do not blow up the ratio.
pub fn fd_check<F>(f: F, analytic_grad: &[f64], x: &[f64], h: f64) -> Result<f64, AdError>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic_grad.len() != x.len() {
        return Err(AdError::DimensionMismatch {
            context: "fd_check gradient",
            expected: x.len(),
            got: analytic_grad.len(),
        });
    }
    let mut worst = 0.0_f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        if !fd.is_finite() {
            return Err(AdError::NonFinite { context: "fd_check", index: i });
        }
        let denom = analytic_grad[i].abs().max(fd.abs()).max(1e-12);
        worst = worst.max((analytic_grad[i] - fd).abs() / denom);
    }
    Ok(worst)
}
