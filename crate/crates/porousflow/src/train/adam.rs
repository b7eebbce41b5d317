//! Adam with bias correction over the model's named tensors.

use ndarray::Array2;

use super::TrainError;
use crate::ad::{GradientVector, ParamId};
use crate::models::ModelParameters;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, one pair per tensor, plus the step
/// counter that drives bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub(crate) m: Vec<Array2<f64>>,
    pub(crate) v: Vec<Array2<f64>>,
    pub(crate) step: u64,
}

impl AdamState {
    /// Zero moments matching the parameter layout.
    pub fn new(params: &ModelParameters) -> Self {
        let zeros: Vec<Array2<f64>> =
            params.tensors().iter().map(|t| Array2::zeros(t.values.dim())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place. Rejects non-finite gradient
/// entries (naming the offending tensor) before touching any state, so an
/// aborted step leaves parameters and moments unchanged.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &GradientVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(TrainError::Config {
            reason: format!("learning rate must be positive, got {lr}"),
        });
    }
    let tensors = params.tensors_mut();
    if grads.tensor_count() != tensors.len() || state.m.len() != tensors.len() {
        return Err(TrainError::Config {
            reason: format!(
                "gradient has {} tensors, optimizer {}, model {}",
                grads.tensor_count(),
                state.m.len(),
                tensors.len()
            ),
        });
    }
    for (i, tensor) in tensors.iter().enumerate() {
        let g = grads.get(ParamId(i as u32));
        if g.dim() != tensor.values.dim() {
            return Err(TrainError::Config {
                reason: format!(
                    "gradient shape {:?} does not match tensor {} with shape {:?}",
                    g.dim(),
                    tensor.name,
                    tensor.values.dim()
                ),
            });
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { tensor: tensor.name.clone() });
        }
    }

    state.step += 1;
    let correction1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let correction2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (i, tensor) in tensors.iter_mut().enumerate() {
        let g = grads.get(ParamId(i as u32));
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        ndarray::Zip::from(&mut tensor.values)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Activation, NodeId, Tape};
    use crate::models::{init_parameters, ModelConfig, PipnConfig};

    fn toy_params() -> ModelParameters {
        let config = ModelConfig::Pipn(PipnConfig {
            dim: 2,
            local_widths: vec![3],
            global_widths: vec![3],
            decoder_widths: vec![],
            activation: Activation::Tanh,
            dropout: 0.0,
        });
        init_parameters(&config, 7).unwrap()
    }

    /// A gradient vector with every entry set to `fill`, built by seeding a
    /// tape whose loss is `fill * sum(all parameters)`.
    fn uniform_gradient(params: &ModelParameters, fill: f64) -> GradientVector {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let mut cursor = bound.cursor();
        let mut acc: Option<NodeId> = None;
        for _ in 0..params.tensors().len() / 2 {
            let (weight, bias) = cursor.next_layer();
            for node in [weight, bias] {
                let s = tape.sum_all(node);
                acc = Some(match acc {
                    None => s,
                    Some(a) => tape.add(a, s),
                });
            }
        }
        let total = tape.scale(acc.unwrap(), fill);
        tape.backward(total).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged_but_advances_the_step() {
        let mut params = toy_params();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let grads = uniform_gradient(&params, 0.0);
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        assert_eq!(state.step_count(), 1);
        for (a, b) in params.tensors().iter().zip(before.tensors()) {
            assert_eq!(a.values, b.values, "parameters moved under a zero gradient");
        }
    }

    #[test]
    fn first_step_moves_each_parameter_by_almost_the_learning_rate() {
        // With every gradient entry 1, the bias-corrected ratio is
        // 1 / (1 + eps), so the update is just below lr.
        let mut params = toy_params();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let grads = uniform_gradient(&params, 1.0);
        let lr = 0.001;
        adam_step(&mut params, &grads, &mut state, lr).unwrap();
        for (a, b) in params.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                let delta = y - x;
                assert!((delta - lr).abs() < 1e-10, "first update was {delta}, expected ~{lr}");
            }
        }
    }

    #[test]
    fn trace_matches_an_independent_scalar_oracle() {
        // Hand-rolled Adam on one scalar, written out from the update rule,
        // compared entry-for-entry against the tensor implementation.
        let mut params = toy_params();
        let initial = params.tensors()[0].values[[0, 0]];
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        let gradient_values = [0.3, 0.3, -0.5, 0.02, 0.0, 1.7];

        let (mut m, mut v, mut w) = (0.0_f64, 0.0_f64, initial);
        for (t, &g) in gradient_values.iter().enumerate() {
            let grads = uniform_gradient(&params, g);
            adam_step(&mut params, &grads, &mut state, lr).unwrap();

            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            let got = params.tensors()[0].values[[0, 0]];
            assert!(
                (got - w).abs() <= 1e-12 * w.abs().max(1.0),
                "step {t}: implementation {got} vs oracle {w}"
            );
        }
        assert_eq!(state.step_count(), gradient_values.len() as u64);
    }

    #[test]
    fn equal_consecutive_gradients_keep_updates_within_the_learning_rate() {
        let mut params = toy_params();
        let mut state = AdamState::new(&params);
        let lr = 0.002;
        let mut previous = params.tensors()[1].values[[0, 0]];
        for _ in 0..5 {
            let grads = uniform_gradient(&params, 0.4);
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
            let current = params.tensors()[1].values[[0, 0]];
            let magnitude = (previous - current).abs();
            assert!(magnitude > 0.0 && magnitude <= lr, "update magnitude {magnitude}");
            previous = current;
        }
    }

    #[test]
    fn non_finite_gradients_abort_and_name_the_tensor() {
        let mut params = toy_params();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let mut grads = uniform_gradient(&params, 1.0);
        grads.scale(f64::NAN);
        let err = adam_step(&mut params, &grads, &mut state, 1e-3).unwrap_err();
        match err {
            TrainError::NonFiniteGradient { tensor } => {
                assert_eq!(tensor, params.tensors()[0].name, "first offender is named");
            }
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(state.step_count(), 0, "aborted step must not advance the counter");
        for (a, b) in params.tensors().iter().zip(before.tensors()) {
            assert_eq!(a.values, b.values, "aborted step must not touch parameters");
        }
    }
}
