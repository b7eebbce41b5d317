//! Dense networks recorded on the tape, with spatial derivative channels.
//!
//! Models are assembled from three recording helpers on [`Tape`]:
//! [`Tape::dual_linear`], [`Tape::dual_activation`], and
//! [`Tape::dual_max_pool_broadcast`]. Each carries a value matrix plus, per
//! spatial direction, a first- and second-derivative matrix. Propagation
//! rules are the truncated Taylor expansions, so after a full forward pass
//! row `i` of the derivative channels holds the derivatives of point `i`'s
//! outputs with respect to point `i`'s own coordinates. The max-pool helper
//! routes derivatives through the pooled feature at exactly the winning
//! points, treating the winner selection as locally constant.

use ndarray::Array2;

use super::tape::{NodeId, ParamId, Real, Tape, UnaryFn};
use super::AdError;

/// Activations supported by the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    /// Parse a user-facing primitive name.
    pub fn from_name(name: &str) -> Result<Self, AdError> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(AdError::UnsupportedPrimitive(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }

    /// The map together with its first and second derivative.
    fn table(self) -> (UnaryFn, UnaryFn, UnaryFn) {
        match self {
            Activation::Tanh => (UnaryFn::Tanh, UnaryFn::TanhP, UnaryFn::TanhPP),
            Activation::Silu => (UnaryFn::Silu, UnaryFn::SiluP, UnaryFn::SiluPP),
        }
    }

    /// Scalar evaluation, used by plain (untaped) forward passes.
    pub fn eval<F: Real>(self, x: F) -> F {
        self.table().0.eval(x)
    }
}

/// Node bundle for a matrix flowing through the network: the value and one
/// first/second derivative channel per spatial direction.
#[derive(Clone, Debug)]
pub struct DualRows {
    pub value: NodeId,
    pub d1: Vec<NodeId>,
    pub d2: Vec<NodeId>,
}

impl DualRows {
    /// Number of spatial directions being tracked.
    pub fn dirs(&self) -> usize {
        self.d1.len()
    }
}

impl<F: Real> Tape<F> {
    /// Record an input whose first `coord_cols` columns are coordinates.
    /// Direction `k` seeds a unit derivative in column `k`; the remaining
    /// feature columns (signed distance, boundary tags) are held fixed.
    pub fn seed_coordinate_duals(&mut self, features: Array2<F>, coord_cols: usize) -> DualRows {
        let (rows, cols) = features.dim();
        assert!(coord_cols <= cols, "more coordinate columns than features");
        let value = self.input(features);
        let mut d1 = Vec::with_capacity(coord_cols);
        let mut d2 = Vec::with_capacity(coord_cols);
        for k in 0..coord_cols {
            let mut seed = Array2::zeros((rows, cols));
            seed.column_mut(k).fill(F::one());
            d1.push(self.input(seed));
            d2.push(self.input(Array2::zeros((rows, cols))));
        }
        DualRows { value, d1, d2 }
    }

    /// Record constant features tracking the same directions as `like`, all
    /// with zero derivatives.
    pub fn dual_constant(&mut self, features: Array2<F>, dirs: usize) -> DualRows {
        let dim = features.dim();
        let value = self.input(features);
        let mut d1 = Vec::with_capacity(dirs);
        let mut d2 = Vec::with_capacity(dirs);
        for _ in 0..dirs {
            d1.push(self.input(Array2::zeros(dim)));
            d2.push(self.input(Array2::zeros(dim)));
        }
        DualRows { value, d1, d2 }
    }

    /// Affine layer: the value channel gets the bias, derivative channels are
    /// linear in the weight only.
    pub fn dual_linear(&mut self, x: &DualRows, weight: NodeId, bias: NodeId) -> DualRows {
        let lin = self.matmul(x.value, weight);
        let value = self.add_row(lin, bias);
        let d1 = x.d1.iter().map(|&d| self.matmul(d, weight)).collect();
        let d2 = x.d2.iter().map(|&d| self.matmul(d, weight)).collect();
        DualRows { value, d1, d2 }
    }

    /// Elementwise activation with Taylor propagation:
    /// `d1' = f'(v) d1`, `d2' = f''(v) d1^2 + f'(v) d2`.
    pub fn dual_activation(&mut self, x: &DualRows, act: Activation) -> DualRows {
        let (f, fp, fpp) = act.table();
        let value = self.unary(x.value, f);
        if x.dirs() == 0 {
            return DualRows { value, d1: Vec::new(), d2: Vec::new() };
        }
        let s1 = self.unary(x.value, fp);
        let s2 = self.unary(x.value, fpp);
        let mut d1 = Vec::with_capacity(x.dirs());
        let mut d2 = Vec::with_capacity(x.dirs());
        for k in 0..x.dirs() {
            d1.push(self.mul(s1, x.d1[k]));
            let squared = self.mul(x.d1[k], x.d1[k]);
            let curv = self.mul(s2, squared);
            let lin = self.mul(s1, x.d2[k]);
            d2.push(self.add(curv, lin));
        }
        DualRows { value, d1, d2 }
    }

    /// Column concatenation of two bundles tracking the same directions.
    pub fn dual_concat_cols(&mut self, a: &DualRows, b: &DualRows) -> DualRows {
        assert_eq!(a.dirs(), b.dirs(), "bundles track different direction counts");
        let value = self.concat_cols(a.value, b.value);
        let d1 = a.d1.iter().zip(&b.d1).map(|(&x, &y)| self.concat_cols(x, y)).collect();
        let d2 = a.d2.iter().zip(&b.d2).map(|(&x, &y)| self.concat_cols(x, y)).collect();
        DualRows { value, d1, d2 }
    }

    /// Max-pool over points, broadcast back to every row. A point's output
    /// depends on its own coordinates through the pooled feature only where
    /// that point wins a channel, so derivative channels are masked to the
    /// winning entries rather than broadcast.
    ///
    /// Returns the broadcast bundle and the 1-row pooled value node.
    pub fn dual_max_pool_broadcast(&mut self, x: &DualRows, rows: usize) -> (DualRows, NodeId) {
        let pooled = self.max_pool_rows(x.value);
        let value = self.broadcast_row(pooled, rows);
        if x.dirs() == 0 {
            return (DualRows { value, d1: Vec::new(), d2: Vec::new() }, pooled);
        }
        let mask = self.argmax_mask(pooled, rows);
        let d1 = x.d1.iter().map(|&d| self.mul(d, mask)).collect();
        let d2 = x.d2.iter().map(|&d| self.mul(d, mask)).collect();
        (DualRows { value, d1, d2 }, pooled)
    }

    /// Inverted dropout: multiply every channel by a shared 0 / (1-p)^-1 mask
    /// so evaluation needs no rescaling. The mask is recorded as plain input.
    pub fn dual_dropout(&mut self, x: &DualRows, mask: NodeId) -> DualRows {
        let value = self.mul(x.value, mask);
        let d1 = x.d1.iter().map(|&d| self.mul(d, mask)).collect();
        let d2 = x.d2.iter().map(|&d| self.mul(d, mask)).collect();
        DualRows { value, d1, d2 }
    }
}

/// One affine layer of a [`DenseNet`], with an optional activation after it.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
    pub activation: Option<Activation>,
}

impl LayerSpec {
    pub fn new(weight: Array2<f64>, bias: Array2<f64>, activation: Option<Activation>) -> Self {
        assert_eq!(bias.dim(), (1, weight.ncols()), "bias shape must be 1 x fan_out");
        LayerSpec { weight, bias, activation }
    }
}

/// A plain multilayer perceptron. An empty layer list is the identity map.
#[derive(Clone, Debug, Default)]
pub struct DenseNet {
    pub layers: Vec<LayerSpec>,
}

impl DenseNet {
    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.weight.nrows())
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |l| l.weight.ncols())
    }

    /// Plain forward pass for one point.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        for layer in &self.layers {
            row = row.dot(&layer.weight) + &layer.bias;
            if let Some(act) = layer.activation {
                row.mapv_inplace(|v| act.eval(v));
            }
        }
        row.into_raw_vec_and_offset().0
    }

    /// Record the network on a tape. With `register_params` the weights
    /// become trainable leaves (ids assigned in layer order), otherwise they
    /// are recorded as constants.
    pub fn record(&self, tape: &mut Tape<f64>, input: &DualRows, register_params: bool) -> DualRows {
        let mut x = input.clone();
        let mut next_pid = 0u32;
        for layer in &self.layers {
            let (w, b) = if register_params {
                let w = tape.param(ParamId(next_pid), layer.weight.clone());
                let b = tape.param(ParamId(next_pid + 1), layer.bias.clone());
                next_pid += 2;
                (w, b)
            } else {
                (tape.input(layer.weight.clone()), tape.input(layer.bias.clone()))
            };
            x = tape.dual_linear(&x, w, b);
            if let Some(act) = layer.activation {
                x = tape.dual_activation(&x, act);
            }
        }
        x
    }
}

/// Outputs and spatial derivatives of a network at one point.
#[derive(Clone, Debug)]
pub struct NetDerivatives {
    pub values: Vec<f64>,
    /// `jacobian[[i, k]] = d out_i / d x_k`.
    pub jacobian: Array2<f64>,
    /// Pure second derivatives `d2 out_i / d x_k^2` (no mixed terms).
    pub second: Array2<f64>,
    /// Row sums of `second`: the Laplacian of each output.
    pub laplacian: Vec<f64>,
}

/// Evaluate a dense network at one point, returning outputs, the Jacobian,
/// and per-direction second derivatives. The recording stays differentiable
/// in the network parameters; this convenience entry point simply reads the
/// values off a scratch tape.
pub fn laplacian_and_jacobian(net: &DenseNet, point: &[f64]) -> Result<NetDerivatives, AdError> {
    if let Some(d) = net.input_dim() {
        if d != point.len() {
            return Err(AdError::DimensionMismatch {
                context: "laplacian_and_jacobian point",
                expected: d,
                got: point.len(),
            });
        }
    }
    let dim = point.len();
    let mut tape = Tape::<f64>::new();
    let features = Array2::from_shape_vec((1, dim), point.to_vec()).expect("row vector");
    let input = tape.seed_coordinate_duals(features, dim);
    let out = net.record(&mut tape, &input, true);
    tape.mark_output(out.value);

    let n_out = tape.value(out.value).ncols();
    let values: Vec<f64> = tape.value(out.value).row(0).to_vec();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(AdError::NonFinite { context: "laplacian_and_jacobian", index });
    }
    let mut jacobian = Array2::zeros((n_out, dim));
    let mut second = Array2::zeros((n_out, dim));
    for k in 0..dim {
        let d1 = tape.value(out.d1[k]);
        let d2 = tape.value(out.d2[k]);
        for i in 0..n_out {
            jacobian[[i, k]] = d1[[0, i]];
            second[[i, k]] = d2[[0, i]];
        }
    }
    let laplacian = second.rows().into_iter().map(|r| r.sum()).collect();
    Ok(NetDerivatives { values, jacobian, second, laplacian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_layer(
        rng: &mut ChaCha20Rng,
        fan_in: usize,
        fan_out: usize,
        act: Option<Activation>,
    ) -> LayerSpec {
        let scale = (1.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-scale..scale));
        let bias = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-0.1..0.1));
        LayerSpec::new(weight, bias, act)
    }

    #[test]
    fn identity_network_has_identity_jacobian_and_zero_laplacian() {
        let net = DenseNet::default();
        let out = laplacian_and_jacobian(&net, &[0.4, -1.3, 2.2]).unwrap();
        assert_eq!(out.values, vec![0.4, -1.3, 2.2]);
        assert_eq!(out.jacobian, Array2::from_diag(&Array1::from_elem(3, 1.0)));
        assert!(out.laplacian.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn single_tanh_neuron_matches_closed_form() {
        // y = tanh(w . x + b): dy/dx_k = (1 - y^2) w_k,
        // d2y/dx_k^2 = -2 y (1 - y^2) w_k^2.
        let w = array![[0.7], [-0.4]];
        let b = array![[0.2]];
        let net = DenseNet {
            layers: vec![LayerSpec::new(w.clone(), b.clone(), Some(Activation::Tanh))],
        };
        let x = [0.5, 1.1];
        let z = w[[0, 0]] * x[0] + w[[1, 0]] * x[1] + b[[0, 0]];
        let y = z.tanh();
        let out = laplacian_and_jacobian(&net, &x).unwrap();
        assert_abs_diff_eq!(out.values[0], y, epsilon = 1e-15);
        for k in 0..2 {
            assert_abs_diff_eq!(out.jacobian[[0, k]], (1.0 - y * y) * w[[k, 0]], epsilon = 1e-14);
            assert_abs_diff_eq!(
                out.second[[0, k]],
                -2.0 * y * (1.0 - y * y) * w[[k, 0]] * w[[k, 0]],
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn random_two_layer_net_matches_finite_differences() {
        for (seed, act) in [(11u64, Activation::Tanh), (12, Activation::Silu)] {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let net = DenseNet {
                layers: vec![
                    random_layer(&mut rng, 3, 8, Some(act)),
                    random_layer(&mut rng, 8, 2, None),
                ],
            };
            let x = [0.3, -0.8, 1.2];
            let out = laplacian_and_jacobian(&net, &x).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut xp = x;
                xp[k] += h;
                let fp = net.forward(&xp);
                xp[k] -= 2.0 * h;
                let fm = net.forward(&xp);
                let f0 = net.forward(&x);
                for i in 0..2 {
                    let fd1 = (fp[i] - fm[i]) / (2.0 * h);
                    let fd2 = (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
                    let rel1 = (out.jacobian[[i, k]] - fd1).abs() / fd1.abs().max(1e-8);
                    let rel2 = (out.second[[i, k]] - fd2).abs() / fd2.abs().max(1e-6);
                    assert!(rel1 < 1e-5, "{act:?} d1[{i},{k}]: {} vs {fd1}", out.jacobian[[i, k]]);
                    assert!(rel2 < 1e-3, "{act:?} d2[{i},{k}]: {} vs {fd2}", out.second[[i, k]]);
                }
            }
        }
    }

    #[test]
    fn derivatives_remain_differentiable_in_parameters() {
        // d/dtheta of (sum of outputs + sum of laplacians) against central
        // differences, through the recorded dual channels.
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let net = DenseNet {
            layers: vec![
                random_layer(&mut rng, 2, 5, Some(Activation::Tanh)),
                random_layer(&mut rng, 5, 1, None),
            ],
        };
        let x = [0.4, -0.2];

        let objective = |net: &DenseNet| -> f64 {
            let out = laplacian_and_jacobian(net, &x).unwrap();
            out.values.iter().sum::<f64>() + out.laplacian.iter().sum::<f64>()
        };

        // Recorded version of the same objective, for the analytic gradient.
        let mut tape = Tape::<f64>::new();
        let features = Array2::from_shape_vec((1, 2), x.to_vec()).unwrap();
        let input = tape.seed_coordinate_duals(features, 2);
        let out = net.record(&mut tape, &input, true);
        let value_sum = tape.sum_all(out.value);
        let lap_x = tape.sum_all(out.d2[0]);
        let lap_y = tape.sum_all(out.d2[1]);
        let partial = tape.add(value_sum, lap_x);
        let total = tape.add(partial, lap_y);
        let grads = tape.backward(total).unwrap();

        let h = 1e-5;
        let mut pid = 0u32;
        for li in 0..net.layers.len() {
            for is_bias in [false, true] {
                let tensor = if is_bias {
                    net.layers[li].bias.clone()
                } else {
                    net.layers[li].weight.clone()
                };
                let analytic = grads.get(ParamId(pid));
                for ((r, c), _) in tensor.indexed_iter() {
                    let mut perturbed = net.clone();
                    let slot = if is_bias {
                        &mut perturbed.layers[li].bias
                    } else {
                        &mut perturbed.layers[li].weight
                    };
                    slot[[r, c]] += h;
                    let up = objective(&perturbed);
                    let slot = if is_bias {
                        &mut perturbed.layers[li].bias
                    } else {
                        &mut perturbed.layers[li].weight
                    };
                    slot[[r, c]] -= 2.0 * h;
                    let down = objective(&perturbed);
                    let fd = (up - down) / (2.0 * h);
                    let rel = (analytic[[r, c]] - fd).abs() / fd.abs().max(1e-6);
                    assert!(
                        rel < 1e-4,
                        "layer {li} bias={is_bias} ({r},{c}): {} vs {fd}",
                        analytic[[r, c]]
                    );
                }
                pid += 1;
            }
        }
    }

    #[test]
    fn pooled_global_feature_routes_point_derivatives_to_winners() {
        // A miniature PIPN: per-point layer, max-pool, broadcast + concat,
        // then a head. Finite differences move ONE point's coordinate and
        // rerun the whole cloud, so the comparison certifies that derivative
        // channels flow through the pooled feature exactly at the winners.
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let enc = random_layer(&mut rng, 2, 6, Some(Activation::Tanh));
        let head = random_layer(&mut rng, 12, 1, None);
        let cloud = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));

        let forward_values = |pts: &Array2<f64>| -> Vec<f64> {
            let act = (pts.dot(&enc.weight) + &enc.bias).mapv(f64::tanh);
            let (n, m) = act.dim();
            let mut pooled = Array2::zeros((1, m));
            for c in 0..m {
                let mut best = act[[0, c]];
                for r in 1..n {
                    if act[[r, c]] > best {
                        best = act[[r, c]];
                    }
                }
                pooled[[0, c]] = best;
            }
            let mut joined = Array2::zeros((n, 2 * m));
            for r in 0..n {
                for c in 0..m {
                    joined[[r, c]] = act[[r, c]];
                    joined[[r, m + c]] = pooled[[0, c]];
                }
            }
            let out = joined.dot(&head.weight) + &head.bias;
            out.column(0).to_vec()
        };

        let mut tape = Tape::<f64>::new();
        let input = tape.seed_coordinate_duals(cloud.clone(), 2);
        let w = tape.input(enc.weight.clone());
        let b = tape.input(enc.bias.clone());
        let hidden = tape.dual_linear(&input, w, b);
        let hidden = tape.dual_activation(&hidden, Activation::Tanh);
        let (global, _) = tape.dual_max_pool_broadcast(&hidden, 5);
        let joined = tape.dual_concat_cols(&hidden, &global);
        let hw = tape.input(head.weight.clone());
        let hb = tape.input(head.bias.clone());
        let out = tape.dual_linear(&joined, hw, hb);

        let h = 1e-5;
        for j in 0..5 {
            for k in 0..2 {
                let mut up = cloud.clone();
                up[[j, k]] += h;
                let fu = forward_values(&up)[j];
                let mut down = cloud.clone();
                down[[j, k]] -= h;
                let fdn = forward_values(&down)[j];
                let f0 = forward_values(&cloud)[j];
                let fd1 = (fu - fdn) / (2.0 * h);
                let fd2 = (fu - 2.0 * f0 + fdn) / (h * h);
                let an1 = tape.value(out.d1[k])[[j, 0]];
                let an2 = tape.value(out.d2[k])[[j, 0]];
                assert!(
                    (an1 - fd1).abs() / fd1.abs().max(1e-8) < 1e-5,
                    "point {j} dir {k}: d1 {an1} vs fd {fd1}"
                );
                assert!(
                    (an2 - fd2).abs() / fd2.abs().max(1e-5) < 1e-3,
                    "point {j} dir {k}: d2 {an2} vs fd {fd2}"
                );
            }
        }
    }

    #[test]
    fn unknown_activation_names_are_rejected_with_the_name() {
        let err = Activation::from_name("relu").unwrap_err();
        assert!(err.to_string().contains("relu"), "message should name the primitive: {err}");
    }
}
