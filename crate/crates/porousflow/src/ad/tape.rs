//! Append-only tape of matrix operations with reverse-mode differentiation.
//!
//! Forward passes over whole point clouds are recorded as a sequence of
//! matrix-valued nodes (dense layers, activations, pooling, reductions).
//! Running the tape backwards from a scalar node yields gradients with
//! respect to every registered parameter tensor. Spatial derivative channels
//! are recorded as ordinary nodes, so the reverse sweep differentiates
//! through them and physics residuals stay trainable.
//!
//! Node values are cached at record time; [`Tape::replayed_values`] recomputes
//! them from the leaves, which must reproduce the cache bit-for-bit.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array2, Axis};
use std::sync::Arc;

use super::AdError;

/// Scalar type the tape records in. Training uses `f64`; `f32` exists for
/// reduced-precision inference experiments.
pub trait Real: ndarray::NdFloat + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

/// Index of a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Identifier of a parameter tensor, assigned by the model's parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub u32);

/// Elementwise maps the tape can record. Each knows its own derivative so the
/// reverse sweep never needs symbolic manipulation: recording an activation's
/// first or second derivative as a forward node still leaves one more
/// numeric derivative available for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryFn {
    Tanh,
    /// tanh' = 1 - tanh^2
    TanhP,
    /// tanh'' = -2 tanh (1 - tanh^2)
    TanhPP,
    Silu,
    /// silu' = s (1 + x (1 - s)) with s = sigmoid(x)
    SiluP,
    /// silu'' = s (1 - s) (2 + x (1 - 2 s))
    SiluPP,
    Square,
    Sqrt,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl UnaryFn {
    /// Apply the map to one scalar.
    pub fn eval<F: Real>(self, x: F) -> F {
        let one = F::one();
        let two = F::from_f64(2.0);
        match self {
            UnaryFn::Tanh => x.tanh(),
            UnaryFn::TanhP => {
                let t = x.tanh();
                one - t * t
            }
            UnaryFn::TanhPP => {
                let t = x.tanh();
                -two * t * (one - t * t)
            }
            UnaryFn::Silu => x * sigmoid(x),
            UnaryFn::SiluP => {
                let s = sigmoid(x);
                s * (one + x * (one - s))
            }
            UnaryFn::SiluPP => {
                let s = sigmoid(x);
                s * (one - s) * (two + x * (one - two * s))
            }
            UnaryFn::Square => x * x,
            UnaryFn::Sqrt => x.sqrt(),
        }
    }

    /// Derivative of the map, evaluated numerically for the reverse sweep.
    pub fn deriv<F: Real>(self, x: F) -> F {
        let one = F::one();
        let two = F::from_f64(2.0);
        let three = F::from_f64(3.0);
        let half = F::from_f64(0.5);
        match self {
            UnaryFn::Tanh => UnaryFn::TanhP.eval(x),
            UnaryFn::TanhP => UnaryFn::TanhPP.eval(x),
            UnaryFn::TanhPP => {
                // tanh''' = -2 (1 - t^2)(1 - 3 t^2)
                let t = x.tanh();
                let sech2 = one - t * t;
                -two * sech2 * (one - three * t * t)
            }
            UnaryFn::Silu => UnaryFn::SiluP.eval(x),
            UnaryFn::SiluP => UnaryFn::SiluPP.eval(x),
            UnaryFn::SiluPP => {
                // silu''' = q ((1 - 2s)(r + 1) - 2 x q) with q = s(1-s),
                // r = 2 + x (1 - 2s).
                let s = sigmoid(x);
                let q = s * (one - s);
                let r = two + x * (one - two * s);
                q * ((one - two * s) * (r + one) - two * x * q)
            }
            UnaryFn::Square => two * x,
            UnaryFn::Sqrt => half / x.sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
enum Op<F: Real> {
    /// Constant data: no gradient flows into it.
    Input,
    /// Trainable tensor; gradients are collected for these nodes.
    Param,
    MatMul(NodeId, NodeId),
    /// Row-broadcast addition: (n, m) + (1, m).
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product of same-shape operands.
    Mul(NodeId, NodeId),
    /// Column-broadcast product: (n, m) * (n, 1).
    MulCol(NodeId, NodeId),
    Scale(NodeId, F),
    AddScalar(NodeId, F),
    Unary(NodeId, UnaryFn),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Arc<Vec<usize>>),
    RowSum(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    /// Column-wise max over rows; ties resolve to the lowest row index.
    MaxPoolRows(NodeId),
    BroadcastRow(NodeId, usize),
}

struct Node<F: Real> {
    op: Op<F>,
    value: Array2<F>,
    /// Winning row per column for `MaxPoolRows`, fixed at record time.
    argmax: Option<Arc<Vec<usize>>>,
}

/// Gradient of a scalar with respect to every registered parameter tensor,
/// indexed by [`ParamId`] and always materialized in `f64`.
#[derive(Clone, Debug)]
pub struct GradientVector {
    entries: Vec<Array2<f64>>,
}

impl GradientVector {
    pub fn get(&self, pid: ParamId) -> &Array2<f64> {
        &self.entries[pid.0 as usize]
    }

    /// Number of parameter tensors.
    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    /// Total number of scalar entries, one per trainable parameter.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|g| g.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i as u32), g))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulate `scale * other` into self. Shapes must agree.
    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        assert_eq!(self.entries.len(), other.entries.len(), "gradient tensor count mismatch");
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.zip_mut_with(theirs, |a, &b| *a += scale * b);
        }
    }

    pub fn scale(&mut self, scale: f64) {
        for g in &mut self.entries {
            g.mapv_inplace(|x| x * scale);
        }
    }
}

/// Append-only record of one forward computation.
pub struct Tape<F: Real = f64> {
    nodes: Vec<Node<F>>,
    /// Node carrying each registered parameter, indexed by `ParamId`.
    param_nodes: Vec<NodeId>,
    outputs: Vec<NodeId>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_nodes: Vec::new(), outputs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Recorded value of a node.
    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.idx()].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() called on a {:?} node", v.dim());
        v[[0, 0]]
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.idx()].value.dim()
    }

    fn push(&mut self, op: Op<F>, value: Array2<F>, argmax: Option<Arc<Vec<usize>>>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, value, argmax });
        id
    }

    /// Record constant data (case features, masks, derivative seeds).
    pub fn input(&mut self, value: Array2<F>) -> NodeId {
        self.push(Op::Input, value, None)
    }

    /// Register a parameter tensor. Ids must arrive in order 0, 1, 2, ...
    /// so gradients line up with the model's parameter layout.
    pub fn param(&mut self, pid: ParamId, value: Array2<F>) -> NodeId {
        assert_eq!(
            pid.0 as usize,
            self.param_nodes.len(),
            "parameters must be registered contiguously in id order"
        );
        let id = self.push(Op::Param, value, None);
        self.param_nodes.push(id);
        id
    }

    /// Mark a node as an externally observed output (kept for replay checks).
    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul inner dimensions {ar}x{ac} . {br}x{bc}");
        let value = self.nodes[a.idx()].value.dot(&self.nodes[b.idx()].value);
        self.push(Op::MatMul(a, b), value, None)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(bias), (1, ac), "bias must be 1x{ac}");
        let value = &self.nodes[a.idx()].value + &self.nodes[bias.idx()].value;
        self.push(Op::AddRow(a, bias), value, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = &self.nodes[a.idx()].value + &self.nodes[b.idx()].value;
        self.push(Op::Add(a, b), value, None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = &self.nodes[a.idx()].value - &self.nodes[b.idx()].value;
        self.push(Op::Sub(a, b), value, None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = &self.nodes[a.idx()].value * &self.nodes[b.idx()].value;
        self.push(Op::Mul(a, b), value, None)
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (ar, _) = self.shape(a);
        assert_eq!(self.shape(col), (ar, 1), "column factor must be {ar}x1");
        let value = &self.nodes[a.idx()].value * &self.nodes[col.idx()].value;
        self.push(Op::MulCol(a, col), value, None)
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let value = self.nodes[a.idx()].value.mapv(|x| x * c);
        self.push(Op::Scale(a, c), value, None)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> NodeId {
        let value = self.nodes[a.idx()].value.mapv(|x| x + c);
        self.push(Op::AddScalar(a, c), value, None)
    }

    pub fn unary(&mut self, a: NodeId, f: UnaryFn) -> NodeId {
        let value = self.nodes[a.idx()].value.mapv(|x| f.eval(x));
        self.push(Op::Unary(a, f), value, None)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, _) = self.shape(a);
        let (br, _) = self.shape(b);
        assert_eq!(ar, br, "concat_cols row mismatch");
        let value = concatenate(
            Axis(1),
            &[self.nodes[a.idx()].value.view(), self.nodes[b.idx()].value.view()],
        )
        .expect("concatenate along columns");
        self.push(Op::ConcatCols(a, b), value, None)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let (_, ac) = self.shape(a);
        assert!(start < end && end <= ac, "column slice {start}..{end} of width {ac}");
        let value = self.nodes[a.idx()].value.slice(ndarray::s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), value, None)
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Arc<Vec<usize>>) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert!(rows.iter().all(|&r| r < ar), "gather row index out of range");
        let mut value = Array2::zeros((rows.len(), ac));
        for (out_r, &src_r) in rows.iter().enumerate() {
            value.row_mut(out_r).assign(&self.nodes[a.idx()].value.row(src_r));
        }
        self.push(Op::GatherRows(a, rows), value, None)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.idx()].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::RowSum(a), value, None)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.idx()].value;
        let n = F::from_f64(v.len() as f64);
        let value = Array2::from_elem((1, 1), v.sum() / n);
        self.push(Op::MeanAll(a), value, None)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[a.idx()].value.sum());
        self.push(Op::SumAll(a), value, None)
    }

    /// Column-wise max over rows, remembering the winning row per column.
    /// The winner is treated as locally constant by both the backward sweep
    /// and the dual channels (see [`Tape::argmax_mask`]).
    pub fn max_pool_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.idx()].value;
        let (n, m) = v.dim();
        assert!(n > 0, "max_pool_rows over an empty cloud");
        let mut value = Array2::zeros((1, m));
        let mut argmax = vec![0usize; m];
        for c in 0..m {
            let mut best_r = 0usize;
            let mut best = v[[0, c]];
            for r in 1..n {
                if v[[r, c]] > best {
                    best = v[[r, c]];
                    best_r = r;
                }
            }
            value[[0, c]] = best;
            argmax[c] = best_r;
        }
        self.push(Op::MaxPoolRows(a), value, Some(Arc::new(argmax)))
    }

    /// 0/1 mask with a one at `(argmax[c], c)` for each column of a pooled
    /// node. Multiplying a derivative channel by this mask routes per-point
    /// derivatives through the pooled feature exactly at the winning points.
    pub fn argmax_mask(&mut self, pooled: NodeId, rows: usize) -> NodeId {
        let argmax = self.nodes[pooled.idx()]
            .argmax
            .as_ref()
            .expect("argmax_mask requires a max_pool_rows node")
            .clone();
        let (_, m) = self.shape(pooled);
        let mut mask = Array2::zeros((rows, m));
        for (c, &r) in argmax.iter().enumerate() {
            mask[[r, c]] = F::one();
        }
        self.input(mask)
    }

    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(ar, 1, "broadcast_row expects a 1x{ac} node");
        let row = self.nodes[a.idx()].value.row(0).to_owned();
        let value = Array2::from_shape_fn((rows, ac), |(_, c)| row[c]);
        self.push(Op::BroadcastRow(a, rows), value, None)
    }

    /// Recompute every node from the leaves, without touching the cache.
    /// Replay must reproduce the recorded values bit-for-bit.
    pub fn replayed_values(&self) -> Vec<Array2<F>> {
        let mut fresh: Vec<Array2<F>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input | Op::Param => node.value.clone(),
                Op::MatMul(a, b) => fresh[a.idx()].dot(&fresh[b.idx()]),
                Op::AddRow(a, b) | Op::Add(a, b) => &fresh[a.idx()] + &fresh[b.idx()],
                Op::Sub(a, b) => &fresh[a.idx()] - &fresh[b.idx()],
                Op::Mul(a, b) | Op::MulCol(a, b) => &fresh[a.idx()] * &fresh[b.idx()],
                Op::Scale(a, c) => fresh[a.idx()].mapv(|x| x * *c),
                Op::AddScalar(a, c) => fresh[a.idx()].mapv(|x| x + *c),
                Op::Unary(a, f) => fresh[a.idx()].mapv(|x| f.eval(x)),
                Op::ConcatCols(a, b) => {
                    concatenate(Axis(1), &[fresh[a.idx()].view(), fresh[b.idx()].view()])
                        .expect("concatenate along columns")
                }
                Op::SliceCols(a, s, e) => fresh[a.idx()].slice(ndarray::s![.., *s..*e]).to_owned(),
                Op::GatherRows(a, rows) => {
                    let src = &fresh[a.idx()];
                    let mut out = Array2::zeros((rows.len(), src.ncols()));
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        out.row_mut(out_r).assign(&src.row(src_r));
                    }
                    out
                }
                Op::RowSum(a) => fresh[a.idx()].sum_axis(Axis(1)).insert_axis(Axis(1)),
                Op::MeanAll(a) => {
                    let v = &fresh[a.idx()];
                    Array2::from_elem((1, 1), v.sum() / F::from_f64(v.len() as f64))
                }
                Op::SumAll(a) => Array2::from_elem((1, 1), fresh[a.idx()].sum()),
                Op::MaxPoolRows(a) => {
                    let v = &fresh[a.idx()];
                    let argmax = node.argmax.as_ref().expect("pool node has argmax");
                    let mut out = Array2::zeros((1, v.ncols()));
                    for (c, &r) in argmax.iter().enumerate() {
                        // Reuse the recorded winners: replay is only defined
                        // for identical inputs, where they cannot change.
                        out[[0, c]] = v[[r, c]];
                    }
                    out
                }
                Op::BroadcastRow(a, rows) => {
                    let row = fresh[a.idx()].row(0).to_owned();
                    Array2::from_shape_fn((*rows, row.len()), |(_, c)| row[c])
                }
            };
            fresh.push(value);
        }
        fresh
    }

    /// Reverse sweep from a scalar node, producing one gradient tensor per
    /// registered parameter. The seed must be finite and 1x1.
    pub fn backward(&self, seed: NodeId) -> Result<GradientVector, AdError> {
        let (sr, sc) = self.shape(seed);
        if (sr, sc) != (1, 1) {
            return Err(AdError::NotScalar { rows: sr, cols: sc });
        }
        let seed_value = self.nodes[seed.idx()].value[[0, 0]];
        if !seed_value.to_f64().is_finite() {
            return Err(AdError::NonFinite { context: "backward seed", index: seed.idx() });
        }

        let mut adjoint: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        adjoint[seed.idx()] = Some(Array2::from_elem((1, 1), F::one()));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = adjoint[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input | Op::Param => {
                    // Leaves: Param adjoints are collected below, Input
                    // adjoints are discarded.
                    adjoint[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.idx()].value;
                    let bv = &self.nodes[b.idx()].value;
                    {
                        let acc = ensure(&mut adjoint[a.idx()], av.dim());
                        general_mat_mul(F::one(), &g, &bv.t(), F::one(), acc);
                    }
                    let acc = ensure(&mut adjoint[b.idx()], bv.dim());
                    general_mat_mul(F::one(), &av.t(), &g, F::one(), acc);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut adjoint[a.idx()], &g);
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adjoint[bias.idx()], &col_sums);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoint[a.idx()], &g);
                    accumulate(&mut adjoint[b.idx()], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoint[a.idx()], &g);
                    let neg = g.mapv(|x| -x);
                    accumulate(&mut adjoint[b.idx()], &neg);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.idx()].value;
                    accumulate(&mut adjoint[a.idx()], &ga);
                    let gb = &g * &self.nodes[a.idx()].value;
                    accumulate(&mut adjoint[b.idx()], &gb);
                }
                Op::MulCol(a, col) => {
                    let ga = &g * &self.nodes[col.idx()].value;
                    accumulate(&mut adjoint[a.idx()], &ga);
                    let gcol = (&g * &self.nodes[a.idx()].value)
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    accumulate(&mut adjoint[col.idx()], &gcol);
                }
                Op::Scale(a, c) => {
                    let ga = g.mapv(|x| x * *c);
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
                Op::AddScalar(a, _) => accumulate(&mut adjoint[a.idx()], &g),
                Op::Unary(a, f) => {
                    let ga = &g * &self.nodes[a.idx()].value.mapv(|x| f.deriv(x));
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
                Op::ConcatCols(a, b) => {
                    let (_, ac) = self.shape(*a);
                    let ga = g.slice(ndarray::s![.., ..ac]).to_owned();
                    accumulate(&mut adjoint[a.idx()], &ga);
                    let gb = g.slice(ndarray::s![.., ac..]).to_owned();
                    accumulate(&mut adjoint[b.idx()], &gb);
                }
                Op::SliceCols(a, s, _) => {
                    let acc = ensure(&mut adjoint[a.idx()], self.shape(*a));
                    let mut window = acc.slice_mut(ndarray::s![.., *s..*s + g.ncols()]);
                    window += &g;
                }
                Op::GatherRows(a, rows) => {
                    let acc = ensure(&mut adjoint[a.idx()], self.shape(*a));
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        let mut row = acc.row_mut(src_r);
                        row += &g.row(out_r);
                    }
                }
                Op::RowSum(a) => {
                    let (_, ac) = self.shape(*a);
                    let ga = Array2::from_shape_fn((g.nrows(), ac), |(r, _)| g[[r, 0]]);
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
                Op::MeanAll(a) => {
                    let (ar, ac) = self.shape(*a);
                    let w = g[[0, 0]] / F::from_f64((ar * ac) as f64);
                    let ga = Array2::from_elem((ar, ac), w);
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
                Op::MaxPoolRows(a) => {
                    let argmax = self.nodes[idx].argmax.as_ref().expect("pool node has argmax");
                    let acc = ensure(&mut adjoint[a.idx()], self.shape(*a));
                    for (c, &r) in argmax.iter().enumerate() {
                        acc[[r, c]] += g[[0, c]];
                    }
                }
                Op::BroadcastRow(a, _) => {
                    let ga = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adjoint[a.idx()], &ga);
                }
            }
        }

        let entries = self
            .param_nodes
            .iter()
            .map(|&node| match &adjoint[node.idx()] {
                Some(g) => g.mapv(Real::to_f64),
                None => Array2::zeros(self.shape(node)),
            })
            .collect();
        Ok(GradientVector { entries })
    }
}

fn ensure<F: Real>(slot: &mut Option<Array2<F>>, dim: (usize, usize)) -> &mut Array2<F> {
    slot.get_or_insert_with(|| Array2::zeros(dim))
}

fn accumulate<F: Real>(slot: &mut Option<Array2<F>>, g: &Array2<F>) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g.clone()),
    }
}
