use super::params::ParamSet;
use super::tensor::Tensor;
use super::GradError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding input data or a constant.
    Input,
    /// Leaf bound to a named entry of a [`ParamSet`].
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    /// Broadcast multiply of a tensor by a scalar tensor.
    MulScalar(Var, Var),
    AddConst(Var, f64),
    /// Matrix plus a row vector broadcast down the rows.
    AddBias(Var, Var),
    Transpose(Var),
    /// Concatenation of two rank-2 tensors along `axis` (0 = rows, 1 = cols).
    Concat(Var, Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowMax(Var),
    GlobalMax(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    FrobeniusNorm(Var),
    /// Strict upper triangle of a square matrix, row-major, as a `1 x E` row.
    UpperTriangle(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward pass.
///
/// Holds one cotangent per tape node; parameters and inputs are read out via
/// [`Gradients::wrt`] or folded into a [`ParamSet`] with
/// [`Gradients::accumulate_into`].
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    param_nodes: Vec<(String, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
    }

    /// Adds every parameter gradient into the set's accumulators.
    ///
    /// Parameters never touched by the loss keep their current accumulator,
    /// so after a `zero_grads` they hold exactly zero.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<(), GradError> {
        for (name, node) in &self.param_nodes {
            if let Some(grad) = &self.by_node[*node] {
                params.accumulate_grad(name, grad)?;
            }
        }
        Ok(())
    }
}

/// Ordered record of executed primitives.
///
/// Construction order is the topological order: a [`Var`] can only reference
/// nodes that already exist. One backward pass is permitted per tape.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a data leaf (no parameters attached).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    /// Records a leaf bound to `name` in `params`, snapshotting its value.
    pub fn param(&mut self, name: &str, params: &ParamSet) -> Result<Var, GradError> {
        let value = params.value(name)?.clone();
        Ok(self.push(Op::Param(name.to_string()), value))
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(Vec<usize>, usize), GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(GradError::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok((ta.shape().to_vec(), ta.numel()))
    }

    fn finish(&mut self, op: Op, name: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, GradError> {
        let value = Tensor::new(shape, data).map_err(|e| match e {
            GradError::NonFinite { .. } => GradError::NonFinite { op: name },
            other => other,
        })?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (shape, _) = self.elementwise_pair("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        self.finish(Op::Add(a, b), "add", shape, data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (shape, _) = self.elementwise_pair("subtract", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        self.finish(Op::Sub(a, b), "subtract", shape, data)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (shape, _) = self.elementwise_pair("elementwise_multiply", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        self.finish(Op::Mul(a, b), "elementwise_multiply", shape, data)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (shape, _) = self.elementwise_pair("divide", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x / y);
        self.finish(Op::Div(a, b), "divide", shape, data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.finish(Op::MatMul(a, b), "matmul", vec![m, n], data)
    }

    /// Multiplication by a compile-time scalar constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        self.finish(Op::Scale(a, c), "scalar_multiply", shape, data)
    }

    /// Broadcast multiplication of `a` by the scalar tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, GradError> {
        let ts = self.value(s);
        if !ts.is_scalar() {
            return Err(GradError::BadShape {
                op: "mul_scalar",
                expected: "a scalar multiplier",
                shape: ts.shape().to_vec(),
            });
        }
        let sv = ts.item();
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        self.finish(Op::MulScalar(a, s), "mul_scalar", shape, data)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        self.finish(Op::AddConst(a, c), "add_const", shape, data)
    }

    /// `a` (r x c) plus row vector `bias` (1 x c) broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if !ta.is_matrix() || !tb.is_matrix() || tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(GradError::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(ta.at(i, j) + tb.at(0, j));
            }
        }
        self.finish(Op::AddBias(a, bias), "add_bias", vec![r, c], data)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GradError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(GradError::BadShape {
                op: "transpose",
                expected: "a rank-2 tensor",
                shape: ta.shape().to_vec(),
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let data = transpose_raw(ta.data(), r, c);
        self.finish(Op::Transpose(a), "transpose", vec![c, r], data)
    }

    /// Concatenates two rank-2 tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ok = ta.is_matrix()
            && tb.is_matrix()
            && match axis {
                0 => ta.cols() == tb.cols(),
                1 => ta.rows() == tb.rows(),
                _ => false,
            };
        if !ok {
            return Err(GradError::ShapeMismatch {
                op: "concat",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (shape, data) = if axis == 0 {
            let mut data = ta.data().to_vec();
            data.extend_from_slice(tb.data());
            (vec![ta.rows() + tb.rows(), ta.cols()], data)
        } else {
            let rows = ta.rows();
            let mut data = Vec::with_capacity(ta.numel() + tb.numel());
            for i in 0..rows {
                data.extend_from_slice(&ta.data()[i * ta.cols()..(i + 1) * ta.cols()]);
                data.extend_from_slice(&tb.data()[i * tb.cols()..(i + 1) * tb.cols()]);
            }
            (vec![rows, ta.cols() + tb.cols()], data)
        };
        self.finish(Op::Concat(a, b, axis), "concat", shape, data)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, GradError> {
        let ta = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = ta.data().to_vec();
        self.finish(Op::Reshape(a), "reshape", shape, data)
    }

    /// Sum over all entries, producing a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.value(a).data().iter().sum();
        self.finish(Op::Sum(a), "sum", vec![1], vec![s])
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let ta = self.value(a);
        let m = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.finish(Op::Mean(a), "mean", vec![1], vec![m])
    }

    /// Per-row maximum of a rank-2 tensor, as a column vector.
    ///
    /// Backward routes the gradient to the first maximal index of each row.
    pub fn row_max(&mut self, a: Var) -> Result<Var, GradError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(GradError::BadShape {
                op: "row_max",
                expected: "a rank-2 tensor",
                shape: ta.shape().to_vec(),
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r);
        for i in 0..r {
            let row = &ta.data()[i * c..(i + 1) * c];
            data.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        self.finish(Op::RowMax(a), "row_max", vec![r, 1], data)
    }

    /// Maximum entry, producing a scalar; first maximal index takes the gradient.
    pub fn global_max(&mut self, a: Var) -> Result<Var, GradError> {
        let m = self
            .value(a)
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        self.finish(Op::GlobalMax(a), "global_max", vec![1], vec![m])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        self.finish(Op::Relu(a), "relu", shape, data)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        self.finish(Op::Tanh(a), "tanh", shape, data)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.finish(Op::Sigmoid(a), "sigmoid", shape, data)
    }

    /// Row-wise softmax of a rank-2 tensor (max-shifted for stability).
    pub fn softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(GradError::BadShape {
                op: "softmax",
                expected: "a rank-2 tensor",
                shape: ta.shape().to_vec(),
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &ta.data()[i * c..(i + 1) * c];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - hi).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        self.finish(Op::Softmax(a), "softmax", vec![r, c], data)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x.ln()).collect();
        self.finish(Op::Ln(a), "ln", shape, data)
    }

    /// Clamp to `[lo, hi]`; clamped entries receive zero gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, GradError> {
        let shape = self.value(a).shape().to_vec();
        let data = self.value(a).data().iter().map(|x| x.clamp(lo, hi)).collect();
        self.finish(Op::Clamp(a, lo, hi), "clamp", shape, data)
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var, GradError> {
        let n = self
            .value(a)
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.finish(Op::FrobeniusNorm(a), "frobenius_norm", vec![1], vec![n])
    }

    /// Strict upper triangle of a square matrix, row-major, as `1 x M(M-1)/2`.
    pub fn upper_triangle_vectorize(&mut self, a: Var) -> Result<Var, GradError> {
        let ta = self.value(a);
        if !ta.is_square() {
            return Err(GradError::BadShape {
                op: "upper_triangle_vectorize",
                expected: "a square matrix",
                shape: ta.shape().to_vec(),
            });
        }
        let m = ta.rows();
        let e = m * (m - 1) / 2;
        let mut data = Vec::with_capacity(e);
        for i in 0..m {
            for j in (i + 1)..m {
                data.push(ta.at(i, j));
            }
        }
        self.finish(
            Op::UpperTriangle(a),
            "upper_triangle_vectorize",
            vec![1, e],
            data,
        )
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape: a second call errors.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(GradError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut by_node = Vec::with_capacity(self.nodes.len());
        let mut param_nodes = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            let tensor = match grads[idx].take() {
                Some(data) => Some(Tensor::new(node.value.shape().to_vec(), data)?),
                None => None,
            };
            if let Op::Param(name) = &node.op {
                param_nodes.push((name.clone(), idx));
            }
            by_node.push(tensor);
        }
        Ok(Gradients {
            by_node,
            param_nodes,
        })
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, a.0, g);
                accumulate(grads, b.0, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, a.0, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                accumulate(grads, b.0, &neg);
            }
            Op::Mul(a, b) => {
                let da = zip_map(g, self.value(*b).data(), |x, y| x * y);
                let db = zip_map(g, self.value(*a).data(), |x, y| x * y);
                accumulate(grads, a.0, &da);
                accumulate(grads, b.0, &db);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x / y).collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(x, (na, nb))| -x * na / (nb * nb))
                    .collect();
                accumulate(grads, a.0, &da);
                accumulate(grads, b.0, &db);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G B^T, dB = A^T G
                let bt = transpose_raw(tb.data(), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                let at = transpose_raw(ta.data(), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                accumulate(grads, a.0, &da);
                accumulate(grads, b.0, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                accumulate(grads, a.0, &da);
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                let da: Vec<f64> = g.iter().map(|x| x * sv).collect();
                let ds: f64 = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, y)| x * y)
                    .sum();
                accumulate(grads, a.0, &da);
                accumulate(grads, s.0, &[ds]);
            }
            Op::AddConst(a, _) => accumulate(grads, a.0, g),
            Op::AddBias(a, bias) => {
                accumulate(grads, a.0, g);
                let (r, c) = (out.rows(), out.cols());
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
                accumulate(grads, bias.0, &db);
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                let da = transpose_raw(g, r, c);
                accumulate(grads, a.0, &da);
            }
            Op::Concat(a, b, axis) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if *axis == 0 {
                    accumulate(grads, a.0, &g[..ta.numel()]);
                    accumulate(grads, b.0, &g[ta.numel()..]);
                } else {
                    let rows = ta.rows();
                    let (ca, cb) = (ta.cols(), tb.cols());
                    let mut da = Vec::with_capacity(ta.numel());
                    let mut db = Vec::with_capacity(tb.numel());
                    for i in 0..rows {
                        let base = i * (ca + cb);
                        da.extend_from_slice(&g[base..base + ca]);
                        db.extend_from_slice(&g[base + ca..base + ca + cb]);
                    }
                    accumulate(grads, a.0, &da);
                    accumulate(grads, b.0, &db);
                }
            }
            Op::Reshape(a) => accumulate(grads, a.0, g),
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).numel()];
                accumulate(grads, a.0, &da);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let da = vec![g[0] / n as f64; n];
                accumulate(grads, a.0, &da);
            }
            Op::RowMax(a) => {
                let ta = self.value(*a);
                let (r, c) = (ta.rows(), ta.cols());
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let row = &ta.data()[i * c..(i + 1) * c];
                    let argmax = first_argmax(row);
                    da[i * c + argmax] = g[i];
                }
                accumulate(grads, a.0, &da);
            }
            Op::GlobalMax(a) => {
                let ta = self.value(*a);
                let mut da = vec![0.0; ta.numel()];
                da[first_argmax(ta.data())] = g[0];
                accumulate(grads, a.0, &da);
            }
            Op::Relu(a) => {
                let da = zip_map(g, self.value(*a).data(), |x, v| if v > 0.0 { x } else { 0.0 });
                accumulate(grads, a.0, &da);
            }
            Op::Tanh(a) => {
                let da = zip_map(g, out.data(), |x, y| x * (1.0 - y * y));
                accumulate(grads, a.0, &da);
            }
            Op::Sigmoid(a) => {
                let da = zip_map(g, out.data(), |x, y| x * y * (1.0 - y));
                accumulate(grads, a.0, &da);
            }
            Op::Softmax(a) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let base = i * c;
                    let dot: f64 = (0..c).map(|j| g[base + j] * y[base + j]).sum();
                    for j in 0..c {
                        da[base + j] = y[base + j] * (g[base + j] - dot);
                    }
                }
                accumulate(grads, a.0, &da);
            }
            Op::Ln(a) => {
                let da = zip_map(g, self.value(*a).data(), |x, v| x / v);
                accumulate(grads, a.0, &da);
            }
            Op::Clamp(a, lo, hi) => {
                let da = zip_map(g, self.value(*a).data(), |x, v| {
                    if v > *lo && v < *hi {
                        x
                    } else {
                        0.0
                    }
                });
                accumulate(grads, a.0, &da);
            }
            Op::FrobeniusNorm(a) => {
                let ta = self.value(*a);
                let norm = out.item();
                let da: Vec<f64> = if norm > 0.0 {
                    ta.data().iter().map(|x| g[0] * x / norm).collect()
                } else {
                    vec![0.0; ta.numel()]
                };
                accumulate(grads, a.0, &da);
            }
            Op::UpperTriangle(a) => {
                let ta = self.value(*a);
                let m = ta.rows();
                let mut da = vec![0.0; m * m];
                let mut k = 0;
                for i in 0..m {
                    for j in (i + 1)..m {
                        da[i * m + j] = g[k];
                        k += 1;
                    }
                }
                accumulate(grads, a.0, &da);
            }
        }
    }

    /// Recomputes every node's value from the recorded program.
    ///
    /// Leaves keep their stored values; everything else is re-executed in tape
    /// order. Replaying a tape yields bitwise-identical forward values.
    pub fn replay_forward(&self) -> Result<Vec<Tensor>, GradError> {
        let mut out: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = |v: &Var| -> &Tensor { &out[v.0] };
            let recomputed = match &node.op {
                Op::Input | Op::Param(_) => node.value.clone(),
                Op::Add(a, b) => rebuild(node, zip_map(value(a).data(), value(b).data(), |x, y| x + y))?,
                Op::Sub(a, b) => rebuild(node, zip_map(value(a).data(), value(b).data(), |x, y| x - y))?,
                Op::Mul(a, b) => rebuild(node, zip_map(value(a).data(), value(b).data(), |x, y| x * y))?,
                Op::Div(a, b) => rebuild(node, zip_map(value(a).data(), value(b).data(), |x, y| x / y))?,
                Op::MatMul(a, b) => {
                    let (ta, tb) = (value(a), value(b));
                    rebuild(
                        node,
                        matmul_raw(ta.data(), tb.data(), ta.rows(), ta.cols(), tb.cols()),
                    )?
                }
                Op::Scale(a, c) => rebuild(node, value(a).data().iter().map(|x| x * c).collect())?,
                Op::MulScalar(a, s) => {
                    let sv = value(s).item();
                    rebuild(node, value(a).data().iter().map(|x| x * sv).collect())?
                }
                Op::AddConst(a, c) => rebuild(node, value(a).data().iter().map(|x| x + c).collect())?,
                Op::AddBias(a, bias) => {
                    let (ta, tb) = (value(a), value(bias));
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            data.push(ta.at(i, j) + tb.at(0, j));
                        }
                    }
                    rebuild(node, data)?
                }
                Op::Transpose(a) => {
                    let ta = value(a);
                    rebuild(node, transpose_raw(ta.data(), ta.rows(), ta.cols()))?
                }
                Op::Concat(a, b, axis) => {
                    let (ta, tb) = (value(a), value(b));
                    let data = if *axis == 0 {
                        let mut d = ta.data().to_vec();
                        d.extend_from_slice(tb.data());
                        d
                    } else {
                        let mut d = Vec::with_capacity(ta.numel() + tb.numel());
                        for i in 0..ta.rows() {
                            d.extend_from_slice(&ta.data()[i * ta.cols()..(i + 1) * ta.cols()]);
                            d.extend_from_slice(&tb.data()[i * tb.cols()..(i + 1) * tb.cols()]);
                        }
                        d
                    };
                    rebuild(node, data)?
                }
                Op::Reshape(a) => rebuild(node, value(a).data().to_vec())?,
                Op::Sum(a) => rebuild(node, vec![value(a).data().iter().sum()])?,
                Op::Mean(a) => {
                    let ta = value(a);
                    rebuild(node, vec![ta.data().iter().sum::<f64>() / ta.numel() as f64])?
                }
                Op::RowMax(a) => {
                    let ta = value(a);
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut data = Vec::with_capacity(r);
                    for i in 0..r {
                        let row = &ta.data()[i * c..(i + 1) * c];
                        data.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                    }
                    rebuild(node, data)?
                }
                Op::GlobalMax(a) => rebuild(
                    node,
                    vec![value(a)
                        .data()
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max)],
                )?,
                Op::Relu(a) => rebuild(node, value(a).data().iter().map(|x| x.max(0.0)).collect())?,
                Op::Tanh(a) => rebuild(node, value(a).data().iter().map(|x| x.tanh()).collect())?,
                Op::Sigmoid(a) => rebuild(
                    node,
                    value(a).data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
                )?,
                Op::Softmax(a) => {
                    let ta = value(a);
                    let (r, c) = (ta.rows(), ta.cols());
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let row = &ta.data()[i * c..(i + 1) * c];
                        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x - hi).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        data.extend(exps.iter().map(|e| e / z));
                    }
                    rebuild(node, data)?
                }
                Op::Ln(a) => rebuild(node, value(a).data().iter().map(|x| x.ln()).collect())?,
                Op::Clamp(a, lo, hi) => rebuild(
                    node,
                    value(a).data().iter().map(|x| x.clamp(*lo, *hi)).collect(),
                )?,
                Op::FrobeniusNorm(a) => rebuild(
                    node,
                    vec![value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt()],
                )?,
                Op::UpperTriangle(a) => {
                    let ta = value(a);
                    let m = ta.rows();
                    let mut data = Vec::with_capacity(m * (m - 1) / 2);
                    for i in 0..m {
                        for j in (i + 1)..m {
                            data.push(ta.at(i, j));
                        }
                    }
                    rebuild(node, data)?
                }
            };
            out.push(recomputed);
        }
        Ok(out)
    }
}

fn rebuild(node: &Node, data: Vec<f64>) -> Result<Tensor, GradError> {
    Tensor::new(node.value.shape().to_vec(), data)
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, delta: &[f64]) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => grads[idx] = Some(delta.to_vec()),
    }
}

fn first_argmax(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in data.iter().enumerate() {
        if *v > data[best] {
            best = i;
        }
    }
    best
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut tape = Tape::new();
        let eye = tape.input(t(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = tape.input(t(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(a).data());
    }

    #[test]
    fn relu_matches_definition() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![3], vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn frobenius_norm_three_four_five() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2, 2], vec![3.0, 4.0, 0.0, 0.0]));
        let n = tape.frobenius_norm(x).unwrap();
        assert_eq!(tape.value(n).item(), 5.0);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2, 3], vec![1., -2., 3., 4., 0., 6.]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn tanh_backward_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![4], vec![0.0; 4]));
        let y = tape.tanh(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2], vec![1.0, 2.0]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, GradError::NonScalarLoss { .. }));
    }

    #[test]
    fn second_backward_on_same_tape_errors() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2], vec![1.0, 2.0]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(
            tape.backward(loss).unwrap_err(),
            GradError::TapeConsumed
        ));
    }

    #[test]
    fn shape_mismatch_names_operation_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(t(vec![2, 2], vec![0.0; 4]));
        let b = tape.input(t(vec![3], vec![0.0; 3]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2, 2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn unreachable_node_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2], vec![1.0, 2.0]));
        let unused = tape.input(t(vec![2], vec![5.0, 6.0]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(unused).is_none());
    }

    #[test]
    fn row_max_ties_route_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![1, 3], vec![2.0, 2.0, 1.0]));
        let y = tape.row_max(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_of_sum_is_linear_over_programs() {
        // backward(f + g) == backward(f) + backward(g), exactly
        let data = t(vec![2, 2], vec![0.3, -0.7, 1.1, 0.4]);
        let run = |combined: bool| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.input(data.clone());
            let f = {
                let sq = tape.mul(x, x).unwrap();
                tape.sum(sq).unwrap()
            };
            let g = {
                let th = tape.tanh(x).unwrap();
                tape.sum(th).unwrap()
            };
            if combined {
                let both = tape.add(f, g).unwrap();
                let grads = tape.backward(both).unwrap();
                (grads.wrt(x).unwrap().data().to_vec(), vec![])
            } else {
                // two separate tapes
                let mut t1 = Tape::new();
                let x1 = t1.input(data.clone());
                let sq = t1.mul(x1, x1).unwrap();
                let f1 = t1.sum(sq).unwrap();
                let g1 = t1.backward(f1).unwrap().wrt(x1).unwrap().data().to_vec();

                let mut t2 = Tape::new();
                let x2 = t2.input(data.clone());
                let th = t2.tanh(x2).unwrap();
                let f2 = t2.sum(th).unwrap();
                let g2 = t2.backward(f2).unwrap().wrt(x2).unwrap().data().to_vec();
                (g1, g2)
            }
        };
        let (combined, _) = run(true);
        let (g1, g2) = run(false);
        for i in 0..combined.len() {
            assert!((combined[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_forward_bitwise() {
        let mut tape = Tape::new();
        let x = tape.input(t(vec![2, 2], vec![0.11, -0.53, 0.97, 0.21]));
        let w = tape.input(t(vec![2, 2], vec![0.5, -1.2, 0.33, 0.8]));
        let p = tape.matmul(x, w).unwrap();
        let s = tape.sigmoid(p).unwrap();
        let sm = tape.softmax(s).unwrap();
        let _ = tape.frobenius_norm(sm).unwrap();
        let replayed = tape.replay_forward().unwrap();
        for (i, r) in replayed.iter().enumerate() {
            assert_eq!(r.data(), tape.value(Var(i)).data(), "node {i}");
        }
    }

    #[test]
    fn concat_axis1_round_trip_gradient() {
        let mut tape = Tape::new();
        let a = tape.input(t(vec![2, 1], vec![1.0, 2.0]));
        let b = tape.input(t(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]));
        let cat = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let weights = tape.input(t(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let prod = tape.mul(cat, weights).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn upper_triangle_vectorize_is_row_major() {
        let mut tape = Tape::new();
        let x = tape.input(t(
            vec![3, 3],
            vec![0.0, 1.0, 2.0, 9.0, 0.0, 3.0, 9.0, 9.0, 0.0],
        ));
        let v = tape.upper_triangle_vectorize(x).unwrap();
        assert_eq!(tape.value(v).shape(), &[1, 3]);
        assert_eq!(tape.value(v).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn division_by_zero_is_rejected_as_non_finite() {
        let mut tape = Tape::new();
        let a = tape.input(t(vec![1], vec![1.0]));
        let b = tape.input(t(vec![1], vec![0.0]));
        assert!(matches!(
            tape.div(a, b).unwrap_err(),
            GradError::NonFinite { op: "divide" }
        ));
    }
}
