use rand::Rng;

use crate::error::{Result, TensorError};
use crate::kernels::{dot, gemm, gemm_nt, gemm_tn};
use crate::tensor::{check_shape, Tensor};
use crate::LAYER_NORM_EPS;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A linear record of one forward computation.
///
/// Nodes are appended in evaluation order, so replaying them backwards is a
/// valid topological order. Gradients are only propagated through nodes
/// that transitively depend on a leaf with `requires_grad`.
///
/// Calling [`Tape::backward`] more than once accumulates into the leaf
/// gradients; [`Tape::zero_grad`] clears them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    flops: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes, leaves included.
    pub fn op_count(&self) -> usize {
        self.nodes.len()
    }

    /// Approximate floating-point operation count of the forward pass.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("recorded shapes are valid")
    }

    /// Which side of its kink every ReLU and abs input lies on, in
    /// recording order. Two evaluations with equal patterns ran the same
    /// piecewise-smooth branch.
    pub fn branch_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) | Op::Abs(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|v| v.iter().map(|&x| x > 0.0))
            .collect()
    }

    /// Records a tensor as a leaf. It participates in differentiation when
    /// the tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        check_shape(&shape, data.len())?;
        Ok(self.push_leaf(shape, data, false))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var], flops: u64) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.flops += flops;
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::ShapeMismatch {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b], (2 * m * k * n) as u64))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let n = value.len() as u64;
        Ok(self.push(self.nodes[a.0].shape.clone(), value, op, &[a, b], n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = *self.nodes[x.0].shape.last().expect("non-empty shape");
        if self.nodes[bias.0].value.len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.nodes[x.0].shape.clone(),
                right: self.nodes[bias.0].shape.clone(),
            });
        }
        let b = &self.nodes[bias.0].value;
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        let n = value.len() as u64;
        Ok(self.push(self.nodes[x.0].shape.clone(), value, Op::AddRow(x, bias), &[x, bias], n))
    }

    /// Adds a constant array of the same length; gradient passes through.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        self.check_len(x, c.len(), "add_const")?;
        let value: Vec<f64> = self.value(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let n = value.len() as u64;
        Ok(self.push(self.nodes[x.0].shape.clone(), value, Op::AddConst(x), &[x], n))
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        self.check_len(x, c.len(), "mul_const")?;
        let value: Vec<f64> = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let n = value.len() as u64;
        Ok(self.push(self.nodes[x.0].shape.clone(), value, Op::MulConst(x, c), &[x], n))
    }

    fn check_len(&self, x: Var, len: usize, op: &'static str) -> Result<()> {
        if self.nodes[x.0].value.len() != len {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.nodes[x.0].shape.clone(),
                right: vec![len],
            });
        }
        Ok(())
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|v| v * s).collect();
        let n = value.len() as u64;
        self.push(self.nodes[x.0].shape.clone(), value, Op::Scale(x, s), &[x], n)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let n = value.len() as u64;
        self.push(self.nodes[x.0].shape.clone(), value, op, &[x], n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs(x), f64::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, Op::Square(x), |v| v * v)
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`. Returns `x` itself when not
    /// training, so evaluation is the exact identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let n = out.len() as u64;
        Ok(self.push(shape, out, Op::Softmax { x, axis }, &[x], 4 * n))
    }

    /// Layer normalization over the last axis with an affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().expect("non-empty shape");
        for p in [gain, bias] {
            if self.nodes[p.0].value.len() != d {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape,
                    right: self.nodes[p.0].shape.clone(),
                });
            }
        }
        let src = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let n = out.len() as u64;
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
            8 * n,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let src = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(x), &[x], 0))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} outside {c} columns",
                start + len
            )));
        }
        let src = self.value(x);
        let out: Vec<f64> = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(vec![r, len], out, Op::SliceCols { x, start }, &[x], 0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.dims2(p, "concat_cols")?);
        }
        let rows = dims.first().map(|d| d.0).unwrap_or(0);
        if rows == 0 || dims.iter().any(|d| d.0 != rows) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                left: dims.iter().map(|d| d.0).collect(),
                right: dims.iter().map(|d| d.1).collect(),
            });
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.nodes[p.0].value[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), parts, 0))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.dims2(p, "concat_rows")?);
        }
        let cols = dims.first().map(|d| d.1).unwrap_or(0);
        if cols == 0 || dims.iter().any(|d| d.1 != cols) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                left: dims.iter().map(|d| d.0).collect(),
                right: dims.iter().map(|d| d.1).collect(),
            });
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), parts, 0))
    }

    /// Row `i` of a matrix as a `1×cols` matrix.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "row")?;
        if i >= r {
            return Err(TensorError::Contract(format!("row {i} outside {r} rows")));
        }
        let out = self.value(x)[i * c..(i + 1) * c].to_vec();
        Ok(self.push(vec![1, c], out, Op::Row(x, i), &[x], 0))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let n = self.nodes[x.0].value.len() as u64;
        self.push(vec![1], vec![s], Op::Sum(x), &[x], n)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let n = v.len() as u64;
        self.push(vec![1], vec![s], Op::Mean(x), &[x], n)
    }

    /// Gradient accumulated on a leaf by previous `backward` calls. After a
    /// backward pass every differentiable leaf has a (possibly zero) entry.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Adds the gradient of leaf `v` into `t`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Err(TensorError::Contract(format!("node {} has no gradient", v.0))),
        }
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        if self.leaf_grads.len() < n {
            self.leaf_grads.resize(n, None);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                let slot = self.leaf_grads[idx].get_or_insert_with(|| vec![0.0; g.len()]);
                add_into(slot, &g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.leaf_grads[idx].is_none() {
                self.leaf_grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Returns the gradient slot of an input, allocating zeros on first use.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if wants(*a) {
                    gemm_nt(g, &nodes[b.0].value, slot(grads, nodes, *a), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(&nodes[a.0].value, g, slot(grads, nodes, *b), k, m, n);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, nodes, *a), g);
                }
                if wants(*b) {
                    add_into(slot(grads, nodes, *b), g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, nodes, *a), g);
                }
                if wants(*b) {
                    for (s, gv) in slot(grads, nodes, *b).iter_mut().zip(g) {
                        *s -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = &nodes[b.0].value;
                    for ((s, gv), o) in slot(grads, nodes, *a).iter_mut().zip(g).zip(other) {
                        *s += gv * o;
                    }
                }
                if wants(*b) {
                    let other = &nodes[a.0].value;
                    for ((s, gv), o) in slot(grads, nodes, *b).iter_mut().zip(g).zip(other) {
                        *s += gv * o;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if wants(*x) {
                    add_into(slot(grads, nodes, *x), g);
                }
                if wants(*bias) {
                    let gb = slot(grads, nodes, *bias);
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::AddConst(x) => add_into(slot(grads, nodes, *x), g),
            Op::MulConst(x, c) => {
                for ((s, gv), cv) in slot(grads, nodes, *x).iter_mut().zip(g).zip(c) {
                    *s += gv * cv;
                }
            }
            Op::Scale(x, k) => {
                for (s, gv) in slot(grads, nodes, *x).iter_mut().zip(g) {
                    *s += gv * k;
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                for ((s, gv), v) in slot(grads, nodes, *x).iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *s += gv;
                    }
                }
            }
            Op::Abs(x) => {
                let xv = &nodes[x.0].value;
                for ((s, gv), v) in slot(grads, nodes, *x).iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *s += gv;
                    } else if *v < 0.0 {
                        *s -= gv;
                    }
                }
            }
            Op::Square(x) => {
                let xv = &nodes[x.0].value;
                for ((s, gv), v) in slot(grads, nodes, *x).iter_mut().zip(g).zip(xv) {
                    *s += 2.0 * v * gv;
                }
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(&node.shape, *axis);
                let gx = slot(grads, nodes, *x);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let inner_prod: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - inner_prod);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.shape.last().expect("non-empty shape");
                let gv = &nodes[gain.0].value;
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    let mut dxhat = vec![0.0; d];
                    for (r, &s) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dh = dot(&dxhat, hr);
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += s * (dxhat[j] - inv_d * sum_d - hr[j] * inv_d * sum_dh);
                        }
                    }
                }
                if wants(*gain) {
                    let gg = slot(grads, nodes, *gain);
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(grads, nodes, *bias);
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                let gx = slot(grads, nodes, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].shape[1];
                let len = node.shape[1];
                let gx = slot(grads, nodes, *x);
                for (i, gr) in g.chunks(len).enumerate() {
                    add_into(&mut gx[i * c + start..i * c + start + len], gr);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.shape[1];
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].shape[1];
                    if wants(*p) {
                        let gp = slot(grads, nodes, *p);
                        for (i, gr) in g.chunks(total).enumerate() {
                            add_into(&mut gp[i * c..(i + 1) * c], &gr[offset..offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(*p) {
                        add_into(slot(grads, nodes, *p), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Row(x, i) => {
                let c = node.shape[1];
                add_into(&mut slot(grads, nodes, *x)[i * c..(i + 1) * c], g);
            }
            Op::Sum(x) => {
                for s in slot(grads, nodes, *x).iter_mut() {
                    *s += g[0];
                }
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                for s in slot(grads, nodes, *x).iter_mut() {
                    *s += g[0] / n;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
