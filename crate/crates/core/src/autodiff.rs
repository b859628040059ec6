//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded on a [`Tape`] in execution order; [`Tape::backward`]
//! walks that order in reverse. Gradients on parameters accumulate across
//! backward calls until [`Tape::zero_grad`].

use std::sync::Arc;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{Csr, SparseOperator};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// A sparse operator prepared for differentiation: the transpose needed by
/// the backward pass is built once, and only for non-symmetric operators.
#[derive(Debug)]
pub struct DiffOperator {
    op: SparseOperator,
    adjoint: Option<Csr>,
}

impl DiffOperator {
    pub fn new(op: SparseOperator) -> Arc<Self> {
        let adjoint = (!op.is_symmetric()).then(|| op.csr().transpose());
        Arc::new(Self { op, adjoint })
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    fn adjoint(&self) -> &Csr {
        self.adjoint.as_ref().unwrap_or_else(|| self.op.csr())
    }
}

/// How a node combines its own transformed features with its neighbors'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborCombine {
    /// `Σ_j w_ij (h_i + h_j)`, the aggregation channel.
    Sum,
    /// `Σ_j w_ij (h_i - h_j)`, the diversification channel.
    Difference,
}

impl NeighborCombine {
    fn sign(self) -> f64 {
        match self {
            NeighborCombine::Sum => 1.0,
            NeighborCombine::Difference => -1.0,
        }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulTransposed(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale { x: usize, s: usize },
    Relu(usize),
    Sigmoid(usize),
    Sum(usize),
    Sparse { x: usize, op: Arc<DiffOperator> },
    Neighborhood {
        x: usize,
        graph: Arc<Graph>,
        combine: NeighborCombine,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        probs: Matrix,
        labels: Vec<usize>,
        mask: Vec<usize>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves.
    grad: Option<Matrix>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch { op, lhs: a, rhs: b }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Tensor> {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue(name));
        }
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Tensor { id, rows, cols })
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Tensor> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn parameter(&mut self, value: Matrix) -> Result<Tensor> {
        self.push(value, Op::Leaf, true, "parameter")
    }

    pub fn scalar_parameter(&mut self, value: f64) -> Result<Tensor> {
        self.parameter(Matrix::filled(1, 1, value))
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value.as_slice()[0]
    }

    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.nodes[t.id].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::MatMul(a.id, b.id), rg, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_transposed(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.cols {
            return Err(shape_err("matmul_transposed", a.shape(), b.shape()));
        }
        let v = self.value(a).matmul(&self.value(b).transpose())?;
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::MatMulTransposed(a.id, b.id), rg, "matmul_transposed")
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Add(a.id, b.id), rg, "add")
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Sub(a.id, b.id), rg, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(&[a.id, b.id]);
        self.push(v, Op::Mul(a.id, b.id), rg, "mul")
    }

    /// `s · x` for a 1×1 tensor `s`.
    pub fn scale(&mut self, x: Tensor, s: Tensor) -> Result<Tensor> {
        if s.shape() != (1, 1) {
            return Err(shape_err("scale", x.shape(), s.shape()));
        }
        let v = self.value(x).scale(self.scalar(s));
        let rg = self.needs(&[x.id, s.id]);
        self.push(v, Op::Scale { x: x.id, s: s.id }, rg, "scale")
    }

    pub fn relu(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x.id]);
        self.push(v, Op::Relu(x.id), rg, "relu")
    }

    /// Elementwise logistic function; used on 1×1 mixing scalars.
    pub fn sigmoid(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.value(x).map(sigmoid);
        let rg = self.needs(&[x.id]);
        self.push(v, Op::Sigmoid(x.id), rg, "sigmoid")
    }

    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.needs(&[x.id]);
        self.push(v, Op::Sum(x.id), rg, "sum")
    }

    /// `op · h`.
    pub fn sparse_apply(&mut self, op: &Arc<DiffOperator>, h: Tensor) -> Result<Tensor> {
        let v = op.op.apply(self.value(h))?;
        let rg = self.needs(&[h.id]);
        self.push(
            v,
            Op::Sparse {
                x: h.id,
                op: Arc::clone(op),
            },
            rg,
            "sparse_apply",
        )
    }

    /// Node-level neighborhood combination with weights `w_ij = 1/(d_i + 1)`
    /// over `j ∈ N(i) ∪ {i}`.
    pub fn neighborhood_combine(
        &mut self,
        graph: &Arc<Graph>,
        h: Tensor,
        combine: NeighborCombine,
    ) -> Result<Tensor> {
        if h.rows != graph.node_count() {
            return Err(Error::dims(format!("{} rows", graph.node_count()), h.rows));
        }
        let v = neighborhood_forward(graph, self.value(h), combine);
        let rg = self.needs(&[h.id]);
        self.push(
            v,
            Op::Neighborhood {
                x: h.id,
                graph: Arc::clone(graph),
                combine,
            },
            rg,
            "neighborhood_combine",
        )
    }

    /// Mean negative log-likelihood of `labels` over the `mask` rows, with a
    /// row-max shift for stability.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Tensor,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<Tensor> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if labels.len() != logits.rows {
            return Err(Error::dims(format!("{} labels", logits.rows), labels.len()));
        }
        let z = self.value(logits);
        let probs = softmax_rows(z);
        let mut loss = 0.0;
        for &i in mask {
            let c = labels[i];
            if c >= z.cols() {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: z.cols(),
                });
            }
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[c];
        }
        loss /= mask.len() as f64;
        let rg = self.needs(&[logits.id]);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                probs,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    /// Accumulates `d loss / d p` into every parameter `p` reachable from `loss`.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(Error::LossNotScalar(loss.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let node = &self.nodes[id];
            let mut send = |target: usize, contribution: Matrix| {
                if !self.nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    send(*a, g.matmul(&vb.transpose())?);
                    send(*b, va.transpose().matmul(&g)?);
                }
                Op::MatMulTransposed(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    send(*a, g.matmul(vb)?);
                    send(*b, g.transpose().matmul(va)?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.scale(-1.0));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    send(*a, g.zip_map(vb, |x, y| x * y)?);
                    send(*b, g.zip_map(va, |x, y| x * y)?);
                }
                Op::Scale { x, s } => {
                    let vx = &self.nodes[*x].value;
                    let vs = self.nodes[*s].value.as_slice()[0];
                    send(*s, Matrix::filled(1, 1, g.dot(vx)));
                    send(*x, g.scale(vs));
                }
                Op::Relu(x) => {
                    let vx = &self.nodes[*x].value;
                    send(*x, g.zip_map(vx, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?);
                }
                Op::Sigmoid(x) => {
                    let out = &node.value;
                    send(*x, g.zip_map(out, |gv, y| gv * y * (1.0 - y))?);
                }
                Op::Sum(x) => {
                    let (r, c) = self.nodes[*x].value.shape();
                    send(*x, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::Sparse { x, op } => {
                    send(*x, op.adjoint().apply(&g)?);
                }
                Op::Neighborhood { x, graph, combine } => {
                    send(*x, neighborhood_backward(graph, &g, *combine));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                    mask,
                } => {
                    let upstream = g.as_slice()[0];
                    let scale = upstream / mask.len() as f64;
                    let mut d = Matrix::zeros(probs.rows(), probs.cols());
                    for &i in mask {
                        let row = d.row_mut(i);
                        for (dv, p) in row.iter_mut().zip(probs.row(i)) {
                            *dv += scale * p;
                        }
                        row[labels[i]] -= scale;
                    }
                    send(*logits, d);
                }
            }
        }

        for (id, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[id];
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    p
}

fn neighborhood_forward(graph: &Graph, h: &Matrix, combine: NeighborCombine) -> Matrix {
    let sign = combine.sign();
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for i in 0..graph.node_count() {
        let nbrs = graph.neighbors_unchecked(i);
        let w = 1.0 / (nbrs.len() as f64 + 1.0);
        let hi = h.row(i).to_vec();
        let out_row = out.row_mut(i);
        // j = i term first, then neighbors in ascending order
        for (o, &a) in out_row.iter_mut().zip(&hi) {
            *o += w * (a + sign * a);
        }
        for &j in nbrs {
            for ((o, &a), &b) in out_row.iter_mut().zip(&hi).zip(h.row(j)) {
                *o += w * (a + sign * b);
            }
        }
    }
    out
}

fn neighborhood_backward(graph: &Graph, g: &Matrix, combine: NeighborCombine) -> Matrix {
    // out_i = (Σ_j w_ij) h_i + sign Σ_j w_ij h_j, with Σ_j w_ij = 1
    let sign = combine.sign();
    let mut d = g.clone();
    for i in 0..graph.node_count() {
        let nbrs = graph.neighbors_unchecked(i);
        let w = 1.0 / (nbrs.len() as f64 + 1.0);
        let gi = g.row(i).to_vec();
        for &j in nbrs.iter().chain(std::iter::once(&i)) {
            for (dv, &gv) in d.row_mut(j).iter_mut().zip(&gi) {
                *dv += sign * w * gv;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::OperatorKind;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_passes_gradient_through() {
        let mut t = Tape::new();
        let i = t.constant(Matrix::identity(2)).unwrap();
        let x = t.parameter(m(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let w = t.constant(m(&[vec![0.5, -1.0], vec![2.0, 3.0]])).unwrap();
        let prod = t.mul(y, w).unwrap();
        let loss = t.sum(prod).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), t.value(w));
    }

    #[test]
    fn relu_on_negative_input() {
        let mut t = Tape::new();
        let x = t.parameter(Matrix::filled(2, 3, -1.5)).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &Matrix::zeros(2, 3));
        let loss = t.sum(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Matrix::zeros(2, 3));
    }

    #[test]
    fn scale_by_zero() {
        let mut t = Tape::new();
        let xv = m(&[vec![1.0, -2.0], vec![0.5, 4.0]]);
        let x = t.parameter(xv.clone()).unwrap();
        let s = t.scalar_parameter(0.0).unwrap();
        let y = t.scale(x, s).unwrap();
        assert_eq!(t.value(y), &Matrix::zeros(2, 2));
        let loss = t.sum(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(s).unwrap().as_slice()[0], xv.sum());
        assert_eq!(t.grad(x).unwrap(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn sum_and_squared_norm() {
        let xv = m(&[vec![1.0, -2.0, 3.0]]);
        let mut t = Tape::new();
        let x = t.parameter(xv.clone()).unwrap();
        let loss = t.sum(x).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Matrix::filled(1, 3, 1.0));

        let mut t = Tape::new();
        let x = t.parameter(xv.clone()).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &xv.scale(2.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.parameter(m(&[vec![1.0, 2.0]])).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[4.0, 8.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn loss_must_be_scalar() {
        let mut t = Tape::new();
        let x = t.parameter(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(t.backward(x), Err(Error::LossNotScalar((2, 2)))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.parameter(Matrix::zeros(2, 3)).unwrap();
        let b = t.parameter(Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(t.scale(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let mut t = Tape::new();
        assert!(matches!(
            t.parameter(Matrix::filled(1, 1, f64::NAN)),
            Err(Error::NonFiniteValue(_))
        ));
        let a = t.parameter(Matrix::filled(1, 1, 1e200)).unwrap();
        assert!(matches!(t.mul(a, a), Err(Error::NonFiniteValue("mul"))));
    }

    #[test]
    fn softmax_ce_cases() {
        let mut t = Tape::new();
        let mut z = Matrix::zeros(2, 3);
        z[(0, 1)] = 1e6;
        z[(1, 2)] = 1e6;
        let logits = t.parameter(z).unwrap();
        let loss = t.softmax_cross_entropy(logits, &[1, 2], &[0, 1]).unwrap();
        assert!(t.scalar(loss).abs() < 1e-12);

        let mut t = Tape::new();
        let logits = t.parameter(Matrix::zeros(4, 5)).unwrap();
        let loss = t.softmax_cross_entropy(logits, &[0, 1, 2, 3], &[0, 2, 3]).unwrap();
        assert!((t.scalar(loss) - 5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            t.softmax_cross_entropy(logits, &[0, 1, 2, 3], &[]),
            Err(Error::EmptyMask)
        ));
        t.backward(loss).unwrap();
        // unmasked row 1 gets no gradient
        assert_eq!(t.grad(logits).unwrap().row(1), &[0.0; 5]);
    }

    #[test]
    fn edgeless_operator_passes_through() {
        let g = Graph::empty(3);
        let op = DiffOperator::new(SparseOperator::build(&g, OperatorKind::RenormRwAffinity).unwrap());
        let mut t = Tape::new();
        let xv = m(&[vec![1.0], vec![-2.0], vec![3.0]]);
        let x = t.parameter(xv.clone()).unwrap();
        let y = t.sparse_apply(&op, x).unwrap();
        assert_eq!(t.value(y), &xv);
        let w = t.constant(m(&[vec![2.0], vec![5.0], vec![-1.0]])).unwrap();
        let p = t.mul(y, w).unwrap();
        let loss = t.sum(p).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), t.value(w));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
