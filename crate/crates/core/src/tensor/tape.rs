//! Reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! Operations are recorded on a [`Tape`] in evaluation order, so the node
//! index order is already a topological order of the computation. A
//! backward sweep walks the indices in reverse and visits each node once,
//! summing adjoints when a value feeds several consumers.
//!
//! ```
//! use ragc::tensor::{DenseMatrix, Tape};
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(DenseMatrix::from_rows(&[[1.0, -2.0]]).unwrap());
//! let sq = tape.hadamard(a, a).unwrap();
//! let half = tape.scale(sq, 0.5).unwrap();
//! let loss = tape.sum(half).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(a).unwrap(), tape.value(a));
//! ```

use super::matrix::{DenseMatrix, EPSILON_NORM};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    MeanOfTwo(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    Sigmoid(Var),
    ScalarMul(Var, Var),
    RowL2Normalize(Var),
    RowSum(Var),
    Diag(Var),
    Sum(Var),
}

struct Node {
    value: DenseMatrix,
    op: Op,
    /// Whether any gradient can reach a trainable leaf through this node.
    tracked: bool,
}

/// Append-only record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the trainable leaves after [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &DenseMatrix) -> DenseMatrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(like.rows(), like.cols()))
    }
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

    pub fn value(&self, var: Var) -> &DenseMatrix {
        &self.nodes[var.0].value
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push_unchecked(value, Op::Constant, false)
    }

    fn push_unchecked(&mut self, value: DenseMatrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = match op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::MeanOfTwo(a, b)
            | Op::ScalarMul(a, b) => self.tracked(a) || self.tracked(b),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Powf(a, _)
            | Op::Sigmoid(a)
            | Op::RowL2Normalize(a)
            | Op::RowSum(a)
            | Op::Diag(a)
            | Op::Sum(a) => self.tracked(a),
        };
        Ok(self.push_unchecked(value, op, tracked))
    }

    fn tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        self.push(v, Op::MatMulNt(a, b), "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(v, Op::Hadamard(a, b), "hadamard")
    }

    pub fn mean_of_two(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mean_of_two(self.value(b))?;
        self.push(v, Op::MeanOfTwo(a, b), "mean_of_two")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + shift);
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a), "neg")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a), "ln")
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.powf(exponent));
        self.push(v, Op::Powf(a, exponent), "powf")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(logistic);
        self.push(v, Op::Sigmoid(a), "sigmoid")
    }

    /// Multiplies matrix `m` by the 1x1 value `s`.
    pub fn scalar_mul(&mut self, s: Var, m: Var) -> Result<Var> {
        let factor = self.value(s).as_scalar()?;
        let v = self.value(m).scale(factor);
        self.push(v, Op::ScalarMul(s, m), "scalar_mul")
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).row_l2_normalize()?;
        self.push(v, Op::RowL2Normalize(a), "row_l2_normalize")
    }

    /// Column vector of row sums.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = DenseMatrix::column(
            &self
                .value(a)
                .row_iter()
                .map(|r| r.iter().sum())
                .collect::<Vec<f64>>(),
        );
        let v = if self.value(a).cols() == 0 {
            DenseMatrix::zeros(self.value(a).rows(), 1)
        } else {
            v
        };
        self.push(v, Op::RowSum(a), "row_sum")
    }

    /// Column vector holding the diagonal of a square matrix.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(Error::Shape {
                op: "diag",
                left: m.shape(),
                right: m.shape(),
            });
        }
        let v = DenseMatrix::column(&(0..m.rows()).map(|i| m.get(i, i)).collect::<Vec<_>>());
        self.push(v, Op::Diag(a), "diag")
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = DenseMatrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    /// Mean of all entries as a 1x1 value.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty matrix".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Propagates adjoints from a 1x1 `loss` back to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            let out = &node.value;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.tracked(a) {
                        let ga = g.matmul_nt(self.value(b))?;
                        accumulate(&mut grads, a, ga)?;
                    }
                    if self.tracked(b) {
                        let gb = self.value(a).matmul_tn(&g)?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.tracked(a) {
                        let ga = g.matmul(self.value(b))?;
                        accumulate(&mut grads, a, ga)?;
                    }
                    if self.tracked(b) {
                        let gb = g.matmul_tn(self.value(a))?;
                        accumulate(&mut grads, b, gb)?;
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.transpose())?,
                Op::Add(a, b) => {
                    self.send(&mut grads, a, || Ok(g.clone()))?;
                    self.send(&mut grads, b, || Ok(g.clone()))?;
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, a, || Ok(g.clone()))?;
                    self.send(&mut grads, b, || Ok(g.scale(-1.0)))?;
                }
                Op::Hadamard(a, b) => {
                    self.send(&mut grads, a, || g.hadamard(self.value(b)))?;
                    self.send(&mut grads, b, || g.hadamard(self.value(a)))?;
                }
                Op::MeanOfTwo(a, b) => {
                    self.send(&mut grads, a, || Ok(g.scale(0.5)))?;
                    self.send(&mut grads, b, || Ok(g.scale(0.5)))?;
                }
                Op::Scale(a, factor) => accumulate(&mut grads, a, g.scale(factor))?,
                Op::AddScalar(a) => accumulate(&mut grads, a, g)?,
                Op::Neg(a) => accumulate(&mut grads, a, g.scale(-1.0))?,
                Op::Exp(a) => accumulate(&mut grads, a, g.hadamard(out)?)?,
                Op::Ln(a) => {
                    let ga = g.hadamard(&self.value(a).map(|x| 1.0 / x))?;
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Powf(a, p) => {
                    let ga = g.hadamard(&self.value(a).map(|x| p * x.powf(p - 1.0)))?;
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.hadamard(&out.map(|y| y * (1.0 - y)))?;
                    accumulate(&mut grads, a, ga)?;
                }
                Op::ScalarMul(s, m) => {
                    let factor = self.value(s).as_scalar()?;
                    self.send(&mut grads, s, || {
                        Ok(DenseMatrix::scalar(
                            g.data()
                                .iter()
                                .zip(self.value(m).data())
                                .map(|(x, y)| x * y)
                                .sum(),
                        ))
                    })?;
                    self.send(&mut grads, m, || Ok(g.scale(factor)))?;
                }
                Op::RowL2Normalize(a) => {
                    let norms = self.value(a).row_norms();
                    let mut ga = DenseMatrix::zeros(g.rows(), g.cols());
                    for (i, &norm) in norms.iter().enumerate() {
                        let y = out.row(i);
                        let gi = g.row(i);
                        let dot: f64 = y.iter().zip(gi).map(|(u, v)| u * v).sum();
                        let norm = norm.max(EPSILON_NORM);
                        for (dst, (&yv, &gv)) in ga.row_mut(i).iter_mut().zip(y.iter().zip(gi)) {
                            *dst = (gv - yv * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, a, ga)?;
                }
                Op::RowSum(a) => {
                    let src = self.value(a);
                    let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                    for i in 0..src.rows() {
                        let gi = g.get(i, 0);
                        ga.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Diag(a) => {
                    let n = g.rows();
                    let mut ga = DenseMatrix::zeros(n, n);
                    for i in 0..n {
                        ga.set(i, i, g.get(i, 0));
                    }
                    accumulate(&mut grads, a, ga)?;
                }
                Op::Sum(a) => {
                    let src = self.value(a);
                    let ga = DenseMatrix::filled(src.rows(), src.cols(), g.as_scalar()?);
                    accumulate(&mut grads, a, ga)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn send(
        &self,
        grads: &mut [Option<DenseMatrix>],
        target: Var,
        contribution: impl FnOnce() -> Result<DenseMatrix>,
    ) -> Result<()> {
        if self.tracked(target) {
            accumulate(grads, target, contribution()?)?;
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], target: Var, g: DenseMatrix) -> Result<()> {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let l = t.sum(a).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &DenseMatrix::filled(3, 2, 1.0));
    }

    #[test]
    fn half_squared_norm_gradient_is_input() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[1.5, -2.0, 0.25]]));
        let sq = t.powf(a, 2.0).unwrap();
        let s = t.sum(sq).unwrap();
        let l = t.scale(s, 0.5).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(a).unwrap().max_abs_diff(t.value(a)) < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let a = t.leaf(DenseMatrix::zeros(2, 2));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_node_accumulates() {
        // f = sum(a + a) -> df/da = 2
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[1.0, -1.0]]));
        let s = t.add(a, a).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &DenseMatrix::filled(1, 2, 2.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[1.0, 2.0]]));
        let c = t.constant(mat(&[&[3.0], &[4.0]]));
        let p = t.matmul(a, c).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(a).unwrap(), &mat(&[&[3.0, 4.0]]));
    }

    #[test]
    fn row_normalize_on_tape_rejects_zero_row() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[0.0, 0.0]]));
        assert!(matches!(
            t.row_l2_normalize(a),
            Err(Error::DegenerateRow { row: 0, .. })
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[&[800.0]]));
        assert!(matches!(t.exp(a), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn logistic_is_symmetric_and_stable() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert!(logistic(-1000.0) >= 0.0);
        assert!(logistic(1000.0) <= 1.0);
    }
}
