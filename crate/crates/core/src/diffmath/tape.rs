//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Nodes are whole matrices (batch rows × feature columns), so an unrolled
//! ODE solve records a few dozen nodes per stage instead of one per scalar.
//! The tape is append-only; `backward` walks it once in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mat::Mat;
use super::params::{ParamLayout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => x.max(F::zero()) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(F::zero()),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Identity => F::one(),
        }
    }

    #[inline]
    pub fn second_derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -(F::one() + F::one()) * t * (F::one() - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (F::one() - s)
            }
            Activation::Relu | Activation::Identity => F::zero(),
        }
    }

    /// σ'(x) given y = σ(x); avoids re-evaluating the transcendental.
    #[inline]
    fn derivative_from_output<F: Scalar>(self, x: F, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Softplus => -(-y).exp_m1(),
            _ => self.derivative(x),
        }
    }

    /// σ''(x) given y = σ(x) and d = σ'(x).
    #[inline]
    fn second_from<F: Scalar>(self, y: F, d: F) -> F {
        match self {
            Activation::Tanh => -(F::one() + F::one()) * y * d,
            Activation::Softplus => d * (F::one() - d),
            Activation::Relu | Activation::Identity => F::zero(),
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    BroadcastRows(usize),
    Scale(usize, F),
    AddScalar(usize),
    Act(usize, Activation),
    /// σ'(a); the optional node holds σ(a) for cheaper derivatives.
    ActDeriv(usize, Activation, Option<usize>),
    Exp(usize),
    Pow(usize, F),
    SelectCol(usize, usize),
    SelectRow(usize, usize),
    ConcatCols(usize, usize),
    RowSum(usize),
    ColMean(usize),
    SumAll(usize),
    RowNorm(usize),
    SoftmaxXent(usize, Arc<Vec<usize>>),
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
}

/// Variables bound to the slices of a [`ParamVector`], in layout order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, slice: usize) -> Var {
        self.vars[slice]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    bound: Option<(Arc<ParamLayout>, Vec<Var>)>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> F {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    /// A leaf whose gradient is available through [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds every slice of `params` as a leaf. A tape holds at most one
    /// parameter vector; [`Gradients::params`] scatters back into its layout.
    pub fn bind_params(&mut self, params: &ParamVector<F>) -> ParamVars {
        assert!(self.bound.is_none(), "tape already has bound parameters");
        let vars: Vec<Var> = (0..params.layout().slices().len())
            .map(|i| self.leaf(params.slice_mat(i)))
            .collect();
        self.bound = Some((params.layout().clone(), vars.clone()));
        ParamVars { vars }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: operand shapes differ");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul: {ar}x{ac} · {br}x{bc}");
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    /// Adds a 1×c row to every row of an n×c matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: row shape");
        let mut v = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&r) {
                *x = *x + b;
            }
        }
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// Multiplies every row of an n×c matrix elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row: row shape");
        let mut v = self.value(a).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&r) {
                *x = *x * b;
            }
        }
        self.push(v, Op::MulRow(a.0, row.0))
    }

    /// Repeats a 1×c row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        assert_eq!(self.shape(row).0, 1, "broadcast_rows: expects a row");
        let r = self.value(row).as_slice().to_vec();
        let mut data = Vec::with_capacity(n * r.len());
        for _ in 0..n {
            data.extend_from_slice(&r);
        }
        let v = Mat::from_vec(n, r.len(), data).expect("sizes agree");
        self.push(v, Op::BroadcastRows(row.0))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).scaled(c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a.0))
    }

    pub fn act(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).map(|x| kind.apply(x));
        self.push(v, Op::Act(a.0, kind))
    }

    /// Elementwise activation derivative σ'(a); differentiable itself.
    pub fn act_deriv(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).map(|x| kind.derivative(x));
        self.push(v, Op::ActDeriv(a.0, kind, None))
    }

    /// `(σ(a), σ'(a))` sharing one evaluation of σ.
    pub fn act_with_deriv(&mut self, a: Var, kind: Activation) -> (Var, Var) {
        let h = self.act(a, kind);
        let d = self
            .value(a)
            .zip_map(self.value(h), |x, y| kind.derivative_from_output(x, y));
        let d = self.push(d, Op::ActDeriv(a.0, kind, Some(h.0)));
        (h, d)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a.0))
    }

    pub fn powf(&mut self, a: Var, p: F) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Pow(a.0, p))
    }

    pub fn select_col(&mut self, a: Var, j: usize) -> Var {
        let m = self.value(a);
        assert!(j < m.cols(), "select_col: column {j} of {}", m.cols());
        let v = Mat::from_vec(m.rows(), 1, m.column(j)).expect("sizes agree");
        self.push(v, Op::SelectCol(a.0, j))
    }

    pub fn select_row(&mut self, a: Var, i: usize) -> Var {
        let m = self.value(a);
        assert!(i < m.rows(), "select_row: row {i} of {}", m.rows());
        let v = Mat::row_vector(m.row(i));
        self.push(v, Op::SelectRow(a.0, i))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.rows(), mb.rows(), "concat_cols: row counts");
        let (ca, cb) = (ma.cols(), mb.cols());
        let mut out = Mat::zeros(ma.rows(), ca + cb);
        for i in 0..ma.rows() {
            let row = out.row_mut(i);
            row[..ca].copy_from_slice(ma.row(i));
            row[ca..].copy_from_slice(mb.row(i));
        }
        self.push(out, Op::ConcatCols(a.0, b.0))
    }

    /// n×c → n×1 sums across columns.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v: Vec<F> = m.iter_rows().map(|r| r.iter().copied().sum()).collect();
        let v = Mat::from_vec(m.rows(), 1, v).expect("sizes agree");
        self.push(v, Op::RowSum(a.0))
    }

    /// n×c → 1×c means down columns.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let v = self.value(a).col_means();
        self.push(v, Op::ColMean(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(a).sum());
        self.push(v, Op::SumAll(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).as_slice().len().max(1);
        let s = self.sum(a);
        self.scale(s, F::one() / F::of_usize(n))
    }

    /// n×c → n×1 Euclidean norm of each row. The gradient at a zero row is
    /// taken as zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v: Vec<F> = m
            .iter_rows()
            .map(|r| r.iter().map(|&x| x * x).sum::<F>().sqrt())
            .collect();
        let v = Mat::from_vec(m.rows(), 1, v).expect("sizes agree");
        self.push(v, Op::RowNorm(a.0))
    }

    /// Mean softmax cross-entropy of n×C logits against class indices
    /// (0-based). Returns a 1×1 node.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Var {
        let m = self.value(logits);
        assert_eq!(m.rows(), labels.len(), "softmax_xent: label count");
        let mut total = F::zero();
        for (row, &y) in m.iter_rows().zip(labels) {
            assert!(y < row.len(), "softmax_xent: label {y} out of range");
            total = total + log_sum_exp(row) - row[y];
        }
        let v = Mat::filled(1, 1, total / F::of_usize(labels.len().max(1)));
        self.push(v, Op::SoftmaxXent(logits.0, Arc::new(labels.to_vec())))
    }

    /// Reverse sweep from a 1×1 loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Mat<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::filled(1, 1, F::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(&self.nodes[b].value);
                    let gb = self.nodes[a].value.matmul_at(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                &Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                &Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.scaled(-F::one()));
                    accumulate(&mut grads, a, g);
                }
                &Op::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[b].value, |x, y| x * y);
                    let gb = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                &Op::AddRow(a, row) => {
                    accumulate(&mut grads, row, g.col_sums());
                    accumulate(&mut grads, a, g);
                }
                &Op::MulRow(a, row) => {
                    let r = self.nodes[row].value.as_slice();
                    let av = &self.nodes[a].value;
                    let mut ga = g.clone();
                    let mut gr = vec![F::zero(); r.len()];
                    for k in 0..g.rows() {
                        let grow = g.row(k);
                        let arow = av.row(k);
                        for (j, x) in ga.row_mut(k).iter_mut().enumerate() {
                            *x = *x * r[j];
                            gr[j] = gr[j] + grow[j] * arow[j];
                        }
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, row, Mat::row_vector(&gr));
                }
                &Op::BroadcastRows(row) => accumulate(&mut grads, row, g.col_sums()),
                &Op::Scale(a, c) => accumulate(&mut grads, a, g.scaled(c)),
                &Op::AddScalar(a) => accumulate(&mut grads, a, g),
                &Op::Act(a, kind) => {
                    let pre = self.nodes[a].value.as_slice();
                    let mut ga = g;
                    for ((o, &x), &y) in ga.as_mut_slice().iter_mut().zip(pre).zip(node.value.as_slice()) {
                        *o = *o * kind.derivative_from_output(x, y);
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::ActDeriv(a, kind, post) => {
                    if kind.is_smooth() && kind != Activation::Identity {
                        let ga = match post {
                            Some(h) => {
                                let mut ga = g;
                                let ys = self.nodes[h].value.as_slice();
                                for ((o, &y), &d) in ga.as_mut_slice().iter_mut().zip(ys).zip(node.value.as_slice()) {
                                    *o = *o * kind.second_from(y, d);
                                }
                                ga
                            }
                            None => g.zip_map(&self.nodes[a].value, |x, y| x * kind.second_derivative(y)),
                        };
                        accumulate(&mut grads, a, ga);
                    }
                }
                &Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    accumulate(&mut grads, a, ga);
                }
                &Op::Pow(a, p) => {
                    let ga = g.zip_map(&self.nodes[a].value, |x, y| x * p * y.powf(p - F::one()));
                    accumulate(&mut grads, a, ga);
                }
                &Op::SelectCol(a, j) => {
                    let (n, c) = self.nodes[a].value.shape();
                    let mut ga = Mat::zeros(n, c);
                    for k in 0..n {
                        ga[(k, j)] = g[(k, 0)];
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::SelectRow(a, i) => {
                    let (n, c) = self.nodes[a].value.shape();
                    let mut ga = Mat::zeros(n, c);
                    ga.row_mut(i).copy_from_slice(g.as_slice());
                    accumulate(&mut grads, a, ga);
                }
                &Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.cols();
                    let cb = self.nodes[b].value.cols();
                    let mut ga = Mat::zeros(g.rows(), ca);
                    let mut gb = Mat::zeros(g.rows(), cb);
                    for k in 0..g.rows() {
                        ga.row_mut(k).copy_from_slice(&g.row(k)[..ca]);
                        gb.row_mut(k).copy_from_slice(&g.row(k)[ca..]);
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                &Op::RowSum(a) => {
                    let (n, c) = self.nodes[a].value.shape();
                    let mut ga = Mat::zeros(n, c);
                    for k in 0..n {
                        let gk = g[(k, 0)];
                        ga.row_mut(k).iter_mut().for_each(|x| *x = gk);
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::ColMean(a) => {
                    let (n, c) = self.nodes[a].value.shape();
                    let inv = F::one() / F::of_usize(n.max(1));
                    let mut ga = Mat::zeros(n, c);
                    for k in 0..n {
                        for (x, &gj) in ga.row_mut(k).iter_mut().zip(g.as_slice()) {
                            *x = gj * inv;
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                &Op::SumAll(a) => {
                    let (n, c) = self.nodes[a].value.shape();
                    accumulate(&mut grads, a, Mat::filled(n, c, g[(0, 0)]));
                }
                &Op::RowNorm(a) => {
                    let av = &self.nodes[a].value;
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    for k in 0..av.rows() {
                        let nk = node.value[(k, 0)];
                        if nk > F::zero() {
                            let s = g[(k, 0)] / nk;
                            for (x, &y) in ga.row_mut(k).iter_mut().zip(av.row(k)) {
                                *x = s * y;
                            }
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::SoftmaxXent(a, labels) => {
                    let a = *a;
                    let lv = &self.nodes[a].value;
                    let scale = g[(0, 0)] / F::of_usize(labels.len().max(1));
                    let mut ga = Mat::zeros(lv.rows(), lv.cols());
                    for (k, &y) in labels.iter().enumerate() {
                        let row = lv.row(k);
                        let lse = log_sum_exp(row);
                        for (j, x) in ga.row_mut(k).iter_mut().enumerate() {
                            let p = (row[j] - lse).exp();
                            let t = if j == y { F::one() } else { F::zero() };
                            *x = scale * (p - t);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
            }
        }

        Ok(Gradients {
            grads,
            bound: self.bound.clone(),
        })
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Mat<F>>], idx: usize, g: Mat<F>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<F>().ln()
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Mat<F>>>,
    bound: Option<(Arc<ParamLayout>, Vec<Var>)>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient with respect to a leaf; `None` when the loss does not depend
    /// on it. Interior gradients are released during the sweep.
    pub fn wrt(&self, v: Var) -> Option<&Mat<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to the bound parameter vector, in its layout.
    pub fn params(&self) -> Option<ParamVector<F>> {
        let (layout, vars) = self.bound.as_ref()?;
        let mut out = ParamVector::zeros(layout.clone());
        for (slice, var) in vars.iter().enumerate() {
            if let Some(g) = self.wrt(*var) {
                out.slice_mut(slice).copy_from_slice(g.as_slice());
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Mat::filled(1, 1, 3.0));
        let sq = tape.mul(w, w);
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.wrt(w).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn symmetric_softmax_gradient() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Mat::zeros(1, 2));
        let loss = tape.softmax_xent(logits, &[0]);
        assert!((tape.scalar(loss) - 2f64.ln()).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        let g = g.wrt(logits).unwrap();
        assert!((g[(0, 0)] + 0.5).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Mat::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss { rows: 2, cols: 1 })));
    }

    fn numeric_check(build: impl Fn(&mut Tape<f64>, Var) -> Var, x0: Mat<f64>) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = build(&mut tape, x);
        let g = tape.backward(loss).unwrap().wrt(x).cloned().unwrap_or(Mat::zeros(x0.rows(), x0.cols()));
        let eps = 1e-6;
        for k in 0..x0.as_slice().len() {
            let eval = |delta: f64| {
                let mut m = x0.clone();
                m.as_mut_slice()[k] += delta;
                let mut t = Tape::new();
                let v = t.leaf(m);
                let l = build(&mut t, v);
                t.scalar(l)
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let an = g.as_slice()[k];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "coord {k}: fd {fd} vs {an}");
        }
    }

    fn sample() -> Mat<f64> {
        Mat::from_vec(3, 2, vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap()
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        for kind in [Activation::Tanh, Activation::Softplus, Activation::Identity] {
            numeric_check(
                |t, x| {
                    let a = t.act(x, kind);
                    let d = t.act_deriv(x, kind);
                    let p = t.mul(a, d);
                    let e = t.exp(p);
                    let q = t.add_scalar(e, 2.0);
                    let r = t.powf(q, -0.5);
                    t.sum(r)
                },
                sample(),
            );
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        numeric_check(
            |t, x| {
                let w = t.leaf(Mat::from_vec(2, 3, vec![0.5, -1.0, 0.2, 0.3, 0.8, -0.6]).unwrap());
                let h = t.matmul(x, w);
                let r0 = t.select_row(x, 1);
                let b = t.broadcast_rows(r0, 3);
                let c = t.concat_cols(h, b);
                let c0 = t.select_col(c, 4);
                let cm = t.col_mean(x);
                let s = t.mul_row(x, cm);
                let s2 = t.add_row(s, cm);
                let rs = t.row_sum(s2);
                let n = t.row_norm(c);
                let m1 = t.sub(n, rs);
                let m2 = t.add(m1, c0);
                let m3 = t.scale(m2, 0.7);
                let sq = t.mul(m3, m3);
                t.mean(sq)
            },
            sample(),
        );
    }

    #[test]
    fn softmax_xent_matches_finite_differences() {
        numeric_check(|t, x| t.softmax_xent(x, &[1, 0, 1]), sample());
    }
}
