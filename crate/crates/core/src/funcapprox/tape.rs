//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records one forward computation. Values are `Array2<f64>`
//! with rows as the batch dimension. Binary elementwise ops accept a right
//! operand that broadcasts along rows (`1 x c`), columns (`n x 1`) or both.

use std::collections::HashMap;

use ndarray::{Array2, Axis, Zip};

use super::params::{BlockId, Gradients, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { store: u64, block: BlockId },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Square(usize),
    SumRows(usize),
    SumAll(usize),
    MeanAll(usize),
    LogSoftmax(usize),
    ConcatCols(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// The recorded operation graph of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`], keyed by store.
#[derive(Debug, Default)]
pub struct TapeGrads {
    per_param: HashMap<(u64, usize), Array2<f64>>,
}

impl TapeGrads {
    /// Gradients for every block of `store`; blocks not reached by the
    /// loss get exact zeros.
    pub fn for_store(&self, store: &ParamStore) -> Gradients {
        let mut g = Gradients::zeros_like(store);
        for id in store.ids() {
            if let Some(d) = self.per_param.get(&(store.uid(), id.index())) {
                g.get_mut(id).assign(d);
            }
        }
        g
    }
}

fn reduce_to(grad: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad.clone();
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcastable(a: (usize, usize), b: (usize, usize)) -> bool {
    (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1)
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf bound to a parameter block; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, block: BlockId) -> Var {
        self.push(store.value(block).clone(), Op::Param { store: store.uid(), block })
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::config(format!(
                "matmul shape mismatch: {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if broadcastable(da, db) {
            Ok(())
        } else {
            Err(Error::config(format!("{what}: cannot broadcast {db:?} onto {da:?}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a.0, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::AddScalar(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a.0))
    }

    /// Sums each row: `n x c -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), s), Op::MeanAll(a.0))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(out, Op::LogSoftmax(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(p) => self.value(*p).nrows(),
            None => return Err(Error::config("concat of zero parts")),
        };
        if parts.iter().any(|p| self.value(*p).nrows() != rows) {
            return Err(Error::config("concat_cols: row counts differ"));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::config(format!("concat_cols: {e}")))?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Reverse pass from a scalar (`1 x 1`) loss. Each node on the tape is
    /// visited once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dim()
            )));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = TapeGrads::default();

        fn acc(adj: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
            match &mut adj[i] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param { store, block } => {
                    out.per_param
                        .entry((*store, block.index()))
                        .and_modify(|a| *a += &g)
                        .or_insert(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    let gb = reduce_to(&g, self.nodes[*b].value.dim());
                    acc(&mut adj, *b, gb);
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    let gb = -reduce_to(&g, self.nodes[*b].value.dim());
                    acc(&mut adj, *b, gb);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let gb = reduce_to(&(&g * va), vb.dim());
                    let ga = &g * vb;
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&self.nodes[*a].value)
                        .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                    acc(&mut adj, *a, ga);
                }
                Op::Exp(a) => acc(&mut adj, *a, g * &node.value),
                Op::Square(a) => acc(&mut adj, *a, g * &self.nodes[*a].value * 2.0),
                Op::SumRows(a) => {
                    let shape = self.nodes[*a].value.raw_dim();
                    let ga = g.broadcast(shape).expect("column broadcast").to_owned();
                    acc(&mut adj, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.nodes[*a].value.raw_dim(), g[[0, 0]]);
                    acc(&mut adj, *a, ga);
                }
                Op::MeanAll(a) => {
                    let va = &self.nodes[*a].value;
                    let ga = Array2::from_elem(va.raw_dim(), g[[0, 0]] / va.len().max(1) as f64);
                    acc(&mut adj, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    // d/dx = g - softmax(x) * rowsum(g); softmax = exp(y).
                    let row_sums = g.sum_axis(Axis(1));
                    let mut ga = g;
                    for ((mut row, y), s) in
                        ga.rows_mut().into_iter().zip(node.value.rows()).zip(row_sums.iter())
                    {
                        Zip::from(&mut row).and(&y).for_each(|d, &yv| *d -= yv.exp() * s);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.ncols();
                        let ga = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        acc(&mut adj, *p, ga);
                        start += w;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = log_softmax_rows(x);
    out.mapv_inplace(f64::exp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_gradient() {
        let mut s = ParamStore::new();
        let w = s.add("w", array![[3.0]]).unwrap();
        let mut t = Tape::new();
        let x = t.param(&s, w);
        let y = t.square(x);
        let g = t.backward(y).unwrap().for_store(&s);
        assert_eq!(g.get(w)[[0, 0]], 6.0);
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let mut s = ParamStore::new();
        let w = s.add("w", array![[1.0, -2.0, 0.5]]).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&s, w);
        let target = t.constant(array![[1.0, -2.0, 0.5]]);
        let d = t.sub(wv, target).unwrap();
        let sq = t.square(d);
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap().for_store(&s);
        assert!(g.get(w).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unreachable_params_get_exact_zero() {
        let mut s = ParamStore::new();
        let used = s.add("used", array![[2.0]]).unwrap();
        let unused = s.add("unused", array![[5.0, 6.0]]).unwrap();
        let mut t = Tape::new();
        let a = t.param(&s, used);
        let _b = t.param(&s, unused);
        let l = t.square(a);
        let g = t.backward(l).unwrap().for_store(&s);
        assert_eq!(g.get(used)[[0, 0]], 4.0);
        assert!(g.get(unused).iter().all(|&x| x == 0.0 && x.is_sign_positive()));
    }

    #[test]
    fn non_scalar_loss_is_contract_violation() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0]]);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut s = ParamStore::new();
        let b = s.add("b", array![[0.0, 0.0]]).unwrap();
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let bv = t.param(&s, b);
        let y = t.add(x, bv).unwrap();
        let l = t.sum_all(y);
        let g = t.backward(l).unwrap().for_store(&s);
        assert_eq!(g.get(b), &array![[3.0, 3.0]]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
