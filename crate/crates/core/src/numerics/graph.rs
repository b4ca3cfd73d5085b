//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value; [`Graph::backward`]
//! walks the tape once in reverse. Parameters are pulled from a
//! [`ParamStore`] by name and only trainable ones take part in
//! differentiation, so frozen weights never receive gradients.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{add_bias_in_place, groupnorm_kernel, sigmoid, silu, Tensor};
use crate::scalar::Real;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Constant,
    Input,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    ScaleRows(Var, Vec<S>),
    Silu(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<S>, rstd: Vec<S> },
    Gather(Var, Vec<usize>),
    Sum(Var),
    SumSquares(Var),
    Reshape(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    params: BTreeMap<String, Tensor<S>>,
    inputs: HashMap<Var, Tensor<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor<S>> {
        self.inputs.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.inputs.is_empty()
    }
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is reported through [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Looks up a parameter; repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?;
        let v = self.push(p.tensor.clone(), Op::Param(name.to_string()), p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// Row-broadcast bias addition: `x[B×m] + b[m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let mut v = self.value(x).clone();
        add_bias_in_place(&mut v, self.value(b))?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(v, Op::AddBias(x, b), ng))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let v = self.value(a).map(|x| x * k);
        let ng = self.needs(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Vec<S>) -> Result<Var> {
        let src = self.value(a);
        if factors.len() != src.rows() {
            return Err(Error::ShapeError(format!("{} row factors for {} rows", factors.len(), src.rows())));
        }
        let c = src.cols();
        let mut v = src.clone();
        for (row, &f) in v.data_mut().chunks_mut(c).zip(&factors) {
            row.iter_mut().for_each(|x| *x *= f);
        }
        let ng = self.needs(a);
        Ok(self.push(v, Op::ScaleRows(a, factors), ng))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(silu);
        let ng = self.needs(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: S) -> Result<Var> {
        let (v, cache) = groupnorm_kernel(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            v,
            Op::GroupNorm { x, gamma, beta, groups, xhat: cache.xhat, rstd: cache.rstd },
            ng,
        ))
    }

    /// Selects rows of a table: `out[i] = table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = (t.rows(), t.cols());
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(Error::ShapeError(format!("gather indices out of range for {r} rows")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![idx.len(), c], data)?;
        let ng = self.needs(table);
        Ok(self.push(v, Op::Gather(table, idx), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).norm_sq());
        let ng = self.needs(a);
        self.push(v, Op::SumSquares(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoGraph(format!("node {} not on this tape", loss.0)));
        }
        if matches!(self.nodes[loss.0].op, Op::Constant | Op::Input | Op::Param(_)) {
            return Err(Error::NoGraph("loss is a leaf, nothing was recorded".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeError(format!(
                "backward needs a scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.needs(*a) {
                        let mut da = vec![S::zero(); m * k];
                        S::gemm(m, n, k, S::one(), g.data(), bv.data(), S::zero(), &mut da, false, true);
                        accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                    }
                    if self.needs(*b) {
                        let mut db = vec![S::zero(); k * n];
                        S::gemm(k, m, n, S::one(), av.data(), g.data(), S::zero(), &mut db, true, false);
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let m = g.cols();
                        let mut db = vec![S::zero(); m];
                        for row in g.data().chunks(m) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|v| v * k));
                }
                Op::ScaleRows(a, factors) => {
                    let c = g.cols();
                    let mut d = g;
                    for (row, &f) in d.data_mut().chunks_mut(c).zip(factors) {
                        row.iter_mut().for_each(|x| *x *= f);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Silu(a) => {
                    let d = g.zip_map(self.value(*a), |gy, x| {
                        let s = sigmoid(x);
                        gy * s * (S::one() + x * (S::one() - s))
                    })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::GroupNorm { x, gamma, beta, groups, xhat, rstd } => {
                    let gam = self.value(*gamma);
                    let c = g.cols();
                    let gs = c / groups;
                    if self.needs(*gamma) {
                        let mut dg = vec![S::zero(); c];
                        for (grow, xrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                dg[j] += grow[j] * xrow[j];
                            }
                        }
                        accumulate(&mut grads, *gamma, Tensor::new(gam.shape().to_vec(), dg)?);
                    }
                    if self.needs(*beta) {
                        let mut db = vec![S::zero(); c];
                        for grow in g.data().chunks(c) {
                            for j in 0..c {
                                db[j] += grow[j];
                            }
                        }
                        accumulate(&mut grads, *beta, Tensor::new(gam.shape().to_vec(), db)?);
                    }
                    if self.needs(*x) {
                        let n = S::from_usize(gs).unwrap();
                        let mut dx = vec![S::zero(); g.len()];
                        for (bi, grow) in g.data().chunks(c).enumerate() {
                            for gi in 0..*groups {
                                let lo = gi * gs;
                                let r = rstd[bi * groups + gi];
                                let mut sum_d = S::zero();
                                let mut sum_dx = S::zero();
                                for k in lo..lo + gs {
                                    let dxh = grow[k] * gam.data()[k];
                                    sum_d += dxh;
                                    sum_dx += dxh * xhat[bi * c + k];
                                }
                                for k in lo..lo + gs {
                                    let dxh = grow[k] * gam.data()[k];
                                    dx[bi * c + k] = r / n * (n * dxh - sum_d - xhat[bi * c + k] * sum_dx);
                                }
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                    }
                }
                Op::Gather(table, idx) => {
                    let tv = self.value(*table);
                    let c = tv.cols();
                    let mut d = Tensor::zeros(tv.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        let src = g.row(r);
                        for (dst, &s) in d.row_mut(i).iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                    debug_assert_eq!(d.cols(), c);
                    accumulate(&mut grads, *table, d);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(self.value(*a).shape(), gv));
                }
                Op::SumSquares(a) => {
                    let two = S::one() + S::one();
                    let gv = g.data()[0] * two;
                    accumulate(&mut grads, *a, self.value(*a).map(|x| x * gv));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
            }
        }

        let mut out = Gradients { params: BTreeMap::new(), inputs: HashMap::new() };
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &self.nodes[i].op {
                Op::Param(name) => {
                    out.params.insert(name.clone(), g);
                }
                Op::Input => {
                    out.inputs.insert(Var(i), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn accumulate<S: Real>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_differences, compare};
    use crate::numerics::rng::SeededRng;

    fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // loss = sum(x·W) => dL/dW[i][j] = sum over rows of x[r][i]
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_fn(&[2, 3], |i| i as f64), true).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let w = g.param(&store, "w").unwrap();
        let y = g.matmul(xv, w).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let dw = grads.param("w").unwrap();
        assert_eq!(dw.data(), &[-2.0, -2.0, -2.0, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::full(&[2, 2], 1.0f64), false).unwrap();
        store.insert("b", Tensor::full(&[2], 0.5), true).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2], 2.0));
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = g.linear(x, w, b).unwrap();
        let loss = g.sum_squares(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.param("w").is_none());
        assert!(grads.param("b").is_some());
    }

    #[test]
    fn backward_on_leaf_or_foreign_node_is_no_graph() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(1.0));
        assert!(matches!(g.backward(x), Err(Error::NoGraph(_))));
        let empty = Graph::<f64>::new();
        assert!(matches!(empty.backward(x), Err(Error::NoGraph(_))));
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(3.0f64), true).unwrap();
        let mut g = Graph::new();
        let a1 = g.param(&store, "a").unwrap();
        let a2 = g.param(&store, "a").unwrap();
        let p = g.mul(a1, a2).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("a").unwrap().data(), &[6.0]);
    }

    /// Every op against central differences, ten seeds each.
    #[test]
    fn every_op_matches_finite_differences() {
        type Build = fn(&mut Graph<f64>, Var, Var, Var) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("linear", |g, x, w, b| {
                let y = g.linear(x, w, b).unwrap();
                g.sum_squares(y)
            }),
            ("add_sub_mul", |g, x, w, _b| {
                let y = g.matmul(x, w).unwrap();
                let z = g.mul(y, y).unwrap();
                let s = g.sub(z, y).unwrap();
                let t = g.add(s, y).unwrap();
                let t = g.add(t, z).unwrap();
                g.sum(t)
            }),
            ("silu", |g, x, w, b| {
                let y = g.linear(x, w, b).unwrap();
                let y = g.silu(y);
                g.sum_squares(y)
            }),
            ("group_norm", |g, x, w, b| {
                let y = g.matmul(x, w).unwrap();
                let gamma = b;
                let beta = g.scale(b, -0.5);
                let n = g.group_norm(y, gamma, beta, 2, 1e-5).unwrap();
                let n2 = g.mul(n, n).unwrap();
                let n3 = g.mul(n2, y).unwrap();
                g.sum(n3)
            }),
            ("scale_rows_reshape_gather", |g, x, w, _b| {
                let y = g.matmul(x, w).unwrap();
                let y = g.scale_rows(y, vec![0.3, -1.7, 2.0]).unwrap();
                let y = g.reshape(y, &[3, 4]).unwrap();
                let r = g.gather_rows(y, vec![2, 0, 2]).unwrap();
                let r = g.silu(r);
                g.sum_squares(r)
            }),
        ];
        for (name, build) in cases {
            for seed in 0..10u64 {
                let mut rng = SeededRng::new(100 + seed);
                let x0 = randn(&mut rng, &[3, 5]);
                let w0 = randn(&mut rng, &[5, 4]);
                let b0 = randn(&mut rng, &[4]);
                let eval = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                    let mut g = Graph::new();
                    let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
                    let l = build(&mut g, xv, wv, bv);
                    let grads = g.backward(l).unwrap();
                    let val = g.value(l).data()[0];
                    (val, [(xv, x), (wv, w), (bv, b)].map(|(v, t)| grads.input(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))))
                };
                let (_, analytic) = eval(&x0, &w0, &b0);
                let inputs = [&x0, &w0, &b0];
                for (k, an) in analytic.iter().enumerate() {
                    let numeric = central_differences(inputs[k].data(), 1e-5, |p| {
                        let mut args = [x0.clone(), w0.clone(), b0.clone()];
                        args[k].data_mut().copy_from_slice(p);
                        eval(&args[0], &args[1], &args[2]).0
                    });
                    let report = compare(an.data(), &numeric, 1e-4);
                    assert!(report.passed(), "{name} seed {seed} arg {k}: {report:?}");
                }
            }
        }
    }
}
