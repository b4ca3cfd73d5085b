use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::scalar::{lit, Real};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub step: u64,
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> AdamState<S> {
    pub fn new(lr: S) -> Self {
        AdamState { step: 0, lr, beta1: lit(0.9), beta2: lit(0.999), eps: lit(1e-8), m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn with_betas(mut self, beta1: S, beta2: S) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: S) -> Self {
        self.eps = eps;
        self
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<S>> {
        self.m.get(name)
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        for (name, g) in grads.params() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter '{name}'")))?;
            if p.tensor.shape() != g.shape() {
                return Err(Error::ShapeError(format!(
                    "gradient {:?} for parameter '{name}' {:?}",
                    g.shape(),
                    p.tensor.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for (name, g) in grads.params() {
            let p = params.get_mut(name).expect("checked above");
            if !p.trainable {
                continue;
            }
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            adam_kernel(
                p.tensor.data_mut(),
                g.data(),
                m.data_mut(),
                v.data_mut(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

/// One Adam step over the store; see [`AdamState::update`].
pub fn adam_step<S: Real>(params: &mut ParamStore<S>, grads: &Gradients<S>, state: &mut AdamState<S>) -> Result<()> {
    state.update(params, grads)
}

#[allow(clippy::too_many_arguments)]
fn adam_kernel<S: Real>(p: &mut [S], g: &[S], m: &mut [S], v: &mut [S], lr: S, b1: S, b2: S, eps: S, bc1: S, bc2: S) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (S::one() - b1) * g[i];
        v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Adam over a small flat parameter vector.
#[derive(Clone, Debug)]
pub struct VecAdam<S> {
    pub lr: S,
    step: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Real> VecAdam<S> {
    pub fn new(len: usize, lr: S) -> Self {
        VecAdam { lr, step: 0, m: vec![S::zero(); len], v: vec![S::zero(); len] }
    }

    pub fn update(&mut self, p: &mut [S], g: &[S]) {
        self.step += 1;
        let (b1, b2) = (lit::<S>(0.9), lit::<S>(0.999));
        let t = self.step as i32;
        adam_kernel(p, g, &mut self.m, &mut self.v, self.lr, b1, b2, lit(1e-8), S::one() - b1.powi(t), S::one() - b2.powi(t));
    }
}
