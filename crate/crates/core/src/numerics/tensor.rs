use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeError(format!("dimensions must be positive, got {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::ShapeError(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> S) -> Self {
        Tensor { shape: shape.to_vec(), data: (0..numel(shape)).map(f).collect() }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// Builds a `rows × cols` matrix from row slices of equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeError("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeError(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeError(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64_lossy(x.to_f64_lossy())).collect(),
        }
    }

    /// `self(m×k) · other(k×n)`; both operands viewed as matrices over
    /// their leading dimension.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeError(format!("matmul {:?} · {:?}", self.shape, other.shape)));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), &self.data, &other.data, S::zero(), &mut out, false, false);
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeError(format!("transpose of {:?}", self.shape)));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }
}

/// `y = x·W + b` for `x: B×n`, `W: n×m`, `b: m`.
pub fn linear_forward<S: Real>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mut y = x.matmul(w)?;
    add_bias_in_place(&mut y, b)?;
    Ok(y)
}

pub(crate) fn add_bias_in_place<S: Real>(y: &mut Tensor<S>, b: &Tensor<S>) -> Result<()> {
    let m = y.cols();
    if b.len() != m {
        return Err(Error::ShapeError(format!("bias of {} for width {m}", b.len())));
    }
    for row in y.data.chunks_mut(m) {
        for (v, &bb) in row.iter_mut().zip(&b.data) {
            *v += bb;
        }
    }
    Ok(())
}

/// Per-sample group statistics retained for the backward pass.
pub(crate) struct GroupNormCache<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

pub(crate) fn groupnorm_kernel<S: Real>(
    x: &Tensor<S>,
    groups: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<(Tensor<S>, GroupNormCache<S>)> {
    let c = x.cols();
    if groups == 0 || c % groups != 0 {
        return Err(Error::ShapeError(format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeError(format!("affine parameters must have {c} entries")));
    }
    let g = c / groups;
    let inv_g = S::one() / S::from_usize(g).unwrap();
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.rows() * groups);
    let mut y = vec![S::zero(); x.len()];
    for (bi, row) in x.data.chunks(c).enumerate() {
        for gi in 0..groups {
            let lo = gi * g;
            let seg = &row[lo..lo + g];
            let mean = seg.iter().copied().sum::<S>() * inv_g;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_g;
            let r = S::one() / (var + eps).sqrt();
            rstd.push(r);
            for (k, &v) in seg.iter().enumerate() {
                let idx = bi * c + lo + k;
                let xh = (v - mean) * r;
                xhat[idx] = xh;
                y[idx] = gamma.data[lo + k] * xh + beta.data[lo + k];
            }
        }
    }
    Ok((Tensor { shape: x.shape.clone(), data: y }, GroupNormCache { xhat, rstd }))
}

/// Group normalization over the channel axis of a `B×C` tensor.
pub fn groupnorm_forward<S: Real>(
    x: &Tensor<S>,
    groups: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    groupnorm_kernel(x, groups, gamma, beta, eps).map(|(y, _)| y)
}

#[inline]
pub(crate) fn sigmoid<S: Real>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<S: Real>(x: S) -> S {
    x * sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;

    fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn rejects_mismatched_data_length() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![1.0f64; 3]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn linear_with_identity_weight_is_identity() {
        let mut rng = SeededRng::new(1);
        let x = randn(&mut rng, &[4, 3]);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn linear_of_zero_input_broadcasts_bias() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        let w = Tensor::from_fn(&[2, 4], |i| i as f64);
        let b = Tensor::new(vec![4], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let y = linear_forward(&x, &w, &b).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), b.data());
        }
    }

    #[test]
    fn linear_matches_naive_triple_loop() {
        let mut rng = SeededRng::new(7);
        let x = randn(&mut rng, &[2, 3]);
        let w = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[4]);
        let y = linear_forward(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = b.data()[j];
                for k in 0..3 {
                    acc += x.data()[i * 3 + k] * w.data()[k * 4 + j];
                }
                assert!((y.data()[i * 4 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 4]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(linear_forward(&x, &w, &b), Err(Error::ShapeError(_))));
        let w = Tensor::zeros(&[3, 4]);
        let b = Tensor::zeros(&[5]);
        assert!(matches!(linear_forward(&x, &w, &b), Err(Error::ShapeError(_))));
    }

    #[test]
    fn groupnorm_constant_input_collapses_to_beta() {
        let x = Tensor::full(&[2, 8], 3.25f64);
        let gamma = Tensor::full(&[8], 1.0);
        let beta = Tensor::zeros(&[8]);
        let y = groupnorm_forward(&x, 2, &gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn groupnorm_zero_gamma_outputs_beta() {
        let mut rng = SeededRng::new(3);
        let x = randn(&mut rng, &[3, 8]);
        let gamma = Tensor::zeros(&[8]);
        let beta = randn(&mut rng, &[8]);
        let y = groupnorm_forward(&x, 4, &gamma, &beta, 1e-5).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), beta.data());
        }
    }

    #[test]
    fn groupnorm_standardizes_each_group() {
        let mut rng = SeededRng::new(11);
        let x = randn(&mut rng, &[3, 8]);
        let gamma = Tensor::full(&[8], 1.0);
        let beta = Tensor::zeros(&[8]);
        let y = groupnorm_forward(&x, 2, &gamma, &beta, 0.0).unwrap();
        for r in 0..3 {
            for g in y.row(r).chunks(4) {
                let mean = g.iter().sum::<f64>() / 4.0;
                let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn groupnorm_indivisible_channels_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 6]);
        let p = Tensor::zeros(&[6]);
        assert!(matches!(groupnorm_forward(&x, 4, &p, &p, 1e-5), Err(Error::ShapeError(_))));
    }
}
