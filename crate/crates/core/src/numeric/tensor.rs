//! Dense row-major matrices and vectors plus the small set of kernels the
//! encoders and objectives are built from. Vectors are `n x 1` tensors.

use crate::error::{Error, Result};
use crate::numeric::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![F::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "storage length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Column vector from entries.
    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: F) {
        for x in &mut self.data {
            *x = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn convert<G: Real>(&self) -> Tensor<G> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }

    /// Exact bit-level equality, used by determinism checks.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }
}

fn shape_err<F: Real>(op: &str, a: &Tensor<F>, b: &Tensor<F>) -> Error {
    Error::Dimension(format!(
        "{op}: {}x{} vs {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

/// Matrix-vector product `M v`.
pub fn matvec<F: Real>(m: &Tensor<F>, v: &Tensor<F>) -> Result<Tensor<F>> {
    if !v.is_vector() || m.cols != v.rows {
        return Err(shape_err("matvec", m, v));
    }
    let x = v.as_slice();
    let mut out = vec![F::ZERO; m.rows];
    for (r, slot) in out.iter_mut().enumerate() {
        let mut acc = F::ZERO;
        for (&w, &xi) in m.row(r).iter().zip(x) {
            acc += w * xi;
        }
        *slot = acc;
    }
    Ok(Tensor::vector(out))
}

/// `M^T v`, without materializing the transpose. Used by backward passes.
pub fn matvec_transpose<F: Real>(m: &Tensor<F>, v: &Tensor<F>) -> Result<Tensor<F>> {
    if !v.is_vector() || m.rows != v.rows {
        return Err(shape_err("matvec_transpose", m, v));
    }
    let mut out = vec![F::ZERO; m.cols];
    for r in 0..m.rows {
        let w = v.as_slice()[r];
        let row = m.row(r);
        for (o, &x) in out.iter_mut().zip(row) {
            *o += w * x;
        }
    }
    Ok(Tensor::vector(out))
}

/// `M v + b`.
pub fn affine<F: Real>(m: &Tensor<F>, v: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if !b.is_vector() || b.rows != m.rows {
        return Err(shape_err("affine bias", m, b));
    }
    let mv = matvec(m, v)?;
    add(&mv, b)
}

pub fn add<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if !a.same_shape(b) {
        return Err(shape_err("add", a, b));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

pub fn sub<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if !a.same_shape(b) {
        return Err(shape_err("sub", a, b));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x - y)
        .collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

/// Elementwise product.
pub fn hadamard<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if !a.same_shape(b) {
        return Err(shape_err("hadamard", a, b));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

pub fn scale<F: Real>(a: &Tensor<F>, c: F) -> Tensor<F> {
    a.map(|v| v * c)
}

/// `a += c * b`, in place.
pub fn axpy<F: Real>(a: &mut Tensor<F>, c: F, b: &Tensor<F>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(shape_err("axpy", a, b));
    }
    for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += c * y;
    }
    Ok(())
}

pub fn dot<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<F> {
    if !a.same_shape(b) {
        return Err(shape_err("dot", a, b));
    }
    let mut acc = F::ZERO;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        acc += x * y;
    }
    Ok(acc)
}

pub fn sum_sq<F: Real>(a: &Tensor<F>) -> F {
    let mut acc = F::ZERO;
    for &x in a.as_slice() {
        acc += x * x;
    }
    acc
}

pub fn norm2<F: Real>(a: &Tensor<F>) -> F {
    sum_sq(a).sqrt()
}

pub fn l1_norm<F: Real>(a: &Tensor<F>) -> F {
    let mut acc = F::ZERO;
    for &x in a.as_slice() {
        acc += x.abs();
    }
    acc
}

/// The two activations used by the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

pub fn elementwise<F: Real>(f: Activation, v: &Tensor<F>) -> Tensor<F> {
    match f {
        Activation::Sigmoid => v.map(|x| x.sigmoid()),
        Activation::Tanh => v.map(|x| x.tanh()),
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<F: Real>(v: &Tensor<F>) -> Tensor<F> {
    debug_assert!(!v.is_empty());
    let mut max = v.as_slice()[0];
    for &x in v.as_slice() {
        max = max.max(x);
    }
    let exps: Vec<F> = v.as_slice().iter().map(|&x| (x - max).exp()).collect();
    let mut total = F::ZERO;
    for &e in &exps {
        total += e;
    }
    Tensor {
        rows: v.rows(),
        cols: v.cols(),
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Cosine similarity. Zero-norm inputs are an error rather than a silent 0:
/// a silent 0 would corrupt negative selection.
pub fn cosine<F: Real>(u: &Tensor<F>, v: &Tensor<F>) -> Result<F> {
    let nu = norm2(u);
    let nv = norm2(v);
    if nu == F::ZERO || nv == F::ZERO {
        return Err(Error::Degenerate(
            "cosine of a zero-norm vector".to_string(),
        ));
    }
    Ok(dot(u, v)? / (nu * nv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn affine_identity_matrix() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = affine(&m, &v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_zero_matrix_returns_bias() {
        let m = Tensor::zeros(2, 2);
        let out = affine(&m, &v(&[3.0, 4.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_hand_product() {
        let m = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = affine(&m, &v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[4.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let m = Tensor::zeros(2, 3);
        assert!(matches!(
            affine(&m, &v(&[1.0, 2.0]), &v(&[0.0, 0.0])),
            Err(Error::Dimension(_))
        ));
        let m = Tensor::zeros(2, 2);
        assert!(matches!(
            affine(&m, &v(&[1.0, 2.0]), &v(&[0.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matvec_transpose_agrees_with_explicit_transpose() {
        let m = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = v(&[10.0, 20.0]);
        let out = matvec_transpose(&m, &y).unwrap();
        assert_eq!(out.as_slice(), &[90.0, 120.0, 150.0]);
    }

    #[test]
    fn elementwise_examples() {
        let s = elementwise(Activation::Sigmoid, &v(&[0.0, 0.0]));
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let t = elementwise(Activation::Tanh, &v(&[0.0]));
        assert_eq!(t.as_slice(), &[0.0]);
        let sat = elementwise(Activation::Sigmoid, &v(&[40.0]));
        assert!((sat.as_slice()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&v(&[0.0, 0.0, 0.0]));
        for &x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance_hand_case() {
        for c in [-100.0, 0.0, 7.5] {
            let p = softmax(&v(&[c, c + (2.0f64).ln()]));
            assert!((p.as_slice()[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p.as_slice()[1] - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logits_stable() {
        let p = softmax(&v(&[1000.0, 0.0]));
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-12);
        assert!(p.as_slice()[1] < 1e-12);
        assert!(p.is_finite());
    }

    #[test]
    #[allow(clippy::approx_constant)] // 1/sqrt(2) derived by hand
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 2.0]), &v(&[2.0, 4.0])).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - 0.7071067).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn from_vec_rejects_bad_shape() {
        assert!(Tensor::from_vec(2, 2, vec![1.0f64; 3]).is_err());
    }
}
