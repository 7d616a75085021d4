//! Dense row-major tensors and the few numeric kernels the layers build on.
//!
//! Every reduction in this module runs in a fixed, ascending index order so
//! that equal inputs always produce bit-identical outputs.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type a model is built over. Implemented for `f32` (training) and
/// `f64` (gradient checks).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "Tensor::new",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Extents of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(
                op,
                format!("expected a rank-2 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    /// Extents of a rank-4 `N×C×H×W` tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::invalid(
                op,
                format!("expected a rank-4 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![T::zero(); r * c];
        transpose_into(&self.data, r, c, &mut out);
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }
}

/// `c[i][j] = Σ_p a[i][p]·b[p][j]`, accumulated in ascending `p`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `c += a·b` on raw row-major buffers (`a` is `m×k`, `b` is `k×n`).
///
/// The loop order is i-p-j: each `c[i][j]` still receives its products in
/// ascending `p`, so results equal the textbook triple loop bit for bit,
/// while the inner loop streams contiguous rows.
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for (a_row, c_row) in a.chunks_exact(k.max(1)).take(m).zip(c.chunks_exact_mut(n)) {
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ip * b_pj;
            }
        }
    }
}

pub(crate) fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// Row-wise argmax of an `n×c` tensor; ties go to the lowest index.
pub fn argmax_last<T: Real>(t: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, c) = t.dims2("argmax_last")?;
    if c == 0 {
        return Err(Error::invalid("argmax_last", "need at least one column"));
    }
    Ok(t.data
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_zero() {
        let b = Tensor::<f64>::from_f64([2, 2], &[3., 4., 5., 6.]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);

        let z = Tensor::<f64>::zeros([2, 3]);
        let any = Tensor::<f64>::from_f64([3, 4], &(0..12).map(f64::from).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(matmul(&z, &any).unwrap(), Tensor::zeros([2, 4]));
    }

    #[test]
    fn matmul_small_product() {
        let a = Tensor::<f64>::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 2], &[5., 6., 7., 8.]).unwrap();
        let expected = naive_matmul(a.data(), b.data(), 2, 2, 2);
        assert_eq!(expected, vec![19., 22., 43., 50.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &expected[..]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros([2, 3]);
        let b = Tensor::<f64>::zeros([2, 3]);
        match matmul(&a, &b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn argmax_examples() {
        let t = Tensor::<f64>::from_f64([1, 2], &[0.1, 0.9]).unwrap();
        assert_eq!(argmax_last(&t).unwrap(), vec![1]);
        let t = Tensor::<f64>::from_f64([1, 2], &[0.5, 0.5]).unwrap();
        assert_eq!(argmax_last(&t).unwrap(), vec![0]);
        let t = Tensor::<f64>::from_f64([2, 3], &[3., 1., 2., 0., 0., 5.]).unwrap();
        assert_eq!(argmax_last(&t).unwrap(), vec![0, 2]);
    }

    #[test]
    fn reshape_checks_count() {
        let t = Tensor::<f32>::zeros([2, 3]);
        assert!(t.clone().reshape([3, 2]).is_ok());
        assert!(t.reshape([4]).is_err());
    }

    fn small_matrix(max: usize) -> impl Strategy<Value = (usize, usize, Vec<i8>)> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), proptest::collection::vec(-3i8..=3, r * c))
        })
    }

    proptest! {
        #[test]
        fn matmul_equals_triple_loop((m, k, a) in small_matrix(6), n in 1usize..6, seed in any::<u64>()) {
            let a: Vec<f64> = a.iter().map(|&v| v as f64 * 0.37).collect();
            let mut rng = crate::rng::SeededRng::new(seed);
            let b: Vec<f64> = (0..k * n).map(|_| rng.uniform() - 0.5).collect();
            let ta = Tensor::new([m, k], a.clone()).unwrap();
            let tb = Tensor::new([k, n], b.clone()).unwrap();
            let got = matmul(&ta, &tb).unwrap();
            prop_assert_eq!(got.data(), &naive_matmul(&a, &b, m, k, n)[..]);
        }

        #[test]
        fn matmul_associative_on_small_integers(
            dims in proptest::collection::vec(1usize..=4, 4),
            vals in proptest::collection::vec(-3i8..=3, 48),
        ) {
            let (m, k, l, n) = (dims[0], dims[1], dims[2], dims[3]);
            let take = |off: usize, len: usize| -> Vec<f64> {
                (0..len).map(|i| vals[(off + i) % vals.len()] as f64).collect()
            };
            let a = Tensor::new([m, k], take(0, m * k)).unwrap();
            let b = Tensor::new([k, l], take(16, k * l)).unwrap();
            let c = Tensor::new([l, n], take(32, l * n)).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn transpose_twice_is_identity((r, c, v) in small_matrix(7)) {
            let t = Tensor::new([r, c], v.iter().map(|&x| x as f32).collect()).unwrap();
            prop_assert_eq!(t.transpose2().unwrap().transpose2().unwrap(), t);
        }
    }
}
