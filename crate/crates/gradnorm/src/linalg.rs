//! Dense row-major matrices and the handful of kernels the rest of the
//! crate is built on.
//!
//! Multiplication is a plain loop nest ordered for contiguous access; at the
//! sizes used here (at most a few hundred rows) that is fast enough, keeps
//! results independent of any BLAS, and makes every run bit-reproducible.
//! Accumulation order is fixed by the code, never by compiler flags.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Dense 2-D array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Build from explicit data. Panics if `data.len() != rows * cols` or a
    /// dimension is zero; shapes are a programmer contract here.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Entries drawn IID from a normal distribution. Draw order is row-major,
    /// so a seed pins the exact matrix. Rejects negative `std`.
    pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Self> {
        if std < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "standard deviation must be nonnegative, got {std}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| T::from_f64(rng.next_normal(mean, std)))
            .collect();
        Ok(Matrix::new(rows, cols, data))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Square root of the sum of squared entries, taken over the whole array.
    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Entrywise combination of two same-shaped matrices.
    pub fn zip_map<F: Fn(T, T) -> T>(&self, other: &Matrix<T>, f: F) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::new(self.rows, self.cols, data))
    }

    pub fn scale(&self, c: T) -> Matrix<T> {
        self.map(|x| x * c)
    }

    /// Elementwise difference. Rejects mismatched shapes.
    pub fn sub(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix::new(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Matrix::new(self.rows, self.cols, data))
    }

    /// `self += c * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix<T>, c: T) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add_scaled",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Add a length-`cols` vector to every row.
    pub fn add_row_vector(&mut self, v: &[T]) {
        assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, &b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Sum over rows, one value per column.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        out
    }
}

/// Named elementwise functions for [`map_elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseFn {
    Tanh,
    Relu,
    /// 1 where the input is strictly positive, 0 elsewhere.
    ReluDerivative,
}

/// Apply a named function entrywise.
pub fn map_elementwise<T: Scalar>(m: &Matrix<T>, f: ElementwiseFn) -> Matrix<T> {
    match f {
        ElementwiseFn::Tanh => m.map(|x| x.tanh()),
        ElementwiseFn::Relu => m.map(|x| if x > T::zero() { x } else { T::zero() }),
        ElementwiseFn::ReluDerivative => {
            m.map(|x| if x > T::zero() { T::one() } else { T::zero() })
        }
    }
}

/// Standard product `a * b`. Rejects `a.cols != b.rows`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate().take(k) {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
    Ok(Matrix::new(m, n, out))
}

/// Product with the second operand transposed: `a * b^T`.
pub fn matmul_transpose_b<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_transpose_b",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out.push(dot(arow, b.row(j), k));
        }
    }
    Ok(Matrix::new(m, n, out))
}

/// Product with the first operand transposed: `a^T * b`.
pub fn matmul_transpose_a<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_transpose_a",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (m, k, n) = (a.cols, a.rows, b.cols);
    let mut out = vec![T::zero(); m * n];
    for i in 0..k {
        let arow = a.row(i);
        let brow = b.row(i);
        for (kk, &aik) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
    Ok(Matrix::new(m, n, out))
}

/// Dot product with four independent accumulators. The grouping is fixed in
/// source, so results do not depend on vector width or compiler flags.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T], len: usize) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = len / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..len {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::new(rows, cols, v.to_vec())
    }

    #[test]
    fn matmul_identity() {
        let a = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let got = matmul(&Matrix::identity(2), &a).unwrap();
        assert_eq!(got, a);
    }

    #[test]
    fn matmul_zero() {
        let z = Matrix::<f64>::zeros(3, 2);
        let b = mat(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let got = matmul(&z, &b).unwrap();
        assert!(got.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_hand_computed() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let got = matmul(&a, &b).unwrap();
        assert_eq!(got.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = mat(2, 3, &[0.0; 6]);
        let b = mat(2, 2, &[0.0; 4]);
        assert!(matches!(
            matmul(&a, &b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_transposed_variants_agree_with_plain() {
        let mut rng = Rng::new(17);
        let a = Matrix::<f64>::gaussian(&mut rng, 5, 7, 0.0, 1.0).unwrap();
        let b = Matrix::<f64>::gaussian(&mut rng, 7, 3, 0.0, 1.0).unwrap();
        let plain = matmul(&a, &b).unwrap();
        let via_tb = matmul_transpose_b(&a, &b.transpose()).unwrap();
        let via_ta = matmul_transpose_a(&a.transpose(), &b).unwrap();
        for i in 0..plain.as_slice().len() {
            assert!((plain.as_slice()[i] - via_tb.as_slice()[i]).abs() < 1e-12);
            assert!((plain.as_slice()[i] - via_ta.as_slice()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_associative_within_tolerance() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let a = Matrix::<f64>::gaussian(&mut rng, 4, 6, 0.0, 1.0).unwrap();
            let b = Matrix::<f64>::gaussian(&mut rng, 6, 5, 0.0, 1.0).unwrap();
            let c = Matrix::<f64>::gaussian(&mut rng, 5, 3, 0.0, 1.0).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let diff = left.sub(&right).unwrap().l2_norm();
            assert!(diff / left.l2_norm() < 1e-10);
        }
    }

    #[test]
    fn l2_norm_zero_matrix() {
        assert_eq!(Matrix::<f64>::zeros(4, 3).l2_norm(), 0.0);
    }

    #[test]
    fn l2_norm_pythagorean() {
        let v = mat(1, 2, &[3.0, 4.0]);
        assert!((v.l2_norm() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_homogeneous() {
        let mut rng = Rng::new(23);
        let m = Matrix::<f64>::gaussian(&mut rng, 3, 3, 0.0, 2.0).unwrap();
        let scaled = m.scale(-2.5);
        assert!((scaled.l2_norm() - 2.5 * m.l2_norm()).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_positive_unless_zero() {
        let mut rng = Rng::new(31);
        let m = Matrix::<f64>::gaussian(&mut rng, 2, 2, 0.0, 1.0).unwrap();
        assert!(m.l2_norm() > 0.0);
    }

    #[test]
    fn gaussian_zero_std_is_constant() {
        let mut rng = Rng::new(1);
        let m = Matrix::<f64>::gaussian(&mut rng, 3, 4, 2.5, 0.0).unwrap();
        assert!(m.as_slice().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn gaussian_rejects_negative_std() {
        let mut rng = Rng::new(1);
        assert!(Matrix::<f64>::gaussian(&mut rng, 2, 2, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_same_seed_identical() {
        let a = Matrix::<f64>::gaussian(&mut Rng::new(99), 10, 10, 0.0, 3.5).unwrap();
        let b = Matrix::<f64>::gaussian(&mut Rng::new(99), 10, 10, 0.0, 3.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments_match_parameters() {
        let mut rng = Rng::new(2024);
        let m = Matrix::<f64>::gaussian(&mut rng, 1000, 1000, 0.0, 10.0).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1, "sample mean {mean}");
        assert!((var.sqrt() - 10.0).abs() < 0.1, "sample std {}", var.sqrt());
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let m = map_elementwise(&Matrix::<f64>::zeros(2, 2), ElementwiseFn::Tanh);
        assert!(m.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let m = mat(1, 3, &[-1.0, -0.5, -100.0]);
        let got = map_elementwise(&m, ElementwiseFn::Relu);
        assert!(got.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relu_derivative_is_indicator() {
        let m = mat(1, 4, &[-1.0, 0.0, 0.5, 2.0]);
        let got = map_elementwise(&m, ElementwiseFn::ReluDerivative);
        assert_eq!(got.as_slice(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn tanh_bounded_in_unit_interval() {
        // Strictly inside (-1, 1) before f64 tanh saturates, never outside
        // [-1, 1] even for extreme inputs.
        let mut rng = Rng::new(8);
        let moderate = Matrix::<f64>::gaussian(&mut rng, 20, 20, 0.0, 2.0).unwrap();
        let got = map_elementwise(&moderate, ElementwiseFn::Tanh);
        assert!(got.as_slice().iter().all(|&x| x > -1.0 && x < 1.0));

        let extreme = Matrix::<f64>::gaussian(&mut rng, 20, 20, 0.0, 50.0).unwrap();
        let got = map_elementwise(&extreme, ElementwiseFn::Tanh);
        assert!(got.as_slice().iter().all(|&x| (-1.0..=1.0).contains(&x)));
    }

    #[test]
    fn generic_over_f32() {
        let a = Matrix::<f32>::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::<f32>::identity(2);
        assert_eq!(matmul(&a, &b).unwrap(), a);
    }
}
