//! Dense row-major `f64` tensors.
//!
//! Kernels panic on shape mismatch with a `contract violation` message, the
//! same way slicing out of bounds panics. Callers that accept user data
//! validate shapes up front and return [`crate::Error`] instead.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "contract violation: shape {:?} needs {} values, got {}",
            shape,
            numel(&shape),
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// A `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    /// A `len × 1` column.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n, 1], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "contract violation: ragged rows");
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(
            numel(&shape),
            self.data.len(),
            "contract violation: cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        self.shape = shape;
        self
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.expect_2d("rows");
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.expect_2d("cols");
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "contract violation: item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    fn expect_2d(&self, what: &str) {
        assert_eq!(
            self.shape.len(),
            2,
            "contract violation: {what} needs a 2-D tensor, got {:?}",
            self.shape
        );
    }

    fn same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.shape, other.shape,
            "contract violation: {op} shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.same_shape(other, op);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|x| k * x)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        self.same_shape(other, "add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &Tensor) {
        self.same_shape(other, "axpy");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.same_shape(other, "dot");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|x| x.clamp(lo, hi))
    }

    /// Matrix product `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.expect_2d("matmul");
        other.expect_2d("matmul");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(
            k, k2,
            "contract violation: matmul inner extents differ {:?} vs {:?}",
            self.shape, other.shape
        );
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            &self.data,
            (k, 1),
            &other.data,
            (n, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `selfᵀ·other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        self.expect_2d("t_matmul");
        other.expect_2d("t_matmul");
        let (k, m) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(
            k, k2,
            "contract violation: t_matmul shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            &self.data,
            (1, m),
            &other.data,
            (n, 1),
            &mut out.data,
            0.0,
        );
        out
    }

    /// `self·otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        self.expect_2d("matmul_t");
        other.expect_2d("matmul_t");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (n, k2) = (other.shape[0], other.shape[1]);
        assert_eq!(
            k, k2,
            "contract violation: matmul_t shape mismatch {:?} vs {:?}",
            self.shape, other.shape
        );
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            &self.data,
            (k, 1),
            &other.data,
            (1, k),
            &mut out.data,
            0.0,
        );
        out
    }

    /// Adds a length-`n` bias to every row of a `[b×n]` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Tensor {
        let n = self.cols();
        assert_eq!(
            bias.len(),
            n,
            "contract violation: add_row bias {:?} vs matrix {:?}",
            bias.shape,
            self.shape
        );
        let mut out = self.clone();
        for row in out.data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        out
    }

    /// Multiplies row `i` of a `[b×m]` matrix by `col[i]` (`col` is `[b×1]`).
    pub fn mul_col(&self, col: &Tensor) -> Tensor {
        let (b, m) = (self.rows(), self.cols());
        assert_eq!(
            col.shape(),
            &[b, 1],
            "contract violation: mul_col column {:?} vs matrix {:?}",
            col.shape,
            self.shape
        );
        let mut out = self.clone();
        for (row, &c) in out.data.chunks_mut(m.max(1)).zip(&col.data) {
            for x in row {
                *x *= c;
            }
        }
        out
    }

    /// Column sums of a `[b×n]` matrix, as a `[n]` vector.
    pub fn sum_rows(&self) -> Tensor {
        let n = self.cols();
        let mut out = vec![0.0; n];
        for row in self.data.chunks(n.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Tensor::new(vec![n], out)
    }

    /// Row sums of a `[b×n]` matrix, as a `[b×1]` column.
    pub fn sum_cols(&self) -> Tensor {
        let (b, n) = (self.rows(), self.cols());
        let data = (0..b)
            .map(|i| self.data[i * n..(i + 1) * n].iter().sum())
            .collect();
        Tensor::new(vec![b, 1], data)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        assert!(
            !parts.is_empty(),
            "contract violation: concat_cols of nothing"
        );
        let b = parts[0].rows();
        for p in parts {
            assert_eq!(
                p.rows(),
                b,
                "contract violation: concat_cols row mismatch {:?} vs {:?}",
                parts[0].shape,
                p.shape
            );
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(b * total);
        for i in 0..b {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Tensor::matrix(b, total, data)
    }

    /// Columns `[start, start+width)` of a matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Tensor {
        let (b, n) = (self.rows(), self.cols());
        assert!(
            start + width <= n,
            "contract violation: slice_cols {start}+{width} of {:?}",
            self.shape
        );
        let mut data = Vec::with_capacity(b * width);
        for i in 0..b {
            data.extend_from_slice(&self.data[i * n + start..i * n + start + width]);
        }
        Tensor::matrix(b, width, data)
    }

    /// Rows selected by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let n = self.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), n, data)
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&self, times: usize) -> Tensor {
        let (b, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(b * times * n);
        for i in 0..b {
            for _ in 0..times {
                data.extend_from_slice(self.row(i));
            }
        }
        Tensor::matrix(b * times, n, data)
    }
}

/// `c = alpha_c * c + a·b` with arbitrary (row, col) strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_stride: (usize, usize),
    b: &[f64],
    b_stride: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: extents and strides describe in-bounds views of the slices,
    // checked by the callers' shape asserts; c does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_stride.0 as isize,
            a_stride.1 as isize,
            b.as_ptr(),
            b_stride.0 as isize,
            b_stride.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_identity_and_row_sums() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&eye), a);
        let col = Tensor::matrix(2, 1, vec![5.0, 7.0]);
        assert_eq!(eye.matmul(&col), col);
        let ones = Tensor::matrix(2, 1, vec![1.0, 1.0]);
        assert_eq!(a.matmul(&ones).data(), &[3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "[2, 3] vs [2, 3]")]
    fn matmul_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        a.matmul(&a);
    }

    #[test]
    #[should_panic(expected = "contract violation")]
    fn add_rejects_mismatch() {
        Tensor::zeros(&[2, 2]).add(&Tensor::zeros(&[2, 1]));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, 3.0, 1.5]);
        let b = Tensor::matrix(3, 4, (0..12).map(|x| x as f64 * 0.3 - 1.0).collect());
        let at = Tensor::matrix(2, 3, vec![1.0, 0.5, 3.0, -2.0, 4.0, 1.5]);
        assert_eq!(a.t_matmul(&b), at.matmul(&b));
        let bt = b.t_matmul(&Tensor::matrix(
            3,
            3,
            vec![1., 0., 0., 0., 1., 0., 0., 0., 1.],
        ));
        assert_eq!(at.matmul_t(&bt), at.matmul(&b));
    }

    #[test]
    fn broadcasts() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            x.add_row(&Tensor::new(vec![2], vec![10.0, 20.0])).data(),
            &[11.0, 22.0, 13.0, 24.0]
        );
        assert_eq!(
            x.mul_col(&Tensor::column(vec![2.0, -1.0])).data(),
            &[2.0, 4.0, -3.0, -4.0]
        );
        assert_eq!(x.sum_rows().data(), &[4.0, 6.0]);
        assert_eq!(x.sum_cols().data(), &[3.0, 7.0]);
    }

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a.get2(i, p) * b.get2(p, j)).sum();
            }
        }
        Tensor::matrix(m, n, out)
    }

    proptest! {
        #[test]
        fn matmul_matches_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in 0u64..1000) {
            let mut rng = crate::Rng::new(seed);
            let a = rng.normal_tensor(&[m, k]);
            let b = rng.normal_tensor(&[k, n]);
            let fast = a.matmul(&b);
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
