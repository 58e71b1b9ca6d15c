//! Row-major dense matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Build from a row-major buffer, checking shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim("DenseMatrix::from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    /// Matrix with entries drawn uniformly from `[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: T, hi: T, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// `A · x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec shape");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ · x` for a vector `x` of length `rows`.
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "matvec_t shape");
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o = *o + xr * a;
            }
        }
        out
    }

    /// `A · B`, accumulating row-by-row (ikj order).
    pub fn matmul(&self, other: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Shape and finiteness check for matrices that bypassed the
    /// constructors (e.g. deserialized from a checkpoint).
    pub fn validate(&self, context: &str) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dim(context, self.rows * self.cols, self.data.len()));
        }
        if !self.all_finite() {
            return Err(Error::Numeric(format!("non-finite entry in {context}")));
        }
        Ok(())
    }

    /// Mean of all rows as a vector of length `cols`.
    pub fn mean_row(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        if self.rows == 0 {
            return mean;
        }
        for r in 0..self.rows {
            for (m, &v) in mean.iter_mut().zip(self.row(r)) {
                *m = *m + v;
            }
        }
        let n = crate::scalar::lit::<T>(self.rows as f64);
        for m in &mut mean {
            *m = *m / n;
        }
        mean
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        // independent triple-loop oracle, ijk order
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DenseMatrix::random_uniform(7, 5, -2.0, 2.0, &mut rng);
            let b = DenseMatrix::random_uniform(5, 3, -2.0, 2.0, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(&a, &b);
            for (x, y) in got.data().iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn matvec_t_is_transpose_matvec() {
        let mut rng = Rng::seed_from_u64(12);
        let a = DenseMatrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let got = a.matvec_t(&x);
        for c in 0..4 {
            let want: f64 = (0..6).map(|r| a.get(r, c) * x[r]).sum();
            assert!((got[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_bad_shape_and_nan() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn mean_row_of_constant_rows() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.mean_row(), vec![2.0, 3.0]);
    }
}
