use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Column vectors (biases) are stored with `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn column(data: Vec<T>) -> Self {
        let rows = data.len();
        Self {
            rows,
            cols: 1,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Self { rows, cols, data }
    }

    /// Glorot-style uniform init with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(rows, cols, bound, rng)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `out = self · x`
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.rows];
        self.matvec_acc(x, &mut out)?;
        Ok(out)
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[T], out: &mut [T]) -> Result<()> {
        if x.len() != self.cols || out.len() != self.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by vector of length {} into {}",
                self.rows,
                self.cols,
                x.len(),
                out.len()
            )));
        }
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += dot(row, x);
        }
        Ok(())
    }

    /// `out += selfᵀ · g`
    pub fn matvec_t_acc(&self, g: &[T], out: &mut [T]) -> Result<()> {
        if g.len() != self.rows || out.len() != self.cols {
            return Err(Error::dim(format!(
                "cannot multiply transpose of {}x{} by vector of length {} into {}",
                self.rows,
                self.cols,
                g.len(),
                out.len()
            )));
        }
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += gr * w;
            }
        }
        Ok(())
    }

    /// `self += g ⊗ x`
    pub fn add_outer(&mut self, g: &[T], x: &[T]) -> Result<()> {
        if g.len() != self.rows || x.len() != self.cols {
            return Err(Error::dim(format!(
                "outer product {}x{} does not fit {}x{}",
                g.len(),
                x.len(),
                self.rows,
                self.cols
            )));
        }
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &xv) in row.iter_mut().zip(x) {
                *w += gr * xv;
            }
        }
        Ok(())
    }

    /// Adds `v` into row `r`.
    pub fn add_to_row(&mut self, r: usize, v: &[T]) {
        for (a, &b) in self.row_mut(r).iter_mut().zip(v) {
            *a += b;
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dim(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_values() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut out).unwrap();
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(m.matvec(&[1.0]), Err(Error::Dimension(_))));
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn outer_product_accumulates() {
        let mut m = Matrix::<f64>::zeros(2, 2);
        m.add_outer(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        m.add_outer(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.as_slice(), &[4.0, 5.0, 6.0, 8.0]);
    }
}
