//! Dense vector/matrix storage and the elementary differentiable operations
//! the models are built from. Generic over the scalar type; experiments
//! instantiate `f64` (see the crate-root aliases).

pub mod gradcheck;
pub mod ops;
pub mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, Index, IndexMut, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense vector with contiguous storage.
///
/// Binary operations check lengths and return an error on mismatch; there is
/// no implicit broadcast.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(len: usize, value: T) -> Self {
        Vector {
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Vector { data }
    }

    pub fn from_slice(data: &[T]) -> Self {
        Vector {
            data: data.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Vector<T> {
        Vector {
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_len(&self, other: &Vector<T>, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(op, self.len(), other.len()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Vector<T>) -> Result<Vector<T>> {
        self.check_len(other, "vector add")?;
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Vector<T>) -> Result<Vector<T>> {
        self.check_len(other, "vector sub")?;
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Vector<T>) -> Result<Vector<T>> {
        self.check_len(other, "vector mul")?;
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a * b)
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Vector<T> {
        self.map(|v| v * factor)
    }

    /// `self += alpha * other`, in place.
    pub fn axpy(&mut self, alpha: T, other: &Vector<T>) -> Result<()> {
        self.check_len(other, "vector axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector<T>) -> Result<T> {
        self.check_len(other, "vector dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        if self.is_empty() {
            return T::zero();
        }
        self.sum() / T::from_f64_c(self.len() as f64)
    }

    pub fn norm2(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn l1_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn finite_or_err(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Cosine similarity; zero when either vector has zero norm.
    pub fn cosine(&self, other: &Vector<T>) -> Result<T> {
        let denom = self.norm2() * other.norm2();
        if denom == T::zero() {
            return Ok(T::zero());
        }
        Ok(self.dot(other)? / denom)
    }
}

impl<T> Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix from_vec",
                rows * cols,
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::shape(
                    "matrix from_rows",
                    format!("row of {n_cols}"),
                    format!("row {i} of {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    /// Identity matrix, square.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vector(&self, r: usize) -> Vector<T> {
        Vector::from_slice(self.row(r))
    }

    pub fn set_row(&mut self, r: usize, v: &Vector<T>) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::shape("matrix set_row", self.cols, v.len()));
        }
        self.row_mut(r).copy_from_slice(v.as_slice());
        Ok(())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Matrix-vector product `A x`.
    pub fn matvec(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x.as_slice()) {
                acc += *a * *b;
            }
            out.push(acc);
        }
        Ok(Vector::from_vec(out))
    }

    /// Transposed product `A^T x`.
    pub fn matvec_t(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.rows {
            return Err(Error::shape("matvec_t", self.rows, x.len()));
        }
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += *a * xr;
            }
        }
        Ok(Vector::from_vec(out))
    }

    /// Rank-1 update `self += alpha * u v^T`.
    pub fn add_outer(&mut self, alpha: T, u: &Vector<T>, v: &Vector<T>) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::shape(
                "matrix add_outer",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", u.len(), v.len()),
            ));
        }
        for r in 0..self.rows {
            let ur = u[r] * alpha;
            for (a, b) in self.row_mut(r).iter_mut().zip(v.as_slice()) {
                *a += ur * *b;
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, alpha: T, other: &Matrix<T>) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "matrix add_scaled",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn finite_or_err(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_is_an_error_not_a_broadcast() {
        let a: Vector<f64> = Vector::zeros(3);
        let b: Vector<f64> = Vector::zeros(4);
        assert!(a.add(&b).is_err());
        assert!(a.dot(&b).is_err());
        let m: Matrix<f64> = Matrix::zeros(2, 3);
        assert!(m.matvec(&b).is_err());
    }

    #[test]
    fn matvec_matches_hand_summation() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let x = Vector::from_vec(vec![10.0, 100.0]);
        let y = m.matvec(&x).unwrap();
        assert_eq!(y.as_slice(), &[210.0, 430.0, 650.0]);
        let z = m.matvec_t(&Vector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(z.as_slice(), &[9.0, 12.0]);
    }

    #[test]
    fn outer_update() {
        let mut m: Matrix<f64> = Matrix::zeros(2, 2);
        m.add_outer(
            2.0,
            &Vector::from_vec(vec![1.0, 2.0]),
            &Vector::from_vec(vec![3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(m.row(0), &[6.0, 8.0]);
        assert_eq!(m.row(1), &[12.0, 16.0]);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let a: Vector<f64> = Vector::zeros(3);
        let b = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.cosine(&b).unwrap(), 0.0);
    }

    #[test]
    fn generic_over_f32_and_f64() {
        let a32 = Vector::<f32>::filled(4, 0.5);
        let a64 = Vector::<f64>::filled(4, 0.5);
        assert!((a32.norm2() - 1.0).abs() < 1e-6);
        assert!((a64.norm2() - 1.0).abs() < 1e-12);
    }
}
