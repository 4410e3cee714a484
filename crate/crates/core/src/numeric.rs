//! Dense matrices, the scalar abstraction, a seeded counter-based generator
//! and a central-difference gradient oracle.
//!
//! Every reduction in this module walks its indices in ascending order
//! (row-major for whole-matrix sums, inner index ascending for products), so
//! results are bitwise reproducible for a given input.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{GrftError, Result};

/// Real scalar the numerical core is generic over.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 constant not representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GrftError::shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let m = Self { rows, cols, data };
        m.ensure_finite("matrix construction")?;
        Ok(m)
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::one())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from row vectors. An empty slice yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(GrftError::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix entry by entry from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the row-major buffer. Callers are responsible for
    /// keeping entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(GrftError::numeric(format!("non-finite entry produced by {what}")))
        }
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(GrftError::shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Matrix product `self * other`, inner index accumulated in ascending order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(GrftError::shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let out = Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = T::zero();
            for p in 0..self.cols {
                acc = acc + self.data[i * self.cols + p] * other.data[p * other.cols + j];
            }
            acc
        });
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_transpose_rhs(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(GrftError::shape(format!(
                "matmul_transpose_rhs: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let out = Self::from_fn(self.rows, other.rows, |i, j| {
            let mut acc = T::zero();
            for (a, b) in self.row(i).iter().zip(other.row(j)) {
                acc = acc + *a * *b;
            }
            acc
        });
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_transpose_lhs(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(GrftError::shape(format!(
                "matmul_transpose_lhs: ({}x{})ᵀ times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let out = Self::from_fn(self.cols, other.cols, |i, j| {
            let mut acc = T::zero();
            for p in 0..self.rows {
                acc = acc + self.data[p * self.cols + i] * other.data[p * other.cols + j];
            }
            acc
        });
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// Hadamard product.
    pub fn elementwise_mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "elementwise_mul")?;
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        let out = Self { rows: self.rows, cols: self.cols, data };
        out.ensure_finite("elementwise operation")?;
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Frobenius inner product `Σᵢⱼ aᵢⱼ bᵢⱼ`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        let mut acc = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            acc = acc + *a * *b;
        }
        Ok(acc)
    }

    /// `Σᵢⱼ aᵢⱼ²`.
    pub fn frobenius_sq(&self) -> T {
        let mut acc = T::zero();
        for v in &self.data {
            acc = acc + *v * *v;
        }
        acc
    }

    /// `Σᵢⱼ |aᵢⱼ|`.
    pub fn abs_sum(&self) -> T {
        let mut acc = T::zero();
        for v in &self.data {
            acc = acc + v.abs();
        }
        acc
    }

    /// Sum of all entries in row-major order.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for v in &self.data {
            acc = acc + *v;
        }
        acc
    }

    /// Selects the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Central-difference gradient of `f` at `at`:
/// `(f(x + h·eᵢⱼ) − f(x − h·eᵢⱼ)) / 2h` for every entry.
pub fn finite_diff_grad<T, F>(f: F, at: &Matrix<T>, h: T) -> Result<Matrix<T>>
where
    T: Scalar,
    F: Fn(&Matrix<T>) -> T,
{
    if !(h > T::zero()) {
        return Err(GrftError::config("finite-difference step must be positive"));
    }
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows, at.cols);
    let two_h = h + h;
    for idx in 0..at.data.len() {
        let orig = probe.data[idx];
        probe.data[idx] = orig + h;
        let plus = f(&probe);
        probe.data[idx] = orig - h;
        let minus = f(&probe);
        probe.data[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GrftError::numeric(format!(
                "objective not finite near entry ({}, {})",
                idx / at.cols.max(1),
                idx % at.cols.max(1)
            )));
        }
        grad.data[idx] = (plus - minus) / two_h;
    }
    Ok(grad)
}

/// Seeded generator with a documented, platform-independent stream.
///
/// The stream is ChaCha with 8 rounds, keyed by the seed's 8 little-endian
/// bytes followed by 24 zero bytes, on stream number `stream`. Draws:
///
/// * `next_u64`: the generator's native 64-bit output (two consecutive
///   32-bit words, low word first).
/// * `uniform`: `(next_u64 >> 11) · 2⁻⁵³`, in `[0, 1)`.
/// * `normal`: Box–Muller on two uniforms, `√(−2 ln(1−u₁)) · cos(2π u₂)`;
///   every call consumes exactly two `next_u64` draws.
/// * `below(n)`: `(next_u64 · n) >> 64` via 128-bit multiply.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent substream of the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle, walking from the last position down.
    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
