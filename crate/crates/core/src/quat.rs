//! Batched quaternion algebra.
//!
//! A [`QuaternionBatch`] holds `n` embeddings of quaternion dimension `d`
//! as four aligned `n × d` component arrays (real part `a`, imaginary parts
//! `b`, `c`, `d`). Every kernel here works coordinate by coordinate: row `i`,
//! column `k` of the four arrays together form one quaternion.
//!
//! The batch type is generic over the float type; `f64` is the default and
//! what the model uses. `f32` batches are supported by the same kernels.

use ndarray::{Array1, Array2, ArrayView1};
use num_traits::Float;

use crate::error::{Error, Result};

/// One quaternion as `[a, b, c, d]`.
pub type Quat<F = f64> = [F; 4];

/// Hamilton product of two single quaternions.
#[inline(always)]
pub fn hamilton<F: Float>(x: Quat<F>, y: Quat<F>) -> Quat<F> {
    let [a1, b1, c1, d1] = x;
    let [a2, b2, c2, d2] = y;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

#[inline(always)]
pub fn conj<F: Float>(x: Quat<F>) -> Quat<F> {
    [x[0], -x[1], -x[2], -x[3]]
}

#[inline(always)]
pub fn dot<F: Float>(x: Quat<F>, y: Quat<F>) -> F {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2] + x[3] * y[3]
}

#[inline(always)]
pub fn norm<F: Float>(x: Quat<F>) -> F {
    dot(x, x).sqrt()
}

/// Unit quaternion in the direction of `x`; the zero quaternion maps to
/// the identity `(1, 0, 0, 0)`.
#[inline(always)]
pub fn unit<F: Float>(x: Quat<F>) -> Quat<F> {
    let n = norm(x);
    if n > F::zero() {
        [x[0] / n, x[1] / n, x[2] / n, x[3] / n]
    } else {
        [F::one(), F::zero(), F::zero(), F::zero()]
    }
}

/// `n` quaternion vectors of dimension `d`, stored structure-of-arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionBatch<F = f64> {
    pub a: Array2<F>,
    pub b: Array2<F>,
    pub c: Array2<F>,
    pub d: Array2<F>,
}

impl<F: Float> QuaternionBatch<F> {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            a: Array2::zeros((n, dim)),
            b: Array2::zeros((n, dim)),
            c: Array2::zeros((n, dim)),
            d: Array2::zeros((n, dim)),
        }
    }

    /// Batch of `n × dim` identity quaternions.
    pub fn identity(n: usize, dim: usize) -> Self {
        let mut q = Self::zeros(n, dim);
        q.a.fill(F::one());
        q
    }

    pub fn from_components(a: Array2<F>, b: Array2<F>, c: Array2<F>, d: Array2<F>) -> Result<Self> {
        for other in [&b, &c, &d] {
            check_shape(a.dim(), other.dim())?;
        }
        Ok(Self { a, b, c, d })
    }

    /// Builds a `1 × 1` batch holding the single quaternion `q`.
    pub fn single(q: Quat<F>) -> Self {
        let mut out = Self::zeros(1, 1);
        out.set(0, 0, q);
        out
    }

    /// Builds a batch from row-major nested quaternions: `rows[i][k]`.
    pub fn from_rows(rows: &[Vec<Quat<F>>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        let mut out = Self::zeros(n, dim);
        for (i, row) in rows.iter().enumerate() {
            check_shape((1, dim), (1, row.len()))?;
            for (k, q) in row.iter().enumerate() {
                out.set(i, k, *q);
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a.dim()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Quat<F> {
        [
            self.a[[row, col]],
            self.b[[row, col]],
            self.c[[row, col]],
            self.d[[row, col]],
        ]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, q: Quat<F>) {
        self.a[[row, col]] = q[0];
        self.b[[row, col]] = q[1];
        self.c[[row, col]] = q[2];
        self.d[[row, col]] = q[3];
    }

    pub fn components(&self) -> [&Array2<F>; 4] {
        [&self.a, &self.b, &self.c, &self.d]
    }

    pub fn components_mut(&mut self) -> [&mut Array2<F>; 4] {
        [&mut self.a, &mut self.b, &mut self.c, &mut self.d]
    }

    /// Gathers the given rows into a new batch.
    pub fn select_rows(&self, ids: &[usize]) -> Self {
        let axis = ndarray::Axis(0);
        Self {
            a: self.a.select(axis, ids),
            b: self.b.select(axis, ids),
            c: self.c.select(axis, ids),
            d: self.d.select(axis, ids),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components()
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    fn map_quat(&self, f: impl Fn(Quat<F>) -> Quat<F>) -> Self {
        let (n, dim) = self.shape();
        let mut out = Self::zeros(n, dim);
        for i in 0..n {
            for k in 0..dim {
                out.set(i, k, f(self.get(i, k)));
            }
        }
        out
    }

    fn zip_quat(&self, other: &Self, f: impl Fn(Quat<F>, Quat<F>) -> Quat<F>) -> Result<Self> {
        check_shape(self.shape(), other.shape())?;
        let (n, dim) = self.shape();
        let mut out = Self::zeros(n, dim);
        for i in 0..n {
            for k in 0..dim {
                out.set(i, k, f(self.get(i, k), other.get(i, k)));
            }
        }
        Ok(out)
    }
}

fn check_shape(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left, right })
    }
}

/// Coordinate-wise Hamilton product `x ⊗ y`.
pub fn hamilton_product<F: Float>(
    x: &QuaternionBatch<F>,
    y: &QuaternionBatch<F>,
) -> Result<QuaternionBatch<F>> {
    x.zip_quat(y, hamilton)
}

/// Row-wise inner product: for each row, the sum over coordinates of
/// `a₁a₂ + b₁b₂ + c₁c₂ + d₁d₂`.
pub fn inner_product<F: Float>(x: &QuaternionBatch<F>, y: &QuaternionBatch<F>) -> Result<Array1<F>> {
    check_shape(x.shape(), y.shape())?;
    let row_dot = |u: ArrayView1<F>, v: ArrayView1<F>| {
        u.iter().zip(v.iter()).fold(F::zero(), |acc, (&p, &q)| acc + p * q)
    };
    Ok(Array1::from_shape_fn(x.rows(), |i| {
        let mut s = F::zero();
        for (u, v) in x.components().iter().zip(y.components().iter()) {
            s = s + row_dot(u.row(i), v.row(i));
        }
        s
    }))
}

pub fn conjugate<F: Float>(x: &QuaternionBatch<F>) -> QuaternionBatch<F> {
    QuaternionBatch {
        a: x.a.clone(),
        b: x.b.mapv(|v| -v),
        c: x.c.mapv(|v| -v),
        d: x.d.mapv(|v| -v),
    }
}

/// Per-coordinate unit normalization. Zero quaternions become `(1, 0, 0, 0)`.
pub fn normalize<F: Float>(x: &QuaternionBatch<F>) -> QuaternionBatch<F> {
    x.map_quat(unit)
}

pub fn elementwise_sine<F: Float>(x: &QuaternionBatch<F>) -> QuaternionBatch<F> {
    QuaternionBatch {
        a: x.a.mapv(F::sin),
        b: x.b.mapv(F::sin),
        c: x.c.mapv(F::sin),
        d: x.d.mapv(F::sin),
    }
}

pub fn add<F: Float>(x: &QuaternionBatch<F>, y: &QuaternionBatch<F>) -> Result<QuaternionBatch<F>> {
    x.zip_quat(y, |p, q| [p[0] + q[0], p[1] + q[1], p[2] + q[2], p[3] + q[3]])
}

pub fn scale<F: Float>(x: &QuaternionBatch<F>, s: F) -> QuaternionBatch<F> {
    x.map_quat(|q| [q[0] * s, q[1] * s, q[2] * s, q[3] * s])
}
