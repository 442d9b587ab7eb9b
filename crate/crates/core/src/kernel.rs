//! Gaussian RBF kernel and Gram matrices.
//!
//! The kernel is `k(a, b) = exp(-||a - b||^2 / sigma^2)`. Squared distances are
//! computed exactly; no low-rank or truncated approximations are used.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Width of the Gaussian kernel, in input-space units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<T> {
    sigma: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::invalid("kernel width sigma must be positive and finite"));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }
}

/// An ordered set of `d`-dimensional input points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Real> PointSet<T> {
    /// Builds a point set from a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| Error::invalid("point set must be nonempty"))?;
        let mut coords = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            coords.extend_from_slice(row);
        }
        Self::from_flat(dim, coords)
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: &[T]) -> Self {
        Self { dim: 1, coords: xs.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self { dim: self.dim, coords }
    }
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Evaluates the Gaussian kernel between two points.
pub fn rbf_eval<T: Real>(a: &[T], b: &[T], params: &KernelParams<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(rbf_unchecked(a, b, params.sigma))
}

#[inline]
pub(crate) fn rbf_unchecked<T: Real>(a: &[T], b: &[T], sigma: T) -> T {
    (-sq_dist(a, b) / (sigma * sigma)).exp()
}

/// Gram matrix `K[i][j] = k(x_i, x_j)` over one point set.
pub fn gram_matrix<T: Real>(points: &PointSet<T>, params: &KernelParams<T>) -> Result<DMatrix<T>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("gram matrix of an empty point set"));
    }
    let sigma = params.sigma;
    let mut k = DMatrix::from_element(n, n, T::one());
    for i in 0..n {
        for j in 0..i {
            let v = rbf_unchecked(points.point(i), points.point(j), sigma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Rectangular kernel matrix `C[i][j] = k(q_i, x_j)` between queries and centers.
pub fn cross_kernel<T: Real>(
    queries: &PointSet<T>,
    centers: &PointSet<T>,
    params: &KernelParams<T>,
) -> Result<DMatrix<T>> {
    if queries.dim() != centers.dim() {
        return Err(Error::DimensionMismatch { expected: centers.dim(), found: queries.dim() });
    }
    let sigma = params.sigma;
    Ok(DMatrix::from_fn(queries.len(), centers.len(), |i, j| rbf_unchecked(queries.point(i), centers.point(j), sigma)))
}
