use nalgebra::{DMatrix, DVector};

use super::design::{initial_normal_matrix, DesignSystem};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Below this, `1 - ||d||^2` is treated as a lost pivot and the factor is rebuilt.
pub const EXTEND_PIVOT_FLOOR: f64 = 1e-12;

/// Lower-triangular Cholesky factor of the active normal matrix, grown one
/// row at a time as identity columns are activated.
///
/// Storage is over-allocated so an extension never moves the existing rows.
#[derive(Debug, Clone)]
pub struct IncrementalFactor<T> {
    buf: DMatrix<T>,
    order: usize,
}

impl<T: Real> IncrementalFactor<T> {
    /// Factors a symmetric positive-definite matrix.
    pub fn factor(m: &DMatrix<T>) -> Result<Self> {
        Self::factor_with_capacity(m, m.nrows())
    }

    pub fn factor_with_capacity(m: &DMatrix<T>, capacity: usize) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("cannot factor a non-square matrix"));
        }
        let n = m.nrows();
        let cap = capacity.max(n);
        let mut buf = DMatrix::zeros(cap, cap);
        for j in 0..n {
            let mut diag = m[(j, j)];
            for p in 0..j {
                diag -= buf[(j, p)] * buf[(j, p)];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: to_f64(diag) });
            }
            let ljj = diag.sqrt();
            buf[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for p in 0..j {
                    s -= buf[(i, p)] * buf[(j, p)];
                }
                buf[(i, j)] = s / ljj;
            }
        }
        Ok(Self { buf, order: n })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The factor `L` as an owned `order x order` matrix.
    pub fn lower(&self) -> DMatrix<T> {
        self.buf.view((0, 0), (self.order, self.order)).into_owned()
    }

    /// `L L'`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let l = self.lower();
        &l * l.transpose()
    }

    /// Solves `L q = b`.
    pub fn forward(&self, b: &DVector<T>) -> DVector<T> {
        assert_eq!(b.len(), self.order, "rhs length must match factor order");
        let mut q = b.clone();
        for i in 0..self.order {
            let mut s = q[i];
            for p in 0..i {
                s -= self.buf[(i, p)] * q[p];
            }
            q[i] = s / self.buf[(i, i)];
        }
        q
    }

    /// Solves `L' z = q`.
    pub fn backward(&self, q: &DVector<T>) -> DVector<T> {
        assert_eq!(q.len(), self.order, "rhs length must match factor order");
        let mut z = q.clone();
        for i in (0..self.order).rev() {
            let mut s = z[i];
            for p in (i + 1)..self.order {
                s -= self.buf[(p, i)] * z[p];
            }
            z[i] = s / self.buf[(i, i)];
        }
        z
    }

    /// Solves `L L' z = b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        self.backward(&self.forward(b))
    }

    /// Appends the row `[d' b]` for a new column `v` with unit diagonal entry.
    ///
    /// Returns `None`, leaving the factor untouched, when `1 - ||d||^2` falls
    /// below [`EXTEND_PIVOT_FLOOR`].
    pub(crate) fn try_append_unit(&mut self, v: &DVector<T>) -> Option<(DVector<T>, T)> {
        let d = self.forward(v);
        let b2 = T::one() - d.norm_squared();
        if !(b2 > lit(EXTEND_PIVOT_FLOOR)) {
            return None;
        }
        let b = b2.sqrt();
        let k = self.order;
        if k + 1 > self.buf.nrows() {
            let cap = (2 * self.buf.nrows()).max(k + 1);
            let mut grown = DMatrix::zeros(cap, cap);
            grown.view_mut((0, 0), (k, k)).copy_from(&self.buf.view((0, 0), (k, k)));
            self.buf = grown;
        }
        for p in 0..k {
            self.buf[(k, p)] = d[p];
        }
        self.buf[(k, k)] = b;
        self.order = k + 1;
        Some((d, b))
    }
}

/// Factors `M_0 = [K 1]'[K 1] + lambda B_0` and solves for the initial coefficients.
pub fn chol_init<T: Real>(
    system: &DesignSystem<T>,
    lambda: T,
    weights: Option<&DVector<T>>,
    y: &DVector<T>,
) -> Result<(IncrementalFactor<T>, DVector<T>)> {
    check_lambda(lambda)?;
    system.check_weights(weights)?;
    if y.len() != system.n() {
        return Err(Error::DimensionMismatch { expected: system.n(), found: y.len() });
    }
    if !system.outlier_support().is_empty() {
        return Err(Error::Logic("chol_init expects a design with no active identity columns".into()));
    }
    let m0 = initial_normal_matrix(system.gram(), lambda, &system.base_penalty(weights));
    let factor = IncrementalFactor::factor(&m0)?;
    let z = factor.solve(&system.normal_rhs(y));
    Ok((factor, z))
}

/// Row of `X_S'` for identity column `e_j`: `(K[j, :], 1, 0, ..., 0)`.
///
/// The trailing entries are zero because `j` is not yet active.
pub(crate) fn unit_column_cross<T: Real>(system: &DesignSystem<T>, j: usize) -> DVector<T> {
    let n = system.n();
    let mut v = DVector::zeros(system.order());
    let g = system.gram();
    for i in 0..n {
        v[i] = g[(j, i)];
    }
    v[n] = T::one();
    v
}

/// Activates identity column `j`, extends the factor in place and returns
/// the new solution over the enlarged active set.
///
/// The appended coordinate carries no penalty. If the new pivot is lost to
/// rounding, the normal matrix is refactored from scratch instead.
pub fn chol_extend<T: Real>(
    factor: &mut IncrementalFactor<T>,
    system: &mut DesignSystem<T>,
    j: usize,
    lambda: T,
    weights: Option<&DVector<T>>,
    y: &DVector<T>,
) -> Result<DVector<T>> {
    check_lambda(lambda)?;
    if factor.order() != system.order() {
        return Err(Error::Logic(format!(
            "factor order {} does not match active system order {}",
            factor.order(),
            system.order()
        )));
    }
    if j >= system.n() {
        return Err(Error::Logic(format!("outlier index {j} out of range for N = {}", system.n())));
    }
    if system.is_selected(j) {
        return Err(Error::Logic(format!("identity column {j} is already active")));
    }
    let v = unit_column_cross(system, j);
    system.add_outlier(j)?;
    if factor.try_append_unit(&v).is_none() {
        *factor = IncrementalFactor::factor(&system.normal_matrix(lambda, weights))?;
    }
    Ok(factor.solve(&system.normal_rhs(y)))
}

/// Solves the regularized normal equations of the active system from scratch.
pub fn regularized_ls_solve<T: Real>(
    system: &DesignSystem<T>,
    y: &DVector<T>,
    lambda: T,
    weights: Option<&DVector<T>>,
) -> Result<DVector<T>> {
    check_lambda(lambda)?;
    system.check_weights(weights)?;
    if y.len() != system.n() {
        return Err(Error::DimensionMismatch { expected: system.n(), found: y.len() });
    }
    let m = system.normal_matrix(lambda, weights);
    let factor = IncrementalFactor::factor(&m)?;
    Ok(factor.solve(&system.normal_rhs(y)))
}

pub(crate) fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::invalid("regularization lambda must be positive and finite"));
    }
    Ok(())
}
