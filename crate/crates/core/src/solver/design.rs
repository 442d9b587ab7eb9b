use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which quadratic penalty the regularized least-squares step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// Penalizes the squared Euclidean norm of the kernel coefficients and bias.
    #[default]
    CoefficientNorm,
    /// Penalizes the RKHS norm `alpha' K alpha`; the bias is unpenalized.
    RkhsNorm,
}

/// Augmented design `X = [K 1 I_N]` with its penalty matrix and the set of
/// identity columns activated so far.
///
/// Columns are addressed 0-based: `0..N` are kernel columns, `N` is the bias
/// column and `N + 1 + j` is the identity column `e_j`. The identity block is
/// never materialized.
#[derive(Debug, Clone)]
pub struct DesignSystem<T> {
    gram: Arc<DMatrix<T>>,
    regularizer: Regularizer,
    outliers: Vec<usize>,
    selected: Vec<bool>,
}

/// Builds the design for a square Gram matrix.
pub fn build_design<T: Real>(gram: DMatrix<T>, regularizer: Regularizer) -> Result<DesignSystem<T>> {
    DesignSystem::new(Arc::new(gram), regularizer)
}

impl<T: Real> DesignSystem<T> {
    pub fn new(gram: Arc<DMatrix<T>>, regularizer: Regularizer) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::invalid(format!("gram matrix must be square, got {}x{}", gram.nrows(), gram.ncols())));
        }
        if gram.nrows() == 0 {
            return Err(Error::invalid("gram matrix must be nonempty"));
        }
        let n = gram.nrows();
        Ok(Self { gram, regularizer, outliers: Vec::new(), selected: vec![false; n] })
    }

    /// Number of observations `N`.
    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub(crate) fn gram_arc(&self) -> &Arc<DMatrix<T>> {
        &self.gram
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    /// Dimension of the current active system, `N + 1 + k`.
    pub fn order(&self) -> usize {
        self.n() + 1 + self.outliers.len()
    }

    /// Identity-column indices selected so far, in selection order.
    pub fn outlier_support(&self) -> &[usize] {
        &self.outliers
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.selected.get(j).copied().unwrap_or(false)
    }

    pub(crate) fn selection_mask(&self) -> &[bool] {
        &self.selected
    }

    /// Active column indices into the full `N x (2N + 1)` design.
    pub fn active_set(&self) -> Vec<usize> {
        let n = self.n();
        (0..=n).chain(self.outliers.iter().map(|&j| n + 1 + j)).collect()
    }

    /// Activates identity column `e_j`.
    pub fn add_outlier(&mut self, j: usize) -> Result<()> {
        if j >= self.n() {
            return Err(Error::Logic(format!("outlier index {j} out of range for N = {}", self.n())));
        }
        if self.selected[j] {
            return Err(Error::Logic(format!("identity column {j} is already active")));
        }
        self.selected[j] = true;
        self.outliers.push(j);
        Ok(())
    }

    /// Drops all activated identity columns.
    pub fn reset(&mut self) {
        self.outliers.clear();
        self.selected.iter_mut().for_each(|s| *s = false);
    }

    /// The full `N x (2N + 1)` design as a dense matrix.
    pub fn design_dense(&self) -> DMatrix<T> {
        let n = self.n();
        let mut x = DMatrix::zeros(n, 2 * n + 1);
        x.view_mut((0, 0), (n, n)).copy_from(&*self.gram);
        x.column_mut(n).fill(T::one());
        for i in 0..n {
            x[(i, n + 1 + i)] = T::one();
        }
        x
    }

    /// Columns of the design restricted to the active set.
    pub fn active_design(&self) -> DMatrix<T> {
        let n = self.n();
        let mut x = DMatrix::zeros(n, self.order());
        x.view_mut((0, 0), (n, n)).copy_from(&*self.gram);
        x.column_mut(n).fill(T::one());
        for (c, &j) in self.outliers.iter().enumerate() {
            x[(j, n + 1 + c)] = T::one();
        }
        x
    }

    /// Unweighted penalty over the full `(2N + 1)` coordinate vector.
    pub fn penalty_dense(&self) -> DMatrix<T> {
        let n = self.n();
        let mut b = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        b.view_mut((0, 0), (n + 1, n + 1)).copy_from(&self.base_penalty(None));
        b
    }

    /// Penalty block over `(alpha, c)`, optionally scaled as `W B W` with
    /// `W = diag(weights)`. Identity columns always carry zero penalty.
    pub fn base_penalty(&self, weights: Option<&DVector<T>>) -> DMatrix<T> {
        let n = self.n();
        let mut b = DMatrix::zeros(n + 1, n + 1);
        match self.regularizer {
            Regularizer::CoefficientNorm => b.fill_diagonal(T::one()),
            Regularizer::RkhsNorm => b.view_mut((0, 0), (n, n)).copy_from(&*self.gram),
        }
        if let Some(w) = weights {
            for i in 0..=n {
                for j in 0..=n {
                    b[(i, j)] *= w[i] * w[j];
                }
            }
        }
        b
    }

    /// `X z` for a coefficient vector over the full `2N + 1` columns.
    pub fn apply(&self, z: &DVector<T>) -> Result<DVector<T>> {
        let n = self.n();
        if z.len() != 2 * n + 1 {
            return Err(Error::DimensionMismatch { expected: 2 * n + 1, found: z.len() });
        }
        let alpha = z.rows(0, n);
        let mut out = &*self.gram * alpha;
        let c = z[n];
        for i in 0..n {
            out[i] += c + z[n + 1 + i];
        }
        Ok(out)
    }

    /// `y - X_active z` for a coefficient vector over the active columns.
    pub fn residual(&self, z: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let n = self.n();
        let mut r = y - &*self.gram * z.rows(0, n);
        let c = z[n];
        r.iter_mut().for_each(|v| *v -= c);
        for (c, &j) in self.outliers.iter().enumerate() {
            r[j] -= z[n + 1 + c];
        }
        r
    }

    /// Normal matrix `X_S' X_S + lambda B_S` of the active system, built from scratch.
    pub fn normal_matrix(&self, lambda: T, weights: Option<&DVector<T>>) -> DMatrix<T> {
        let n = self.n();
        let order = self.order();
        let mut m = DMatrix::zeros(order, order);
        let base = initial_normal_matrix(&self.gram, lambda, &self.base_penalty(weights));
        m.view_mut((0, 0), (n + 1, n + 1)).copy_from(&base);
        for (c, &j) in self.outliers.iter().enumerate() {
            let col = n + 1 + c;
            for i in 0..n {
                m[(i, col)] = self.gram[(j, i)];
                m[(col, i)] = self.gram[(j, i)];
            }
            m[(n, col)] = T::one();
            m[(col, n)] = T::one();
            m[(col, col)] = T::one();
        }
        m
    }

    /// Right-hand side `X_S' y` of the active system.
    pub fn normal_rhs(&self, y: &DVector<T>) -> DVector<T> {
        let n = self.n();
        let mut rhs = DVector::zeros(self.order());
        rhs.rows_mut(0, n).copy_from(&self.gram.tr_mul(y));
        rhs[n] = y.sum();
        for (c, &j) in self.outliers.iter().enumerate() {
            rhs[n + 1 + c] = y[j];
        }
        rhs
    }

    /// `J(z) = ||y - X_S z||^2 + lambda z' B_S z` over the active coordinates.
    pub fn objective(&self, z: &DVector<T>, y: &DVector<T>, lambda: T, weights: Option<&DVector<T>>) -> T {
        let n = self.n();
        let r = self.residual(z, y);
        let theta = z.rows(0, n + 1);
        let b = self.base_penalty(weights);
        r.norm_squared() + lambda * theta.dot(&(&b * theta))
    }

    pub(crate) fn check_weights(&self, weights: Option<&DVector<T>>) -> Result<()> {
        if let Some(w) = weights {
            if w.len() != self.n() + 1 {
                return Err(Error::DimensionMismatch { expected: self.n() + 1, found: w.len() });
            }
            if w.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                return Err(Error::invalid("tikhonov weights must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// `[K 1]' [K 1] + lambda P` for a penalty block `P` over `(alpha, c)`.
pub(crate) fn initial_normal_matrix<T: Real>(gram: &DMatrix<T>, lambda: T, penalty: &DMatrix<T>) -> DMatrix<T> {
    let n = gram.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    let ktk = gram.tr_mul(gram);
    m.view_mut((0, 0), (n, n)).copy_from(&ktk);
    for i in 0..n {
        let s = gram.column(i).sum();
        m[(i, n)] = s;
        m[(n, i)] = s;
    }
    m[(n, n)] = T::from_usize(n).expect("size fits scalar");
    m + penalty * lambda
}
