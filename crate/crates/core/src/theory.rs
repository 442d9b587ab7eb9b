//! Spectral diagnostics of the initial design `X0 = [K 1]`, the sufficient
//! condition for identifying outlier locations, and closed-form residuals
//! used to cross-check the solver.
//!
//! Everything here assumes the `CoefficientNorm` penalty, i.e. the initial
//! regularized problem `min ||y - X0 theta||^2 + lambda ||theta||^2`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::solver::select_index;

/// Singular structure of `X0` and the leverages it induces.
#[derive(Debug, Clone)]
pub struct SpectralDiagnostics<T> {
    pub lambda: T,
    /// Singular values of `X0`, in decreasing order.
    pub singular_values: DVector<T>,
    /// Left singular vectors, one column per singular value.
    pub q: DMatrix<T>,
    /// Right singular vectors, `(N + 1) x N`.
    pub v: DMatrix<T>,
    /// Diagonal of the unregularized hat matrix (pseudoinverse convention).
    pub hat_diag: DVector<T>,
    /// Diagonal of `X0 (X0'X0 + lambda I)^-1 X0'`.
    pub hat_diag_reg: DVector<T>,
    /// `s_i^2 / (s_i^2 + lambda)`.
    pub g_diag: DVector<T>,
    /// `lambda s_i / (s_i^2 + lambda)`.
    pub phi_diag: DVector<T>,
    /// Set when `X0` does not have full row rank numerically.
    pub rank_deficient: bool,
    /// Number of singular values above the rank tolerance.
    pub rank: usize,
}

impl<T: Real> SpectralDiagnostics<T> {
    pub fn n(&self) -> usize {
        self.singular_values.len()
    }

    pub fn sigma_max(&self) -> T {
        self.singular_values[0]
    }

    /// Regularized hat matrix `Q G Q'`.
    pub fn hat_reg(&self) -> DMatrix<T> {
        let mut qg = self.q.clone();
        for (mut col, &g) in qg.column_iter_mut().zip(self.g_diag.iter()) {
            col *= g;
        }
        qg * self.q.transpose()
    }

    /// Unregularized hat matrix: the projector onto the column space of `X0`.
    pub fn hat(&self) -> DMatrix<T> {
        let qr = self.q.columns(0, self.rank);
        qr * qr.transpose()
    }

    /// `Q Phi V' theta`, the part of the initial residual due to the true
    /// coefficients.
    pub fn coefficient_residual(&self, theta: &DVector<T>) -> Result<DVector<T>> {
        if theta.len() != self.v.nrows() {
            return Err(Error::DimensionMismatch { expected: self.v.nrows(), found: theta.len() });
        }
        let mut c = self.v.transpose() * theta;
        c.component_mul_assign(&self.phi_diag);
        Ok(&self.q * c)
    }

    /// Diagonal of `Q' M Q` for a matrix `M` on observation space.
    pub fn in_singular_basis(&self, m: &DMatrix<T>) -> DVector<T> {
        let p = self.q.transpose() * m * &self.q;
        p.diagonal()
    }
}

fn augmented<T: Real>(gram: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !gram.is_square() || gram.nrows() == 0 {
        return Err(Error::invalid(format!(
            "gram matrix must be square and nonempty, got {}x{}",
            gram.nrows(),
            gram.ncols()
        )));
    }
    let n = gram.nrows();
    Ok(gram.clone().insert_column(n, T::one()))
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive and finite"));
    }
    Ok(())
}

/// Computes the SVD of `X0 = [K 1]` and the leverage diagonals for `lambda`.
pub fn spectral_diagnostics<T: Real>(gram: &DMatrix<T>, lambda: T) -> Result<SpectralDiagnostics<T>> {
    check_lambda(lambda)?;
    let x0 = augmented(gram)?;
    let n = x0.nrows();
    let svd = SVD::new(x0, true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("singular value decomposition did not converge".into())),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let s = DVector::from_iterator(n, order.iter().map(|&i| svd.singular_values[i]));
    let q = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite singular value".into()));
    }

    let tol = s[0] * lit::<T>((n + 1) as f64) * T::default_epsilon();
    let rank = s.iter().filter(|&&v| v > tol).count();
    let g_diag = s.map(|v| v * v / (v * v + lambda));
    let phi_diag = s.map(|v| lambda * v / (v * v + lambda));
    let hat_diag = DVector::from_fn(n, |i, _| (0..rank).fold(T::zero(), |acc, j| acc + q[(i, j)] * q[(i, j)]));
    let hat_diag_reg =
        DVector::from_fn(n, |i, _| (0..n).fold(T::zero(), |acc, j| acc + q[(i, j)] * q[(i, j)] * g_diag[j]));
    Ok(SpectralDiagnostics {
        lambda,
        singular_values: s,
        q,
        v,
        hat_diag,
        hat_diag_reg,
        g_diag,
        phi_diag,
        rank_deficient: rank < n,
        rank,
    })
}

/// Outcome of the identification condition for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    /// Largest singular value of `X0`.
    pub sigma_max: T,
    /// `None` when `min_outlier <= sqrt(2 lambda) * theta_norm`.
    pub gamma: Option<T>,
    /// Penalties at or above this value leave `gamma` undefined.
    pub lambda_cap: T,
    /// Whether `sigma_max < gamma * sqrt(lambda)`.
    pub holds: bool,
    pub min_outlier: T,
    pub theta_norm: T,
    pub outlier_norm: T,
}

impl<T: Real> BoundReport<T> {
    /// Builds the report from the scalar ingredients alone.
    pub fn from_parts(sigma_max: T, lambda: T, min_outlier: T, theta_norm: T, outlier_norm: T) -> Self {
        let two = lit::<T>(2.0);
        let slack = (two * lambda).sqrt() * theta_norm;
        let num = min_outlier - slack;
        let gamma = if num > T::zero() {
            let den = two * outlier_norm - min_outlier + slack;
            Some((num / den).sqrt())
        } else {
            None
        };
        let holds = gamma.is_some_and(|g| sigma_max < g * lambda.sqrt());
        let lambda_cap = if theta_norm > T::zero() {
            let ratio = min_outlier / theta_norm;
            ratio * ratio / two
        } else {
            T::max_value().unwrap_or_else(|| lit(f64::MAX))
        };
        Self { sigma_max, gamma, lambda_cap, holds, min_outlier, theta_norm, outlier_norm }
    }
}

fn support_of<T: Real>(u: &DVector<T>) -> Vec<usize> {
    u.iter().enumerate().filter(|(_, &v)| v != T::zero()).map(|(i, _)| i).collect()
}

/// Evaluates the identification condition for true coefficients
/// `theta = (alpha; c)` and outlier vector `u`.
pub fn theorem_check<T: Real>(
    gram: &DMatrix<T>,
    theta: &DVector<T>,
    outliers: &DVector<T>,
    lambda: T,
) -> Result<BoundReport<T>> {
    check_lambda(lambda)?;
    let n = gram.nrows();
    if theta.len() != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, found: theta.len() });
    }
    if outliers.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: outliers.len() });
    }
    let support = support_of(outliers);
    if support.is_empty() {
        return Err(Error::invalid("outlier vector has empty support"));
    }
    let min_outlier =
        support.iter().map(|&i| outliers[i].abs()).fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(b));
    let sigma_max = spectral_diagnostics(gram, lambda)?.sigma_max();
    Ok(BoundReport::from_parts(sigma_max, lambda, min_outlier, theta.norm(), outliers.norm()))
}

/// Matrices behind the closed-form residual after `k` selections.
#[derive(Debug, Clone)]
pub struct OracleIntermediates<T> {
    /// `I + H S W^-1 S' - S W^-1 S'` with `H = Q G Q'`.
    pub p_matrix: DMatrix<T>,
    /// `I_k - S' H S`.
    pub w_matrix: DMatrix<T>,
    /// Outlier part of the residual.
    pub u_k: DVector<T>,
}

/// Closed-form residual of the solver after selecting `selected` (in order),
/// for data `y = K alpha + c 1 + u` with no inlier noise.
pub fn residual_oracle<T: Real>(
    gram: &DMatrix<T>,
    theta: &DVector<T>,
    outliers: &DVector<T>,
    lambda: T,
    selected: &[usize],
) -> Result<(DVector<T>, OracleIntermediates<T>)> {
    let n = gram.nrows();
    if theta.len() != n + 1 {
        return Err(Error::DimensionMismatch { expected: n + 1, found: theta.len() });
    }
    if outliers.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: outliers.len() });
    }
    let mut seen = vec![false; n];
    for &j in selected {
        if j >= n || seen[j] {
            return Err(Error::invalid(format!("selected index {j} is out of range or repeated")));
        }
        if outliers[j] == T::zero() {
            return Err(Error::invalid(format!("selected index {j} is outside the outlier support")));
        }
        seen[j] = true;
    }
    let diag = spectral_diagnostics(gram, lambda)?;
    let h = diag.hat_reg();
    let base = diag.coefficient_residual(theta)?;
    let k = selected.len();

    let mut rest = outliers.clone();
    for &j in selected {
        rest[j] = T::zero();
    }
    let w = DMatrix::from_fn(k, k, |a, b| {
        let e = if a == b { T::one() } else { T::zero() };
        e - h[(selected[a], selected[b])]
    });
    let w_inv = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let chol =
            w.clone().cholesky().ok_or_else(|| Error::Numerical("oracle matrix W is not positive definite".into()))?;
        chol.inverse()
    };

    let hu = &h * &rest;
    let mut u_k = rest.clone();
    for a in 0..k {
        let mut acc = T::zero();
        for b in 0..k {
            acc += w_inv[(a, b)] * hu[selected[b]];
        }
        u_k[selected[a]] += acc;
    }

    // P = I + (H - I) S W^-1 S'
    let mut p = DMatrix::identity(n, n);
    for a in 0..k {
        for b in 0..k {
            let wab = w_inv[(a, b)];
            let col = selected[b];
            for i in 0..n {
                let hi = h[(i, selected[a])] - if i == selected[a] { T::one() } else { T::zero() };
                p[(i, col)] += hi * wab;
            }
        }
    }

    let r = &u_k + &p * base - &h * &u_k;
    Ok((r, OracleIntermediates { p_matrix: p, w_matrix: w, u_k }))
}

/// Runs the first `steps` greedy selections using only closed-form residuals.
///
/// Returns the selected indices. Useful for checking which locations the
/// solver would pick without running it.
pub fn oracle_selections<T: Real>(
    gram: &DMatrix<T>,
    theta: &DVector<T>,
    outliers: &DVector<T>,
    lambda: T,
    steps: usize,
) -> Result<Vec<usize>> {
    let n = gram.nrows();
    let mut selected = Vec::with_capacity(steps);
    let mut mask = vec![false; n];
    for _ in 0..steps {
        let (r, _) = residual_oracle(gram, theta, outliers, lambda, &selected)?;
        let j = select_index(&r, &mask)?;
        if outliers.get(j).is_none_or(|v| *v == T::zero()) {
            break;
        }
        mask[j] = true;
        selected.push(j);
    }
    Ok(selected)
}
