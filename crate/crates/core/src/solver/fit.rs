use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::design::{initial_normal_matrix, DesignSystem, Regularizer};
use super::factor::{check_lambda, unit_column_cross, IncrementalFactor};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, gram_matrix, KernelParams, PointSet};
use crate::scalar::Real;

/// Norm compared against the stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopNorm {
    #[default]
    L2,
    /// Largest absolute residual coordinate.
    Linf,
}

impl StopNorm {
    pub fn eval<T: Real>(self, r: &DVector<T>) -> T {
        match self {
            StopNorm::L2 => r.norm(),
            StopNorm::Linf => r.amax(),
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct KgardConfig<T> {
    pub lambda: T,
    pub epsilon: T,
    pub regularizer: Regularizer,
    pub stop_norm: StopNorm,
    /// Per-coordinate multipliers over `(alpha, c)`; the effective penalty on
    /// coordinate `i` is `lambda * w_i^2`.
    pub tikhonov_weights: Option<DVector<T>>,
    /// Cap on outlier selections. `None` means `floor(N / 2)`.
    pub max_selections: Option<usize>,
}

impl<T: Real> KgardConfig<T> {
    pub fn new(lambda: T, epsilon: T) -> Self {
        Self {
            lambda,
            epsilon,
            regularizer: Regularizer::CoefficientNorm,
            stop_norm: StopNorm::L2,
            tikhonov_weights: None,
            max_selections: None,
        }
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Self {
        self.regularizer = regularizer;
        self
    }

    pub fn with_stop_norm(mut self, stop_norm: StopNorm) -> Self {
        self.stop_norm = stop_norm;
        self
    }

    pub fn with_weights(mut self, weights: DVector<T>) -> Self {
        self.tikhonov_weights = Some(weights);
        self
    }

    pub fn with_max_selections(mut self, cap: usize) -> Self {
        self.max_selections = Some(cap);
        self
    }

    /// Selection cap for a problem of size `n`.
    pub fn selection_cap(&self, n: usize) -> usize {
        self.max_selections.unwrap_or(n / 2)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.epsilon >= T::zero()) {
            return Err(Error::invalid("stopping threshold epsilon must be nonnegative"));
        }
        if let Some(cap) = self.max_selections {
            if cap == 0 || cap > n {
                return Err(Error::invalid(format!("max_selections must be in 1..={n}, got {cap}")));
            }
        }
        if let Some(w) = &self.tikhonov_weights {
            if w.len() != n + 1 {
                return Err(Error::DimensionMismatch { expected: n + 1, found: w.len() });
            }
            if w.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
                return Err(Error::invalid("tikhonov weights must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Supplies the stopping threshold from the current residual.
///
/// A constant threshold is the plain solver. Adaptive rules recompute it
/// after every solve; the loop then stops as soon as the stopping norm drops
/// to the larger of the threshold that triggered the last selection and the
/// freshly computed one.
pub trait StoppingThreshold<T> {
    fn threshold(&mut self, residual: &DVector<T>) -> T;
}

/// The constant threshold `epsilon`.
#[derive(Debug, Clone, Copy)]
pub struct FixedThreshold<T>(pub T);

impl<T: Copy> StoppingThreshold<T> for FixedThreshold<T> {
    fn threshold(&mut self, _residual: &DVector<T>) -> T {
        self.0
    }
}

impl<T, F: FnMut(&DVector<T>) -> T> StoppingThreshold<T> for F {
    fn threshold(&mut self, residual: &DVector<T>) -> T {
        self(residual)
    }
}

/// Result of a fit.
#[derive(Debug, Clone)]
pub struct KgardSolution<T> {
    pub alpha: DVector<T>,
    pub bias: T,
    /// `(index, value)` pairs of the outlier estimate, in selection order.
    pub outliers: Vec<(usize, T)>,
    /// Number of selections `k`.
    pub iterations: usize,
    /// Stopping norm of the residual after each step, starting at `k = 0`.
    pub residual_history: Vec<T>,
    /// Threshold in force when the residual of each step was tested.
    pub threshold_history: Vec<T>,
    /// Value of the step objective `J_k` at each step's minimizer.
    pub objective_history: Vec<T>,
    /// Final residual `y - K alpha - c 1 - u`.
    pub residual: DVector<T>,
    /// Set when the selection cap stopped the loop before the threshold was met.
    pub truncated: bool,
}

impl<T: Real> KgardSolution<T> {
    /// Indices selected as outliers, in selection order.
    pub fn selection_order(&self) -> Vec<usize> {
        self.outliers.iter().map(|&(j, _)| j).collect()
    }

    /// Sorted outlier support.
    pub fn support(&self) -> Vec<usize> {
        let mut s = self.selection_order();
        s.sort_unstable();
        s
    }

    /// Dense outlier vector of length `n`.
    pub fn outlier_vector(&self, n: usize) -> DVector<T> {
        let mut u = DVector::zeros(n);
        for &(j, v) in &self.outliers {
            u[j] = v;
        }
        u
    }

    /// `K alpha + c 1` on the training inputs.
    pub fn fitted(&self, gram: &DMatrix<T>) -> DVector<T> {
        let mut f = gram * &self.alpha;
        f.iter_mut().for_each(|v| *v += self.bias);
        f
    }

    /// Evaluates the estimate at `queries`.
    pub fn predict(&self, train: &PointSet<T>, queries: &PointSet<T>, params: &KernelParams<T>) -> Result<DVector<T>> {
        predict(self, train, queries, params)
    }
}

/// `f(q) = sum_j alpha_j k(q, x_j) + c` for each query point.
pub fn predict<T: Real>(
    solution: &KgardSolution<T>,
    train: &PointSet<T>,
    queries: &PointSet<T>,
    params: &KernelParams<T>,
) -> Result<DVector<T>> {
    if train.len() != solution.alpha.len() {
        return Err(Error::DimensionMismatch { expected: solution.alpha.len(), found: train.len() });
    }
    let c = cross_kernel(queries, train, params)?;
    let mut f = c * &solution.alpha;
    f.iter_mut().for_each(|v| *v += solution.bias);
    Ok(f)
}

/// Index of the largest `|r_j|` among coordinates not yet selected; ties go
/// to the smallest index.
pub fn select_index<T: Real>(residual: &DVector<T>, selected: &[bool]) -> Result<usize> {
    if residual.len() != selected.len() {
        return Err(Error::DimensionMismatch { expected: residual.len(), found: selected.len() });
    }
    let mut best: Option<(usize, T)> = None;
    for (j, (&r, &taken)) in residual.iter().zip(selected).enumerate() {
        if taken {
            continue;
        }
        let a = r.abs();
        match best {
            Some((_, b)) if !(a > b) => {}
            _ => best = Some((j, a)),
        }
    }
    best.map(|(j, _)| j).ok_or_else(|| Error::Logic("no inactive index left to select".into()))
}

/// Observations paired with their inputs.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub inputs: PointSet<T>,
    pub targets: DVector<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: PointSet<T>, targets: DVector<T>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), found: targets.len() });
        }
        if inputs.is_empty() {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// A solver bound to one Gram matrix and configuration.
///
/// The initial normal matrix does not depend on the observations, so its
/// factor is computed once here and reused by every [`Kgard::fit`] call.
#[derive(Debug, Clone)]
pub struct Kgard<T> {
    system: DesignSystem<T>,
    config: KgardConfig<T>,
    base: IncrementalFactor<T>,
}

impl<T: Real> Kgard<T> {
    pub fn new(gram: DMatrix<T>, config: KgardConfig<T>) -> Result<Self> {
        Self::with_shared_gram(Arc::new(gram), config)
    }

    pub fn with_shared_gram(gram: Arc<DMatrix<T>>, config: KgardConfig<T>) -> Result<Self> {
        let system = DesignSystem::new(gram, config.regularizer)?;
        let n = system.n();
        config.validate(n)?;
        let penalty = system.base_penalty(config.tikhonov_weights.as_ref());
        let m0 = initial_normal_matrix(system.gram(), config.lambda, &penalty);
        let cap = config.selection_cap(n);
        let base = IncrementalFactor::factor_with_capacity(&m0, n + 1 + cap)?;
        Ok(Self { system, config, base })
    }

    pub fn config(&self) -> &KgardConfig<T> {
        &self.config
    }

    pub fn gram(&self) -> &DMatrix<T> {
        self.system.gram()
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    /// Runs the greedy loop with the configured constant threshold.
    pub fn fit(&self, y: &DVector<T>) -> Result<KgardSolution<T>> {
        self.fit_with(y, &mut FixedThreshold(self.config.epsilon))
    }

    /// Runs the greedy loop with an arbitrary threshold rule.
    pub fn fit_with<R: StoppingThreshold<T> + ?Sized>(&self, y: &DVector<T>, rule: &mut R) -> Result<KgardSolution<T>> {
        let n = self.n();
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: y.len() });
        }
        let lambda = self.config.lambda;
        let weights = self.config.tikhonov_weights.as_ref();
        let norm = self.config.stop_norm;
        let cap = self.config.selection_cap(n);

        let mut system = DesignSystem::new(self.system.gram_arc().clone(), self.config.regularizer)?;
        let mut factor = self.base.clone();
        let mut q = factor.forward(&system.normal_rhs(y));
        let mut z = factor.backward(&q);
        let mut r = system.residual(&z, y);

        let mut level = rule.threshold(&r);
        let mut residual_history = vec![norm.eval(&r)];
        let mut threshold_history = vec![level];
        let mut objective_history = vec![system.objective(&z, y, lambda, weights)];
        let mut truncated = false;

        loop {
            let current = *residual_history.last().expect("history is nonempty");
            if current <= level {
                break;
            }
            if system.outlier_support().len() >= cap {
                truncated = true;
                break;
            }
            let j = select_index(&r, system.selection_mask())?;
            let v = unit_column_cross(&system, j);
            system.add_outlier(j)?;
            match factor.try_append_unit(&v) {
                Some((d, b)) => {
                    let next = (y[j] - d.dot(&q)) / b;
                    let k = q.len();
                    q = q.insert_row(k, next);
                }
                None => {
                    factor = IncrementalFactor::factor(&system.normal_matrix(lambda, weights))?;
                    q = factor.forward(&system.normal_rhs(y));
                }
            }
            z = factor.backward(&q);
            r = system.residual(&z, y);

            let fresh = rule.threshold(&r);
            let tested = if fresh > level { fresh } else { level };
            residual_history.push(norm.eval(&r));
            threshold_history.push(tested);
            objective_history.push(system.objective(&z, y, lambda, weights));
            if *residual_history.last().expect("history is nonempty") <= tested {
                break;
            }
            level = fresh;
        }

        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("solution contains non-finite values".into()));
        }
        let support = system.outlier_support();
        let outliers = support.iter().enumerate().map(|(c, &j)| (j, z[n + 1 + c])).collect();
        Ok(KgardSolution {
            alpha: z.rows(0, n).into_owned(),
            bias: z[n],
            outliers,
            iterations: support.len(),
            residual_history,
            threshold_history,
            objective_history,
            residual: r,
            truncated,
        })
    }
}

/// Builds the Gram matrix of `data` and fits it.
pub fn kgard_fit<T: Real>(
    data: &Dataset<T>,
    params: &KernelParams<T>,
    config: &KgardConfig<T>,
) -> Result<KgardSolution<T>> {
    let gram = gram_matrix(&data.inputs, params)?;
    Kgard::new(gram, config.clone())?.fit(&data.targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{build_design, regularized_ls_solve};

    fn grid(n: usize) -> PointSet<f64> {
        PointSet::from_scalars(&(0..n).map(|i| i as f64 / (n - 1) as f64).collect::<Vec<_>>())
    }

    #[test]
    fn selects_largest_magnitude() {
        let r = DVector::from_vec(vec![0.1, -5.0, 2.0]);
        assert_eq!(select_index(&r, &[false; 3]).unwrap(), 1);
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let r = DVector::from_vec(vec![3.0, -3.0]);
        assert_eq!(select_index(&r, &[false; 2]).unwrap(), 0);
    }

    #[test]
    fn selection_restricted_to_inactive() {
        let r = DVector::from_vec(vec![9.0, 1.0, -4.0, 2.0]);
        assert_eq!(select_index(&r, &[true, false, false, false]).unwrap(), 2);
        assert!(matches!(select_index(&r, &[true; 4]), Err(Error::Logic(_))));
    }

    #[test]
    fn exact_kernel_data_needs_no_selection() {
        let pts = grid(15);
        let params = KernelParams::new(0.2).unwrap();
        let g = gram_matrix(&pts, &params).unwrap();
        let alpha = DVector::from_fn(15, |i, _| ((i * 7) % 5) as f64 - 2.0);
        let y = &g * &alpha + DVector::from_element(15, 1.5);
        let sol = kgard_fit(&Dataset::new(pts, y).unwrap(), &params, &KgardConfig::new(0.1, 1e3)).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.outliers.is_empty());
        assert_eq!(sol.residual_history.len(), 1);
        assert!(!sol.truncated);
    }

    #[test]
    fn constant_estimate_predicts_constant() {
        let sol = KgardSolution {
            alpha: DVector::zeros(3),
            bias: 5.0,
            outliers: vec![],
            iterations: 0,
            residual_history: vec![0.0],
            threshold_history: vec![0.0],
            objective_history: vec![0.0],
            residual: DVector::zeros(3),
            truncated: false,
        };
        let train = grid(3);
        let q = PointSet::from_scalars(&[-1.0, 0.3, 7.0]);
        let f = sol.predict(&train, &q, &KernelParams::new(0.3).unwrap()).unwrap();
        assert!(f.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn prediction_on_training_points_matches_gram() {
        let pts = grid(12);
        let params = KernelParams::new(0.15).unwrap();
        let g = gram_matrix(&pts, &params).unwrap();
        let y = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin() * 4.0);
        let sol = Kgard::new(g.clone(), KgardConfig::new(0.3, 0.5)).unwrap().fit(&y).unwrap();
        let f = sol.predict(&pts, &pts, &params).unwrap();
        assert!((f - sol.fitted(&g)).amax() < 1e-12);
        let wrong_dim = PointSet::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(sol.predict(&pts, &wrong_dim, &params).is_err());
    }

    #[test]
    fn epsilon_zero_terminates_at_cap() {
        let pts = grid(10);
        let g = gram_matrix(&pts, &KernelParams::new(0.2).unwrap()).unwrap();
        let y = DVector::from_fn(10, |i, _| i as f64);
        let sol = Kgard::new(g, KgardConfig::new(0.5, 0.0)).unwrap().fit(&y).unwrap();
        assert_eq!(sol.iterations, 5);
        assert!(sol.truncated);
        assert_eq!(sol.residual_history.len(), sol.iterations + 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let g = gram_matrix(&grid(4), &KernelParams::new(0.2).unwrap()).unwrap();
        assert!(Kgard::new(g.clone(), KgardConfig::new(0.0, 1.0)).is_err());
        assert!(Kgard::new(g.clone(), KgardConfig::new(1.0, -1.0)).is_err());
        assert!(Kgard::new(g.clone(), KgardConfig::new(1.0, 1.0).with_max_selections(5)).is_err());
        assert!(Kgard::new(g.clone(), KgardConfig::new(1.0, 1.0).with_weights(DVector::from_element(4, 1.0))).is_err());
        let k = Kgard::new(g, KgardConfig::new(1.0, 1.0)).unwrap();
        assert!(k.fit(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn residual_vanishes_on_selected_coordinates() {
        let pts = grid(30);
        let g = gram_matrix(&pts, &KernelParams::new(0.1).unwrap()).unwrap();
        let mut y = DVector::from_fn(30, |i, _| (i as f64 * 0.3).cos() * 3.0);
        y[4] += 25.0;
        y[17] -= 30.0;
        for reg in [Regularizer::CoefficientNorm, Regularizer::RkhsNorm] {
            let sol = Kgard::new(g.clone(), KgardConfig::new(0.2, 1.0).with_regularizer(reg)).unwrap().fit(&y).unwrap();
            assert_eq!(&sol.support()[..2], &[4, 17][..]);
            for &(j, _) in &sol.outliers {
                assert!(sol.residual[j].abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn incremental_path_matches_scratch_solve() {
        let pts = grid(25);
        let g = gram_matrix(&pts, &KernelParams::new(0.12).unwrap()).unwrap();
        let mut y = DVector::from_fn(25, |i, _| (i as f64 * 0.5).sin());
        y[3] = 40.0;
        y[20] = -35.0;
        y[11] = 22.0;
        let w = DVector::from_fn(26, |i, _| if i < 3 { 5f64.sqrt() } else { 1.0 });
        let cfg = KgardConfig::new(0.15, 0.5).with_weights(w.clone()).with_max_selections(4);
        let sol = Kgard::new(g.clone(), cfg).unwrap().fit(&y).unwrap();
        let mut sys = build_design(g, Regularizer::CoefficientNorm).unwrap();
        for j in sol.selection_order() {
            sys.add_outlier(j).unwrap();
        }
        let z = regularized_ls_solve(&sys, &y, 0.15, Some(&w)).unwrap();
        assert!((z.rows(0, 25) - &sol.alpha).norm() / z.norm() < 1e-10);
        assert!((z[25] - sol.bias).abs() < 1e-9);
    }
}
