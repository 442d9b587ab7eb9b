//! Monte-Carlo harness for the regression benchmarks.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, gram_matrix, KernelParams};
use crate::noise::{
    corrupt_with, make_lattice_dataset, make_pure_outlier_instance, make_sinc_dataset, seeded_rng, Benchmark,
    InlierNoise, NoiseSpec, SeededRng, PURE_OUTLIER_SIGMA,
};
use crate::solver::{Kgard, KgardConfig};
use crate::theory::theorem_check;

/// `(|S & T| / |T|, |S \ T| / |T|)` for an estimated support `S` and true
/// support `T`.
pub fn support_metrics(estimated: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::invalid("true support is empty"));
    }
    let mut t = truth.to_vec();
    t.sort_unstable();
    t.dedup();
    let mut s = estimated.to_vec();
    s.sort_unstable();
    s.dedup();
    let hits = s.iter().filter(|j| t.binary_search(j).is_ok()).count();
    let denom = t.len() as f64;
    Ok((hits as f64 / denom, (s.len() - hits) as f64 / denom))
}

/// Benchmark family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// `20 sinc(2 pi x)` with 199 training points.
    Sinc1d,
    /// Random kernel expansion on a 16 x 16 training lattice.
    Lattice2d,
    /// The sinc data under heavy-tailed noise.
    Stable1d,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Sinc1d => "sinc1d",
            Protocol::Lattice2d => "lattice2d",
            Protocol::Stable1d => "stable1d",
        }
    }

    /// Kernel width used for fitting.
    pub fn kernel_sigma(self) -> f64 {
        match self {
            Protocol::Sinc1d | Protocol::Stable1d => 0.15,
            Protocol::Lattice2d => 0.2,
        }
    }

    /// Whether the one-dimensional border boost applies by default.
    pub fn default_border_boost(self) -> bool {
        !matches!(self, Protocol::Lattice2d)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinc1d" => Ok(Protocol::Sinc1d),
            "lattice2d" => Ok(Protocol::Lattice2d),
            "stable1d" => Ok(Protocol::Stable1d),
            other => {
                Err(Error::invalid(format!("unknown protocol `{other}` (expected sinc1d, lattice2d or stable1d)")))
            }
        }
    }
}

pub const BORDER_BOOST_COUNT: usize = 5;
pub const BORDER_BOOST_FACTOR: f64 = 5.0;

/// Tikhonov weights over `(alpha, c)` that multiply the penalty on the first
/// and last `count` kernel coefficients by `factor`. The bias keeps weight 1.
pub fn border_boost_weights(n: usize, count: usize, factor: f64) -> DVector<f64> {
    let w = factor.sqrt();
    DVector::from_fn(n + 1, |i, _| if i < n && (i < count || i + count >= n) { w } else { 1.0 })
}

/// One Monte-Carlo run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// Corruption applied to the training targets; its seed is ignored in
    /// favor of the per-trial seed.
    pub noise: NoiseSpec,
    pub solver: KgardConfig<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub border_boost: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, noise: NoiseSpec, solver: KgardConfig<f64>, trials: usize, base_seed: u64) -> Self {
        Self { protocol, noise, solver, trials, base_seed, border_boost: protocol.default_border_boost() }
    }

    pub fn trial_seed(&self, t: usize) -> u64 {
        self.base_seed.wrapping_add(t as u64)
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub mse_validation: f64,
    /// `None` when the trial had no impulses.
    pub correct_fraction: Option<f64>,
    pub wrong_fraction: Option<f64>,
    /// Wall time of the fit call.
    pub wall_time_seconds: f64,
    /// Wall time of the whole trial including data generation and scoring.
    pub trial_seconds: f64,
    pub selections: usize,
    /// Error message when the solver failed.
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Means over the successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub trials: usize,
    pub failures: usize,
    pub mean_mse: f64,
    /// Sample standard deviation (zero for a single trial).
    pub std_mse: f64,
    pub mean_correct: Option<f64>,
    pub mean_wrong: Option<f64>,
    pub mean_time: f64,
}

impl AggregateStats {
    pub fn from_trials(results: &[TrialResult]) -> Self {
        let ok: Vec<&TrialResult> = results.iter().filter(|r| !r.failed()).collect();
        let failures = results.len() - ok.len();
        let n = ok.len();
        let mean = |f: &dyn Fn(&TrialResult) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        if n == 0 {
            return Self {
                trials: 0,
                failures,
                mean_mse: f64::NAN,
                std_mse: f64::NAN,
                mean_correct: None,
                mean_wrong: None,
                mean_time: f64::NAN,
            };
        }
        let mean_mse = mean(&|r| r.mse_validation);
        let std_mse = if n > 1 {
            (ok.iter().map(|r| (r.mse_validation - mean_mse).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let metric = |pick: &dyn Fn(&TrialResult) -> Option<f64>| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| pick(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            trials: n,
            failures,
            mean_mse,
            std_mse,
            mean_correct: metric(&|r| r.correct_fraction),
            mean_wrong: metric(&|r| r.wrong_fraction),
            mean_time: mean(&|r| r.wall_time_seconds),
        }
    }
}

/// Per-trial rows and their aggregate.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregate: AggregateStats,
}

struct Fixture {
    solver: Kgard<f64>,
    validation_kernel: DMatrix<f64>,
    sinc: Option<Benchmark>,
}

fn fixture(cfg: &ExperimentConfig) -> Result<Fixture> {
    let (sinc, train_inputs, val_inputs) = match cfg.protocol {
        Protocol::Sinc1d | Protocol::Stable1d => {
            let b = make_sinc_dataset();
            let (tr, va) = (b.train.inputs.clone(), b.validation.inputs.clone());
            (Some(b), tr, va)
        }
        Protocol::Lattice2d => {
            // Inputs do not depend on the draw.
            let b = make_lattice_dataset(&mut seeded_rng(0)).data;
            (None, b.train.inputs, b.validation.inputs)
        }
    };
    let params = KernelParams::new(cfg.protocol.kernel_sigma())?;
    let gram = gram_matrix(&train_inputs, &params)?;
    let mut solver_cfg = cfg.solver.clone();
    if cfg.border_boost && solver_cfg.tikhonov_weights.is_none() {
        solver_cfg.tikhonov_weights =
            Some(border_boost_weights(train_inputs.len(), BORDER_BOOST_COUNT, BORDER_BOOST_FACTOR));
    }
    let solver = Kgard::with_shared_gram(Arc::new(gram), solver_cfg)?;
    let validation_kernel = cross_kernel(&val_inputs, &train_inputs, &params)?;
    Ok(Fixture { solver, validation_kernel, sinc })
}

fn run_trial(cfg: &ExperimentConfig, fx: &Fixture, t: usize) -> Result<TrialResult> {
    let start = Instant::now();
    let seed = cfg.trial_seed(t);
    let mut rng: SeededRng = seeded_rng(seed);
    let (train_truth, val_truth) = match &fx.sinc {
        Some(b) => (b.train.targets.clone(), b.validation.targets.clone()),
        None => {
            let b = make_lattice_dataset(&mut rng).data;
            (b.train.targets, b.validation.targets)
        }
    };
    let noisy = corrupt_with(&train_truth, &cfg.noise, &mut rng)?;

    let fit_start = Instant::now();
    let fit = fx.solver.fit(&noisy.observations);
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let mut result = TrialResult {
        trial: t,
        seed,
        mse_validation: f64::NAN,
        correct_fraction: None,
        wrong_fraction: None,
        wall_time_seconds: fit_seconds,
        trial_seconds: 0.0,
        selections: 0,
        failure: None,
    };
    match fit {
        Ok(sol) => {
            let mut pred = &fx.validation_kernel * &sol.alpha;
            pred.add_scalar_mut(sol.bias);
            result.mse_validation = (pred - val_truth).norm_squared() / fx.validation_kernel.nrows() as f64;
            if !noisy.support.is_empty() {
                let (c, w) = support_metrics(&sol.support(), &noisy.support)?;
                result.correct_fraction = Some(c);
                result.wrong_fraction = Some(w);
            }
            result.selections = sol.iterations;
        }
        Err(e) => result.failure = Some(e.to_string()),
    }
    result.trial_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Runs `cfg.trials` independent trials on the current rayon pool.
///
/// Trial `t` draws everything from the generator seeded with
/// `base_seed + t`, so the rows do not depend on scheduling. Solver errors
/// are recorded per trial; data-generation errors abort the run.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    cfg.noise.validate()?;
    let fx = fixture(cfg)?;
    let trials = (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, &fx, t)).collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateStats::from_trials(&trials);
    Ok(ExperimentReport { config: cfg.clone(), trials, aggregate })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `seed,mse,correct,wrong,seconds,failed`, one row per trial.
///
/// With `timing = false` the seconds column is written as `0` so that
/// repeated runs produce identical files.
pub fn write_trials_csv<W: Write + ?Sized>(out: &mut W, trials: &[TrialResult], timing: bool) -> Result<()> {
    writeln!(out, "seed,mse,correct,wrong,seconds,failed")?;
    for r in trials {
        let secs = if timing { r.wall_time_seconds } else { 0.0 };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            r.mse_validation,
            opt(r.correct_fraction),
            opt(r.wrong_fraction),
            secs,
            u8::from(r.failed())
        )?;
    }
    Ok(())
}

fn noise_label(noise: &NoiseSpec) -> String {
    match noise.inlier {
        InlierNoise::None => "none".into(),
        InlierNoise::Gaussian { snr_db } => format!("{snr_db} dB"),
        InlierNoise::GaussianStd { std } => format!("std {std}"),
        InlierNoise::Stable(p) => format!("alpha={} gamma={}", p.alpha, p.gamma),
    }
}

/// Writes the aggregate as a one-row table: method and parameters, noise,
/// outlier percentage, MSE, support percentages and mean fit time.
pub fn write_aggregate_csv<W: Write + ?Sized>(out: &mut W, report: &ExperimentReport, timing: bool) -> Result<()> {
    let c = &report.config;
    let a = &report.aggregate;
    writeln!(out, "method,protocol,lambda,epsilon,noise,outliers_pct,mse,mse_std,correct_pct,wrong_pct,mit_seconds,trials,failures")?;
    let pct = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| (100.0 * x).to_string());
    writeln!(
        out,
        "KGARD,{},{},{},{},{},{},{},{},{},{},{},{}",
        c.protocol,
        c.solver.lambda,
        c.solver.epsilon,
        noise_label(&c.noise),
        100.0 * c.noise.impulse_fraction,
        a.mean_mse,
        a.std_mse,
        pct(a.mean_correct),
        pct(a.mean_wrong),
        if timing { a.mean_time } else { 0.0 },
        a.trials,
        a.failures
    )?;
    Ok(())
}

pub const SWEEP_LAMBDA: f64 = 1e4;
pub const SWEEP_EPSILON: f64 = 50.0;

/// Settings for the outlier-magnitude sweep on pure-outlier data.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub magnitudes: Vec<f64>,
    pub fraction: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl SweepConfig {
    pub fn new(magnitudes: Vec<f64>, fraction: f64, trials: usize, base_seed: u64) -> Self {
        Self { magnitudes, fraction, trials, base_seed, lambda: SWEEP_LAMBDA, epsilon: SWEEP_EPSILON }
    }
}

/// Averages for one outlier magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub magnitude: f64,
    pub mean_correct: f64,
    pub mean_wrong: f64,
    /// Fraction of trials on which the identification condition holds.
    pub bound_hold_rate: f64,
    pub trials: usize,
    pub failures: usize,
}

/// For every magnitude, fits `trials` pure-outlier instances (trial `t` is
/// seeded with `base_seed + t`, shared across magnitudes) and records support
/// recovery and how often the identification condition holds.
pub fn sweep_outlier_magnitude(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.magnitudes.is_empty() {
        return Err(Error::invalid("magnitude list is empty"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let inputs = make_pure_outlier_instance(&mut seeded_rng(0)).inputs;
    let gram = Arc::new(gram_matrix(&inputs, &KernelParams::new(PURE_OUTLIER_SIGMA)?)?);
    let solver = Kgard::with_shared_gram(gram.clone(), KgardConfig::new(cfg.lambda, cfg.epsilon))?;
    cfg.magnitudes
        .iter()
        .map(|&magnitude| {
            let noise = NoiseSpec::new(InlierNoise::None, cfg.fraction, magnitude, 0)?;
            let rows = (0..cfg.trials)
                .into_par_iter()
                .map(|t| -> Result<Option<(f64, f64, bool)>> {
                    let mut rng = seeded_rng(cfg.base_seed.wrapping_add(t as u64));
                    let inst = make_pure_outlier_instance(&mut rng);
                    let noisy = corrupt_with(&inst.truth, &noise, &mut rng)?;
                    if noisy.support.is_empty() {
                        return Err(Error::invalid("outlier fraction yields no outliers"));
                    }
                    let holds = if magnitude > 0.0 {
                        theorem_check(&gram, &inst.theta, &noisy.outliers, cfg.lambda)?.holds
                    } else {
                        false
                    };
                    match solver.fit(&noisy.observations) {
                        Ok(sol) => {
                            let (c, w) = support_metrics(&sol.support(), &noisy.support)?;
                            Ok(Some((c, w, holds)))
                        }
                        Err(_) => Ok(None),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let ok: Vec<_> = rows.iter().flatten().collect();
            let n = ok.len().max(1) as f64;
            Ok(SweepRow {
                magnitude,
                mean_correct: ok.iter().map(|r| r.0).sum::<f64>() / n,
                mean_wrong: ok.iter().map(|r| r.1).sum::<f64>() / n,
                bound_hold_rate: ok.iter().filter(|r| r.2).count() as f64 / n,
                trials: ok.len(),
                failures: rows.len() - ok.len(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write + ?Sized>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "magnitude,correct,wrong,bound_hold_rate,trials,failures")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.magnitude, r.mean_correct, r.mean_wrong, r.bound_hold_rate, r.trials, r.failures
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_examples() {
        assert_eq!(support_metrics(&[1, 2], &[1, 2]).unwrap(), (1.0, 0.0));
        assert_eq!(support_metrics(&[1, 2, 5], &[1, 2]).unwrap(), (1.0, 0.5));
        assert_eq!(support_metrics(&[], &[1, 2]).unwrap(), (0.0, 0.0));
        assert!(support_metrics(&[1], &[]).is_err());
    }

    #[test]
    fn border_weights() {
        let w = border_boost_weights(12, 5, 5.0);
        assert_eq!(w.len(), 13);
        let s5 = 5f64.sqrt();
        assert_eq!(w.as_slice()[..5], [s5; 5]);
        assert_eq!(w[5], 1.0);
        assert_eq!(w[6], 1.0);
        assert_eq!(w.as_slice()[7..12], [s5; 5]);
        assert_eq!(w[12], 1.0);
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [Protocol::Sinc1d, Protocol::Lattice2d, Protocol::Stable1d] {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("sinc".parse::<Protocol>().is_err());
    }

    #[test]
    fn aggregate_skips_failures() {
        let row = |mse: f64, fail: bool| TrialResult {
            trial: 0,
            seed: 0,
            mse_validation: mse,
            correct_fraction: Some(1.0),
            wrong_fraction: Some(0.0),
            wall_time_seconds: 1.0,
            trial_seconds: 2.0,
            selections: 0,
            failure: fail.then(|| "boom".to_string()),
        };
        let a = AggregateStats::from_trials(&[row(1.0, false), row(3.0, false), row(f64::NAN, true)]);
        assert_eq!((a.trials, a.failures), (2, 1));
        assert_eq!(a.mean_mse, 2.0);
        assert!((a.std_mse - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.mean_correct, Some(1.0));
    }

    #[test]
    fn clean_sinc_trials_have_no_metrics() {
        let cfg = ExperimentConfig::new(
            Protocol::Sinc1d,
            NoiseSpec::new(InlierNoise::Gaussian { snr_db: 60.0 }, 0.0, 0.0, 0).unwrap(),
            KgardConfig::new(0.2, 10.0),
            3,
            11,
        );
        let rep = run_monte_carlo(&cfg).unwrap();
        assert_eq!(rep.trials.len(), 3);
        for r in &rep.trials {
            assert_eq!(r.correct_fraction, None);
            assert_eq!(r.selections, 0);
            assert!(r.mse_validation >= 0.0 && r.wall_time_seconds > 0.0);
            assert!(r.wall_time_seconds < r.trial_seconds);
        }
        assert_eq!(rep.aggregate.mean_correct, None);
        assert_eq!([rep.trials[0].seed, rep.trials[2].seed], [11, 13]);
    }
}
