//! Synthetic datasets and corruption models.
//!
//! All randomness flows through [`SeededRng`]; a generator is a pure function
//! of its seed.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, KernelParams, PointSet};
use crate::solver::Dataset;

/// The pseudo-random generator used throughout: ChaCha with 8 rounds,
/// seeded from a `u64` through `SeedableRng::seed_from_u64`.
pub type SeededRng = ChaCha8Rng;

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha, seed_from_u64)";

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Symmetric alpha-stable law with zero location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl StableParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::invalid(format!("stable alpha must be in (0, 2], got {alpha}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("stable scale must be positive, got {gamma}")));
        }
        Ok(Self { alpha, gamma })
    }

    /// One draw by the Chambers-Mallows-Stuck transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        let w: f64 = Exp1.sample(rng);
        let a = self.alpha;
        let s = if a == 1.0 {
            v.tan()
        } else {
            (a * v).sin() / v.cos().powf(1.0 / a) * ((v - a * v).cos() / w).powf((1.0 - a) / a)
        };
        self.gamma * s
    }
}

/// Background noise added to every observation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InlierNoise {
    #[default]
    None,
    /// Gaussian noise at the given signal-to-noise ratio, where the signal
    /// power is the mean squared clean value.
    Gaussian {
        snr_db: f64,
    },
    /// Gaussian noise with a fixed standard deviation.
    GaussianStd {
        std: f64,
    },
    Stable(StableParams),
}

/// Corruption settings for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub inlier: InlierNoise,
    pub impulse_fraction: f64,
    pub impulse_magnitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(inlier: InlierNoise, impulse_fraction: f64, impulse_magnitude: f64, seed: u64) -> Result<Self> {
        let spec = Self { inlier, impulse_fraction, impulse_magnitude, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn clean(seed: u64) -> Self {
        Self { inlier: InlierNoise::None, impulse_fraction: 0.0, impulse_magnitude: 0.0, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.impulse_fraction) {
            return Err(Error::invalid(format!("impulse fraction must be in [0, 1), got {}", self.impulse_fraction)));
        }
        if !(self.impulse_magnitude >= 0.0) || !self.impulse_magnitude.is_finite() {
            return Err(Error::invalid("impulse magnitude must be finite and nonnegative"));
        }
        match self.inlier {
            InlierNoise::Gaussian { snr_db } if !snr_db.is_finite() => Err(Error::invalid("snr must be finite")),
            InlierNoise::GaussianStd { std } if !(std >= 0.0) || !std.is_finite() => {
                Err(Error::invalid("noise standard deviation must be finite and nonnegative"))
            }
            InlierNoise::Stable(p) => StableParams::new(p.alpha, p.gamma).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Number of impulses for `n` observations: `fraction * n` rounded half
    /// away from zero.
    pub fn impulse_count(&self, n: usize) -> usize {
        (self.impulse_fraction * n as f64).round() as usize
    }
}

/// Observations produced by [`corrupt`].
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub observations: DVector<f64>,
    /// Sorted outlier support.
    pub support: Vec<usize>,
    /// Dense outlier vector (impulses only).
    pub outliers: DVector<f64>,
    /// Inlier noise that was added.
    pub inlier_noise: DVector<f64>,
}

/// Standard deviation of Gaussian noise giving `snr_db` on `truth`.
pub fn noise_std_for_snr(truth: &DVector<f64>, snr_db: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let power = truth.norm_squared() / truth.len() as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Corrupts `truth` using a generator seeded from `spec.seed`.
pub fn corrupt(truth: &DVector<f64>, spec: &NoiseSpec) -> Result<Corrupted> {
    corrupt_with(truth, spec, &mut seeded_rng(spec.seed))
}

/// Corrupts `truth`, drawing from `rng`: first the inlier noise for every
/// coordinate, then the impulse support, then the impulse signs.
pub fn corrupt_with<R: Rng + ?Sized>(truth: &DVector<f64>, spec: &NoiseSpec, rng: &mut R) -> Result<Corrupted> {
    spec.validate()?;
    let n = truth.len();
    let count = spec.impulse_count(n);
    if count > 0 && count >= n {
        return Err(Error::invalid(format!("impulse count {count} must be below the sample size {n}")));
    }
    let inlier_noise = match spec.inlier {
        InlierNoise::None => DVector::zeros(n),
        InlierNoise::Gaussian { snr_db } => {
            let s = noise_std_for_snr(truth, snr_db);
            DVector::from_fn(n, |_, _| s * normal(rng))
        }
        InlierNoise::GaussianStd { std } => DVector::from_fn(n, |_, _| std * normal(rng)),
        InlierNoise::Stable(p) => DVector::from_fn(n, |_, _| p.sample(rng)),
    };
    let mut support = sample(rng, n, count).into_vec();
    support.sort_unstable();
    let mut outliers = DVector::zeros(n);
    for &j in &support {
        outliers[j] = if rng.random::<bool>() { spec.impulse_magnitude } else { -spec.impulse_magnitude };
    }
    let observations = truth + &inlier_noise + &outliers;
    Ok(Corrupted { observations, support, outliers, inlier_noise })
}

/// Definition of `sinc` used by the one-dimensional benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SincConvention {
    /// `sinc(t) = sin(pi t) / (pi t)`.
    #[default]
    Normalized,
    /// `sinc(t) = sin(t) / t`.
    Unnormalized,
}

impl SincConvention {
    pub fn eval(self, t: f64) -> f64 {
        let s = match self {
            SincConvention::Normalized => PI * t,
            SincConvention::Unnormalized => t,
        };
        if s == 0.0 {
            1.0
        } else {
            s.sin() / s
        }
    }
}

/// Clean training and validation data.
#[derive(Debug, Clone)]
pub struct Benchmark {
    /// Training inputs with noise-free targets.
    pub train: Dataset<f64>,
    /// Validation inputs with noise-free targets.
    pub validation: Dataset<f64>,
}

impl Benchmark {
    pub fn train_truth(&self) -> &DVector<f64> {
        &self.train.targets
    }

    pub fn validation_truth(&self) -> &DVector<f64> {
        &self.validation.targets
    }
}

pub const SINC_POINTS: usize = 398;
pub const SINC_START: f64 = -0.99;
pub const SINC_STEP: f64 = 0.005;

/// `20 sinc(2 pi x)` sampled on 398 points from -0.99 with step 0.005;
/// points 1, 3, 5, ... (counting from one) train, the rest validate.
pub fn make_sinc_dataset() -> Benchmark {
    make_sinc_dataset_with(SincConvention::default())
}

pub fn make_sinc_dataset_with(convention: SincConvention) -> Benchmark {
    let f = |x: f64| 20.0 * convention.eval(2.0 * PI * x);
    let xs: Vec<f64> = (0..SINC_POINTS).map(|i| SINC_START + SINC_STEP * i as f64).collect();
    let split = |parity: usize| {
        let pts: Vec<f64> = xs.iter().copied().skip(parity).step_by(2).collect();
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|&x| f(x)));
        Dataset::new(PointSet::from_scalars(&pts), y).expect("sinc split is nonempty")
    };
    Benchmark { train: split(0), validation: split(1) }
}

pub const LATTICE_AXIS: usize = 31;
pub const LATTICE_SIGMA: f64 = 0.2;
pub const LATTICE_COEFF_STD: f64 = 25.6;

/// Which node count the lattice sparsity range is a percentage of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparsityBase {
    /// The 256 training nodes: 11 to 44 nonzero coefficients.
    #[default]
    Training,
    /// All 961 lattice nodes: 39 to 168 nonzero coefficients.
    Lattice,
}

/// Planar benchmark together with its generating coefficients.
#[derive(Debug, Clone)]
pub struct LatticeBenchmark {
    pub data: Benchmark,
    /// Coefficients over all lattice nodes, row-major.
    pub true_alpha: DVector<f64>,
}

/// Inclusive range of the nonzero coefficient count.
pub fn lattice_sparsity_range(base: SparsityBase) -> (usize, usize) {
    let m = match base {
        SparsityBase::Training => (LATTICE_AXIS / 2 + 1).pow(2),
        SparsityBase::Lattice => LATTICE_AXIS * LATTICE_AXIS,
    } as f64;
    ((0.04 * m).ceil() as usize, (0.175 * m).floor() as usize)
}

fn lattice_nodes() -> PointSet<f64> {
    let axis: Vec<f64> = (0..LATTICE_AXIS).map(|i| i as f64 / (LATTICE_AXIS - 1) as f64).collect();
    let mut coords = Vec::with_capacity(2 * LATTICE_AXIS * LATTICE_AXIS);
    for &a in &axis {
        for &b in &axis {
            coords.push(a);
            coords.push(b);
        }
    }
    PointSet::from_flat(2, coords).expect("lattice coordinates are consistent")
}

/// Nodes whose two axis indices are both even (training) or both odd
/// (validation), counting from zero.
pub fn lattice_split_indices() -> (Vec<usize>, Vec<usize>) {
    let pick = |parity: usize| {
        let mut v = Vec::new();
        for i in (parity..LATTICE_AXIS).step_by(2) {
            for j in (parity..LATTICE_AXIS).step_by(2) {
                v.push(i * LATTICE_AXIS + j);
            }
        }
        v
    };
    (pick(0), pick(1))
}

/// Random kernel expansion over the 31 x 31 lattice of the unit square.
pub fn make_lattice_dataset<R: Rng + ?Sized>(rng: &mut R) -> LatticeBenchmark {
    make_lattice_dataset_with(rng, SparsityBase::default())
}

pub fn make_lattice_dataset_with<R: Rng + ?Sized>(rng: &mut R, base: SparsityBase) -> LatticeBenchmark {
    let nodes = lattice_nodes();
    let total = nodes.len();
    let (lo, hi) = lattice_sparsity_range(base);
    let count = rng.random_range(lo..=hi);
    let mut true_alpha = DVector::zeros(total);
    for j in sample(rng, total, count) {
        true_alpha[j] = LATTICE_COEFF_STD * normal(rng);
    }
    let active: Vec<usize> = (0..total).filter(|&j| true_alpha[j] != 0.0).collect();
    let centers = nodes.select(&active);
    let coeffs = DVector::from_iterator(active.len(), active.iter().map(|&j| true_alpha[j]));
    let params = KernelParams::new(LATTICE_SIGMA).expect("positive width");
    let (tr, va) = lattice_split_indices();
    let eval = |idx: &[usize]| {
        let pts = nodes.select(idx);
        let y = cross_kernel(&pts, &centers, &params).expect("same dimension") * &coeffs;
        Dataset::new(pts, y).expect("lattice split is nonempty")
    };
    LatticeBenchmark { data: Benchmark { train: eval(&tr), validation: eval(&va) }, true_alpha }
}

pub const PURE_OUTLIER_POINTS: usize = 100;
pub const PURE_OUTLIER_SIGMA: f64 = 0.1;

/// Noise-free instance `y = K alpha` used to study support identification.
#[derive(Debug, Clone)]
pub struct PureOutlierInstance {
    pub inputs: PointSet<f64>,
    /// `(alpha; c)` with `c = 0`.
    pub theta: DVector<f64>,
    pub truth: DVector<f64>,
}

/// 100 equispaced points on [0, 1], 2 to 23 nonzero coefficients drawn from
/// N(0, 0.5^2), kernel width 0.1, zero bias.
pub fn make_pure_outlier_instance<R: Rng + ?Sized>(rng: &mut R) -> PureOutlierInstance {
    let n = PURE_OUTLIER_POINTS;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let inputs = PointSet::from_scalars(&xs);
    let count = rng.random_range(2..=23);
    let mut theta = DVector::zeros(n + 1);
    for j in sample(rng, n, count) {
        theta[j] = 0.5 * normal(rng);
    }
    let gram = crate::kernel::gram_matrix(&inputs, &KernelParams::new(PURE_OUTLIER_SIGMA).expect("positive width"))
        .expect("nonempty");
    let truth = gram * theta.rows(0, n);
    PureOutlierInstance { inputs, theta, truth }
}

/// Writes one row per observation: `x1..xd,y,truth,is_outlier`.
pub fn write_dataset_csv<W: Write + ?Sized>(
    out: &mut W,
    inputs: &PointSet<f64>,
    observations: &DVector<f64>,
    truth: &DVector<f64>,
    support: &[usize],
) -> Result<()> {
    let n = inputs.len();
    for len in [observations.len(), truth.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    let mut mask = vec![false; n];
    for &j in support {
        *mask.get_mut(j).ok_or_else(|| Error::invalid(format!("support index {j} out of range")))? = true;
    }
    let header: Vec<String> = (1..=inputs.dim()).map(|d| format!("x{d}")).collect();
    writeln!(out, "{},y,truth,is_outlier", header.join(","))?;
    for (i, p) in inputs.iter().enumerate() {
        for v in p {
            write!(out, "{v},")?;
        }
        writeln!(out, "{},{},{}", observations[i], truth[i], u8::from(mask[i]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinc_split_and_values() {
        let b = make_sinc_dataset();
        assert_eq!(b.train.len(), 199);
        assert_eq!(b.validation.len(), 199);
        assert_eq!(b.train.inputs.point(0)[0], -0.99);
        let x1 = b.validation.inputs.point(0)[0];
        assert!((x1 - (-0.985)).abs() < 1e-15);
        // x = 0 is point 198 counting from zero, a training point.
        assert!(b.train.inputs.point(99)[0].abs() < 1e-12);
        assert!((b.train.targets[99] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sinc_conventions() {
        assert_eq!(SincConvention::Normalized.eval(0.0), 1.0);
        assert!(SincConvention::Normalized.eval(1.0).abs() < 1e-15);
        assert!((SincConvention::Unnormalized.eval(PI / 2.0) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn impulse_count_rounds_half_away() {
        let s = NoiseSpec::new(InlierNoise::None, 0.1, 15.0, 0).unwrap();
        assert_eq!(s.impulse_count(199), 20);
        assert_eq!(NoiseSpec::new(InlierNoise::None, 0.05, 15.0, 0).unwrap().impulse_count(10), 1);
        assert_eq!(NoiseSpec::new(InlierNoise::None, 0.05, 15.0, 0).unwrap().impulse_count(199), 10);
    }

    #[test]
    fn clean_spec_is_identity() {
        let t = DVector::from_fn(10, |i, _| i as f64);
        let c = corrupt(&t, &NoiseSpec::clean(3)).unwrap();
        assert_eq!(c.observations, t);
        assert!(c.support.is_empty());
    }

    #[test]
    fn impulses_have_exact_magnitude() {
        let t = DVector::zeros(199);
        let c = corrupt(&t, &NoiseSpec::new(InlierNoise::None, 0.1, 15.0, 42).unwrap()).unwrap();
        assert_eq!(c.support.len(), 20);
        for j in 0..199 {
            let inside = c.support.binary_search(&j).is_ok();
            assert_eq!(c.observations[j].abs(), if inside { 15.0 } else { 0.0 });
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NoiseSpec::new(InlierNoise::None, 1.0, 1.0, 0).is_err());
        assert!(NoiseSpec::new(InlierNoise::None, -0.1, 1.0, 0).is_err());
        assert!(NoiseSpec::new(InlierNoise::Stable(StableParams { alpha: 2.5, gamma: 1.0 }), 0.0, 1.0, 0).is_err());
        assert!(StableParams::new(1.0, 0.0).is_err());
        // 0.9 of 2 rounds to 2 impulses, which is the whole sample.
        let s = NoiseSpec::new(InlierNoise::None, 0.9, 1.0, 0).unwrap();
        assert!(corrupt(&DVector::zeros(2), &s).is_err());
    }

    #[test]
    fn same_seed_same_draw() {
        let t = DVector::from_fn(50, |i, _| (i as f64).sin());
        let s = NoiseSpec::new(InlierNoise::Gaussian { snr_db: 10.0 }, 0.1, 5.0, 9).unwrap();
        let a = corrupt(&t, &s).unwrap();
        let b = corrupt(&t, &s).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.support, b.support);
        assert_ne!(corrupt(&t, &s.with_seed(10)).unwrap().observations, a.observations);
    }

    #[test]
    fn lattice_geometry() {
        let (tr, va) = lattice_split_indices();
        assert_eq!((tr.len(), va.len()), (256, 225));
        assert_eq!(lattice_sparsity_range(SparsityBase::Training), (11, 44));
        assert_eq!(lattice_sparsity_range(SparsityBase::Lattice), (39, 168));
        let b = make_lattice_dataset(&mut seeded_rng(1));
        assert_eq!(b.true_alpha.len(), 961);
        let nnz = b.true_alpha.iter().filter(|&&v| v != 0.0).count();
        assert!((11..=44).contains(&nnz));
        assert_eq!(b.data.train.inputs.point(1), &[0.0, 2.0 / 30.0]);
        assert_eq!(b.data.validation.inputs.point(0), &[1.0 / 30.0, 1.0 / 30.0]);
    }

    #[test]
    fn pure_outlier_instance_shape() {
        let inst = make_pure_outlier_instance(&mut seeded_rng(5));
        assert_eq!(inst.theta.len(), 101);
        assert_eq!(inst.theta[100], 0.0);
        let nnz = inst.theta.iter().filter(|&&v| v != 0.0).count();
        assert!((2..=23).contains(&nnz));
    }

    #[test]
    fn stable_unit_exponent_is_cauchy() {
        // Median of |X| for a standard Cauchy variable is 1.
        let p = StableParams::new(1.0, 1.0).unwrap();
        let mut rng = seeded_rng(3);
        let mut v: Vec<f64> = (0..20001).map(|_| p.sample(&mut rng).abs()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((v[10000] - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_layout() {
        let pts = PointSet::from_scalars(&[0.5, 1.0]);
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &pts, &DVector::from_vec(vec![1.0, 2.5]), &DVector::from_vec(vec![1.0, 2.0]), &[1])
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,y,truth,is_outlier\n0.5,1,1,0\n1,2.5,2,1\n");
    }
}
