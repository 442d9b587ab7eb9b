//! Impulse-noise removal on grayscale images.
//!
//! The image is covered by overlapping `N x N` regions whose central `L x L`
//! cores tile it exactly. Each region is fitted independently with the
//! greedy solver over the `N x N` lattice of the unit square; only the core
//! of each fit is kept.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
pub use crate::imageio::GrayImage;
use crate::kernel::{gram_matrix, KernelParams, PointSet};
use crate::noise::{corrupt, InlierNoise, NoiseSpec};
use crate::solver::{Kgard, KgardConfig, Regularizer, StopNorm};

/// Region geometry and solver parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoiConfig {
    /// Side `N` of a processed region.
    pub roi_size: usize,
    /// Side `L` of the kept core.
    pub core_size: usize,
    /// Kernel width on the unit-square lattice.
    pub sigma: f64,
    /// Base penalty; regions use `lambda0`, `5 lambda0` or `15 lambda0`.
    pub lambda0: f64,
    /// Upper bound on the stopping threshold.
    pub e0: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { roi_size: 12, core_size: 8, sigma: 0.3, lambda0: 1.0, e0: 40.0 }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.core_size == 0 || self.roi_size <= self.core_size {
            return Err(Error::invalid(format!(
                "need roi size > core size >= 1, got {} and {}",
                self.roi_size, self.core_size
            )));
        }
        if !(self.roi_size - self.core_size).is_multiple_of(2) {
            return Err(Error::invalid("roi size minus core size must be even"));
        }
        for (name, v) in [("sigma", self.sigma), ("lambda0", self.lambda0), ("e0", self.e0)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Per-region selection cap `floor(N^2 / 3)`.
    pub fn max_selections(&self) -> usize {
        self.roi_size * self.roi_size / 3
    }
}

/// Placement of regions over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    /// Image size rounded up to a multiple of the core size.
    pub extended_width: usize,
    pub extended_height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    pub pad: usize,
    pub roi_size: usize,
    pub core_size: usize,
    /// Top-left corners of the regions in padded coordinates, raster order.
    /// The core of region `(r, c)` covers original pixels `r..r+L`, `c..c+L`.
    pub roi_origins: Vec<(usize, usize)>,
}

impl TilePlan {
    /// Geometry for a `width x height` image; `roi_size == core_size` is
    /// accepted and gives non-overlapping tiles.
    pub fn new(width: usize, height: usize, roi_size: usize, core_size: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be nonempty"));
        }
        if core_size == 0 || roi_size < core_size || !(roi_size - core_size).is_multiple_of(2) {
            return Err(Error::invalid(format!("invalid region geometry {roi_size}/{core_size}")));
        }
        let ext = |v: usize| v.div_ceil(core_size) * core_size;
        let (extended_width, extended_height) = (ext(width), ext(height));
        let pad = (roi_size - core_size) / 2;
        let mut roi_origins = Vec::new();
        for r in (0..extended_height).step_by(core_size) {
            for c in (0..extended_width).step_by(core_size) {
                roi_origins.push((r, c));
            }
        }
        Ok(Self {
            width,
            height,
            extended_width,
            extended_height,
            padded_width: extended_width + 2 * pad,
            padded_height: extended_height + 2 * pad,
            pad,
            roi_size,
            core_size,
            roi_origins,
        })
    }

    pub fn len(&self) -> usize {
        self.roi_origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roi_origins.is_empty()
    }

    /// Extends `image` to the core multiple and pads it, replicating the
    /// nearest border pixel.
    pub fn pad_image(&self, image: &GrayImage) -> Result<GrayImage> {
        if image.width() != self.width || image.height() != self.height {
            return Err(Error::invalid("image does not match the tile plan"));
        }
        let pad = self.pad as isize;
        GrayImage::from_fn(self.padded_width, self.padded_height, |r, c| {
            let rr = (r as isize - pad).clamp(0, self.height as isize - 1) as usize;
            let cc = (c as isize - pad).clamp(0, self.width as isize - 1) as usize;
            image.get(rr, cc)
        })
    }

    /// Copies the `N x N` region at `origin` into a vector, pixel `(i, j)`
    /// going to position `i N + j`.
    pub fn extract(&self, padded: &GrayImage, origin: (usize, usize)) -> DVector<f64> {
        let n = self.roi_size;
        DVector::from_fn(n * n, |k, _| padded.get(origin.0 + k / n, origin.1 + k % n))
    }
}

pub fn tile_plan(image: &GrayImage, cfg: &RoiConfig) -> Result<TilePlan> {
    cfg.validate()?;
    TilePlan::new(image.width(), image.height(), cfg.roi_size, cfg.core_size)
}

/// Stacks a square row-major block into a vector: pixel `(i, j)` goes to
/// position `i N + j`.
pub fn rearrange(block: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !block.is_square() {
        return Err(Error::invalid("block must be square"));
    }
    let n = block.nrows();
    Ok(DVector::from_fn(n * n, |k, _| block[(k / n, k % n)]))
}

/// Inverse of [`rearrange`].
pub fn unrearrange(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return Err(Error::invalid(format!("length {} is not a perfect square", v.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| v[i * n + j]))
}

/// The `N^2` lattice points `((i) / (N-1), (j) / (N-1))` in stacking order.
pub fn roi_lattice(n: usize) -> PointSet<f64> {
    let step = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let mut coords = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            coords.push(i as f64 * step);
            coords.push(j as f64 * step);
        }
    }
    PointSet::from_flat(2, coords).expect("lattice coordinates are consistent")
}

/// Central-difference gradient magnitude with replicated borders.
pub fn gradient_magnitude(image: &GrayImage) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    GrayImage::from_fn(w, h, |r, c| {
        let at = |rr: isize, cc: isize| {
            image.get(rr.clamp(0, h as isize - 1) as usize, cc.clamp(0, w as isize - 1) as usize)
        };
        let (r, c) = (r as isize, c as isize);
        let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
        let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
        (gx * gx + gy * gy).sqrt()
    })
    .expect("same dimensions")
}

/// Penalty level assigned to a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaTier {
    /// `lambda0`, for regions with fine detail.
    Detail,
    /// `5 lambda0`.
    Medium,
    /// `15 lambda0`, for smooth regions.
    Smooth,
}

impl LambdaTier {
    pub fn multiplier(self) -> f64 {
        match self {
            LambdaTier::Detail => 1.0,
            LambdaTier::Medium => 5.0,
            LambdaTier::Smooth => 15.0,
        }
    }

    fn index(self) -> usize {
        match self {
            LambdaTier::Detail => 0,
            LambdaTier::Medium => 1,
            LambdaTier::Smooth => 2,
        }
    }
}

/// Per-region penalties from mean gradient magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMap {
    pub tiers: Vec<LambdaTier>,
    pub lambdas: Vec<f64>,
    pub mean_gradients: Vec<f64>,
    /// Mean of `mean_gradients`.
    pub m: f64,
    /// Population standard deviation of `mean_gradients`.
    pub s: f64,
}

/// Mean gradient magnitude over every region of the padded image; regions
/// above `m + s` get `lambda0`, below `m - s/10` get `15 lambda0`, the rest
/// `5 lambda0`.
pub fn auto_lambda_map(image: &GrayImage, plan: &TilePlan, cfg: &RoiConfig) -> Result<LambdaMap> {
    let padded = plan.pad_image(image)?;
    Ok(lambda_map_padded(&padded, plan, cfg.lambda0))
}

fn lambda_map_padded(padded: &GrayImage, plan: &TilePlan, lambda0: f64) -> LambdaMap {
    let grad = gradient_magnitude(padded);
    let n = plan.roi_size;
    let mean_gradients: Vec<f64> = plan
        .roi_origins
        .iter()
        .map(|&(r0, c0)| {
            let mut acc = 0.0;
            for r in r0..r0 + n {
                for c in c0..c0 + n {
                    acc += grad.get(r, c);
                }
            }
            acc / (n * n) as f64
        })
        .collect();
    let k = mean_gradients.len() as f64;
    let m = mean_gradients.iter().sum::<f64>() / k;
    let s = (mean_gradients.iter().map(|g| (g - m).powi(2)).sum::<f64>() / k).sqrt();
    let tiers: Vec<LambdaTier> = mean_gradients
        .iter()
        .map(|&g| {
            if g > m + s {
                LambdaTier::Detail
            } else if g < m - s / 10.0 {
                LambdaTier::Smooth
            } else {
                LambdaTier::Medium
            }
        })
        .collect();
    let lambdas = tiers.iter().map(|t| t.multiplier() * lambda0).collect();
    LambdaMap { tiers, lambdas, mean_gradients, m, s }
}

/// Histogram of absolute residuals behind the automatic threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonHistogram {
    pub bin_count: usize,
    pub edges: Vec<f64>,
    pub heights: Vec<usize>,
    pub h_min: usize,
    /// Left edge of the first lowest bar.
    pub e1: f64,
    /// Left edge of the first bar (after the first) that rises by at least
    /// one over a predecessor of height at most `h_min + 5`; `None` if none does.
    pub e2: Option<f64>,
    /// Sample standard deviation of the heights over their mean.
    pub dispersion: f64,
}

/// Ranges below this are treated as a single value.
pub const DEGENERATE_RANGE: f64 = 1e-9;
/// Dispersion above which the rise-based edge is considered.
pub const DISPERSION_THRESHOLD: f64 = 0.9;

impl EpsilonHistogram {
    /// `floor(n / 10) + 1` equal bins between the smallest and largest value,
    /// each closed on the left, the last also closed on the right. Returns
    /// `None` when the values span less than [`DEGENERATE_RANGE`].
    pub fn build(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo >= DEGENERATE_RANGE) {
            return None;
        }
        let bins = values.len() / 10 + 1;
        let width = hi - lo;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64 / bins as f64).collect();
        let mut heights = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) * bins as f64) as usize;
            heights[b.min(bins - 1)] += 1;
        }
        let h_min = *heights.iter().min().expect("at least one bin");
        let first_min = heights.iter().position(|&h| h == h_min).expect("minimum exists");
        let e2 = (1..bins).find(|&l| heights[l] > heights[l - 1] && heights[l - 1] <= h_min + 5).map(|l| edges[l]);
        let mean = values.len() as f64 / bins as f64;
        let var = if bins > 1 {
            heights.iter().map(|&h| (h as f64 - mean).powi(2)).sum::<f64>() / (bins - 1) as f64
        } else {
            0.0
        };
        Some(Self { bin_count: bins, e1: edges[first_min], edges, heights, h_min, e2, dispersion: var.sqrt() / mean })
    }

    /// `min(e0, e1, e2)` when the heights are dispersed, else `min(e0, e1)`.
    pub fn threshold(&self, e0: f64) -> f64 {
        let mut eps = e0.min(self.e1);
        if self.dispersion > DISPERSION_THRESHOLD {
            if let Some(e2) = self.e2 {
                eps = eps.min(e2);
            }
        }
        eps
    }
}

/// Stopping threshold derived from the absolute residuals.
pub fn auto_epsilon(residual_abs: &[f64], e0: f64) -> f64 {
    EpsilonHistogram::build(residual_abs).map_or(e0, |h| h.threshold(e0))
}

/// Fit of one region.
#[derive(Debug, Clone)]
pub struct RoiFit {
    /// Estimate of the clean region, stacked.
    pub fitted: DVector<f64>,
    /// Estimated impulses, stacked.
    pub outliers: DVector<f64>,
    pub iterations: usize,
    pub final_epsilon: f64,
}

/// Fits one stacked region at a given penalty tier.
pub trait RoiSolver: Sync {
    fn solve(&self, roi: &DVector<f64>, tier: LambdaTier) -> Result<RoiFit>;
}

/// Copies each region through unchanged; used to check the tiling.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl RoiSolver for PassThrough {
    fn solve(&self, roi: &DVector<f64>, _tier: LambdaTier) -> Result<RoiFit> {
        Ok(RoiFit { fitted: roi.clone(), outliers: DVector::zeros(roi.len()), iterations: 0, final_epsilon: 0.0 })
    }
}

/// The greedy solver with the automatic threshold. One prepared solver is
/// kept per penalty tier; they share the region Gram matrix.
#[derive(Debug, Clone)]
pub struct KgardRoiSolver {
    tiers: [Kgard<f64>; 3],
    e0: f64,
}

impl KgardRoiSolver {
    pub fn new(cfg: &RoiConfig) -> Result<Self> {
        cfg.validate()?;
        let gram = Arc::new(gram_matrix(&roi_lattice(cfg.roi_size), &KernelParams::new(cfg.sigma)?)?);
        let make = |tier: LambdaTier| {
            let c = KgardConfig::new(tier.multiplier() * cfg.lambda0, cfg.e0)
                .with_regularizer(Regularizer::CoefficientNorm)
                .with_stop_norm(StopNorm::Linf)
                .with_max_selections(cfg.max_selections());
            Kgard::with_shared_gram(gram.clone(), c)
        };
        Ok(Self {
            tiers: [make(LambdaTier::Detail)?, make(LambdaTier::Medium)?, make(LambdaTier::Smooth)?],
            e0: cfg.e0,
        })
    }
}

impl RoiSolver for KgardRoiSolver {
    fn solve(&self, roi: &DVector<f64>, tier: LambdaTier) -> Result<RoiFit> {
        let solver = &self.tiers[tier.index()];
        let e0 = self.e0;
        let mut rule = |r: &DVector<f64>| {
            let a: Vec<f64> = r.iter().map(|v| v.abs()).collect();
            auto_epsilon(&a, e0)
        };
        let sol = solver.fit_with(roi, &mut rule)?;
        Ok(RoiFit {
            fitted: sol.fitted(solver.gram()),
            outliers: sol.outlier_vector(roi.len()),
            iterations: sol.iterations,
            final_epsilon: *sol.threshold_history.last().expect("history is nonempty"),
        })
    }
}

/// Per-region record written to the diagnostics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiDiagnostic {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub tier: LambdaTier,
    pub lambda: f64,
    pub mean_gradient: f64,
    pub final_epsilon: f64,
    pub outliers: usize,
    pub iterations: usize,
    /// Set when the solver failed and the region was passed through.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiseDiagnostics {
    pub config: RoiConfig,
    pub width: usize,
    pub height: usize,
    pub gradient_mean: f64,
    pub gradient_std: f64,
    pub failures: usize,
    pub rois: Vec<RoiDiagnostic>,
}

impl DenoiseDiagnostics {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Io(e.into()))
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub denoised: GrayImage,
    /// Estimated impulses, zero where none was detected.
    pub outlier_map: GrayImage,
    /// Input minus `outlier_map`.
    pub impulse_removed: GrayImage,
    pub diagnostics: DenoiseDiagnostics,
}

/// Outlier values are snapped to multiples of this so that
/// `impulse_removed + outlier_map` reproduces inputs on the same grid exactly.
pub const OUTLIER_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

fn snap(v: f64) -> f64 {
    (v / OUTLIER_QUANTUM).round() * OUTLIER_QUANTUM
}

/// Runs the full pipeline with the greedy solver.
pub fn denoise_image(image: &GrayImage, cfg: &RoiConfig) -> Result<DenoiseOutput> {
    let solver = KgardRoiSolver::new(cfg)?;
    denoise_image_with(image, cfg, &solver)
}

/// Runs the pipeline with an arbitrary region solver. Regions are processed
/// in parallel on the current rayon pool and merged by position.
pub fn denoise_image_with<S: RoiSolver + ?Sized>(
    image: &GrayImage,
    cfg: &RoiConfig,
    solver: &S,
) -> Result<DenoiseOutput> {
    let plan = TilePlan::new(image.width(), image.height(), cfg.roi_size, cfg.core_size)?;
    let padded = plan.pad_image(image)?;
    let lmap = lambda_map_padded(&padded, &plan, cfg.lambda0);

    let fits: Vec<(RoiFit, Option<String>)> = plan
        .roi_origins
        .par_iter()
        .enumerate()
        .map(|(k, &origin)| {
            let roi = plan.extract(&padded, origin);
            match solver.solve(&roi, lmap.tiers[k]) {
                Ok(fit) => (fit, None),
                Err(e) => {
                    (PassThrough.solve(&roi, lmap.tiers[k]).expect("pass-through cannot fail"), Some(e.to_string()))
                }
            }
        })
        .collect();

    let (w, h) = (image.width(), image.height());
    let mut denoised = image.clone();
    let mut outlier_map = GrayImage::filled(w, h, 0.0)?;
    let (n, l, pad) = (plan.roi_size, plan.core_size, plan.pad);
    let mut rois = Vec::with_capacity(fits.len());
    for (k, ((r0, c0), (fit, err))) in plan.roi_origins.iter().copied().zip(&fits).enumerate() {
        for i in 0..l {
            for j in 0..l {
                let (r, c) = (r0 + i, c0 + j);
                if r >= h || c >= w {
                    continue;
                }
                let pos = (i + pad) * n + (j + pad);
                denoised.set(r, c, fit.fitted[pos]);
                outlier_map.set(r, c, snap(fit.outliers[pos]));
            }
        }
        rois.push(RoiDiagnostic {
            index: k,
            row: r0,
            col: c0,
            tier: lmap.tiers[k],
            lambda: lmap.lambdas[k],
            mean_gradient: lmap.mean_gradients[k],
            final_epsilon: fit.final_epsilon,
            outliers: fit.outliers.iter().filter(|&&v| v != 0.0).count(),
            iterations: fit.iterations,
            error: err.clone(),
        });
    }
    let impulse_removed =
        GrayImage::new(w, h, image.pixels().iter().zip(outlier_map.pixels()).map(|(&a, &u)| a - u).collect())?;
    let failures = rois.iter().filter(|r| r.error.is_some()).count();
    Ok(DenoiseOutput {
        denoised,
        outlier_map,
        impulse_removed,
        diagnostics: DenoiseDiagnostics {
            config: *cfg,
            width: w,
            height: h,
            gradient_mean: lmap.m,
            gradient_std: lmap.s,
            failures,
            rois,
        },
    })
}

/// `10 log10(255^2 / MSE)`; identical images give `+inf`.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.pixels().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64.powi(2) / mse).log10() })
}

/// Corrupted image and the positions of the injected impulses.
#[derive(Debug, Clone)]
pub struct CorruptedImage {
    pub image: GrayImage,
    /// Row-major pixel indices of the impulses, sorted.
    pub support: Vec<usize>,
}

/// Adds Gaussian noise at `snr_db` (if given; signal power is the mean
/// squared pixel value) and `fraction` of impulses of size `magnitude`.
pub fn corrupt_image(
    image: &GrayImage,
    snr_db: Option<f64>,
    fraction: f64,
    magnitude: f64,
    seed: u64,
) -> Result<CorruptedImage> {
    let inlier = snr_db.map_or(InlierNoise::None, |snr_db| InlierNoise::Gaussian { snr_db });
    let spec = NoiseSpec::new(inlier, fraction, magnitude, seed)?;
    let truth = DVector::from_column_slice(image.pixels());
    let c = corrupt(&truth, &spec)?;
    Ok(CorruptedImage {
        image: GrayImage::new(image.width(), image.height(), c.observations.as_slice().to_vec())?,
        support: c.support,
    })
}
