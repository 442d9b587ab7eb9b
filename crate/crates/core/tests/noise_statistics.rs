use kgard::noise::{
    corrupt, corrupt_with, lattice_sparsity_range, make_lattice_dataset, make_sinc_dataset, seeded_rng, InlierNoise,
    NoiseSpec, SparsityBase, StableParams,
};
use nalgebra::DVector;

#[test]
fn empirical_snr_matches_request() {
    let truth = make_sinc_dataset().train.targets;
    let power = truth.norm_squared() / truth.len() as f64;
    let spec = NoiseSpec::new(InlierNoise::Gaussian { snr_db: 20.0 }, 0.0, 0.0, 0).unwrap();
    let mut rng = seeded_rng(11);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    while count < 100_000 {
        let c = corrupt_with(&truth, &spec, &mut rng).unwrap();
        sum_sq += c.inlier_noise.norm_squared();
        count += truth.len();
    }
    let snr = 10.0 * (power / (sum_sq / count as f64)).log10();
    assert!((19.5..=20.5).contains(&snr), "{snr}");
}

#[test]
fn support_is_uniform() {
    let truth = DVector::zeros(100);
    let spec = NoiseSpec::new(InlierNoise::None, 0.1, 1.0, 0).unwrap();
    let mut rng = seeded_rng(12);
    let mut hits = [0usize; 100];
    let draws = 10_000;
    for _ in 0..draws {
        let c = corrupt_with(&truth, &spec, &mut rng).unwrap();
        assert_eq!(c.support.len(), 10);
        for j in c.support {
            hits[j] += 1;
        }
    }
    for (j, &h) in hits.iter().enumerate() {
        let f = h as f64 / draws as f64;
        assert!((f - 0.10).abs() <= 0.01, "index {j}: {f}");
    }
}

#[test]
fn signs_are_balanced() {
    let truth = DVector::zeros(200);
    let spec = NoiseSpec::new(InlierNoise::None, 0.25, 3.0, 0).unwrap();
    let mut rng = seeded_rng(13);
    let (mut pos, mut total) = (0usize, 0usize);
    for _ in 0..2000 {
        let c = corrupt_with(&truth, &spec, &mut rng).unwrap();
        pos += c.support.iter().filter(|&&j| c.outliers[j] > 0.0).count();
        total += c.support.len();
    }
    let p = pos as f64 / total as f64;
    assert!((p - 0.5).abs() < 0.01, "{p}");
}

#[test]
fn stable_with_exponent_two_is_gaussian() {
    let p = StableParams::new(2.0, 1.0).unwrap();
    let mut rng = seeded_rng(14);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| p.sample(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    let excess = m4 / (m2 * m2) - 3.0;
    assert!(excess.abs() <= 0.1, "{excess}");
    // Scale gamma at alpha = 2 gives variance 2 gamma^2.
    assert!((m2 - 2.0).abs() < 0.02, "{m2}");
}

#[test]
fn rounding_of_impulse_count() {
    let truth = DVector::zeros(199);
    let c = corrupt(&truth, &NoiseSpec::new(InlierNoise::None, 0.1, 15.0, 4).unwrap()).unwrap();
    assert_eq!(c.support.len(), 20);
    assert!(c.support.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn too_many_impulses_rejected() {
    let truth = DVector::zeros(3);
    assert!(corrupt(
        &truth,
        &NoiseSpec { inlier: InlierNoise::None, impulse_fraction: 0.9, impulse_magnitude: 1.0, seed: 0 }
    )
    .is_err());
}

#[test]
fn lattice_draws_are_seeded_and_sparse() {
    let a = make_lattice_dataset(&mut seeded_rng(21));
    let b = make_lattice_dataset(&mut seeded_rng(21));
    assert_eq!(a.true_alpha, b.true_alpha);
    assert_eq!(a.data.train.targets, b.data.train.targets);
    let (lo, hi) = lattice_sparsity_range(SparsityBase::Training);
    for seed in 0..50 {
        let nnz = make_lattice_dataset(&mut seeded_rng(seed)).true_alpha.iter().filter(|&&v| v != 0.0).count();
        assert!((lo..=hi).contains(&nnz), "{nnz}");
    }
    assert_eq!(lattice_sparsity_range(SparsityBase::Lattice), (39, 168));
}
