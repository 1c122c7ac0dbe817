//! Rate-formula invariants and mergeable statistics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twostage_dbf::harness::stats::{RatioStats, ScalarStats};
use twostage_dbf::numerics::{complex_gaussian, svd, CMat};
use twostage_dbf::spectral_efficiency::{
    effective_stats, uatf_su_rate, EffectiveChannelStats, MomentAccumulator,
};

fn unitary(seed: u64, n: usize) -> CMat {
    svd(&complex_gaussian(
        &mut ChaCha8Rng::seed_from_u64(seed),
        n,
        n,
    ))
    .unwrap()
    .left_vectors
}

proptest! {
    #[test]
    fn uatf_rate_is_invariant_to_unitary_rotations(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = complex_gaussian(&mut rng, n, n);
        let a = complex_gaussian(&mut rng, n, n);
        let cov = CMat::identity(n, n) + &a * a.adjoint();
        let (u, v) = (unitary(seed ^ 1, n), unitary(seed ^ 2, n));
        let base = EffectiveChannelStats { mean_channel: mean.clone(), noise_covariance: cov.clone(), sample_count: 1 };
        let rotated = EffectiveChannelStats {
            mean_channel: &u * mean * &v,
            noise_covariance: &u * cov * u.adjoint(),
            sample_count: 1,
        };
        let (r0, r1) = (uatf_su_rate(&base).unwrap(), uatf_su_rate(&rotated).unwrap());
        prop_assert!((r0 - r1).abs() < 1e-9 * r0.max(1.0));
    }

    #[test]
    fn scalar_stats_merge_matches_one_pass(xs in prop::collection::vec(-1e3f64..1e3, 0..60), cut in 0usize..60) {
        let cut = cut.min(xs.len());
        let whole: ScalarStats = xs.iter().copied().collect();
        let mut left: ScalarStats = xs[..cut].iter().copied().collect();
        left.merge(&xs[cut..].iter().copied().collect());
        prop_assert_eq!(left.count, whole.count);
        prop_assert!((left.mean - whole.mean).abs() < 1e-9);
        prop_assert!((left.m2 - whole.m2).abs() < 1e-6 * whole.m2.max(1.0));
    }

    #[test]
    fn ratio_stats_merge_matches_one_pass(pairs in prop::collection::vec((0f64..10.0, 0.1f64..10.0), 1..40), cut in 0usize..40) {
        let cut = cut.min(pairs.len());
        let mut whole = RatioStats::default();
        let (mut a, mut b) = (RatioStats::default(), RatioStats::default());
        for (i, &(e, g)) in pairs.iter().enumerate() {
            whole.push(e, g);
            if i < cut { a.push(e, g) } else { b.push(e, g) }
        }
        a.merge(&b);
        prop_assert!((a.ratio() - whole.ratio()).abs() < 1e-12 * whole.ratio().max(1.0));
    }

    #[test]
    fn moment_accumulator_merge_matches_batch(seed in any::<u64>(), count in 2usize..30, cut in 1usize..29) {
        let cut = cut.min(count - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<CMat> = (0..count).map(|_| complex_gaussian(&mut rng, 2, 2)).collect();
        let batch = effective_stats(&samples).unwrap();
        let mut a = MomentAccumulator::new(2, 2);
        let mut b = MomentAccumulator::new(2, 2);
        samples[..cut].iter().for_each(|s| a.push(s));
        samples[cut..].iter().for_each(|s| b.push(s));
        a.merge(&b);
        let merged = a.finalize().unwrap();
        prop_assert!((merged.mean_channel - batch.mean_channel).norm() < 1e-10);
        prop_assert!((merged.noise_covariance - batch.noise_covariance).norm() < 1e-10);
    }
}

#[test]
fn deterministic_channel_gives_shannon_rate() {
    // A constant effective channel has no self-interference, so UatF equals
    // the perfect-CSI rate of diag(g).
    let e = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(2.0, 0.0),
        Complex64::new(0.0, 1.0),
    ]));
    let stats = effective_stats(&[e.clone(), e.clone(), e]).unwrap();
    assert!((uatf_su_rate(&stats).unwrap() - (5f64.log2() + 2f64.log2())).abs() < 1e-12);
}
