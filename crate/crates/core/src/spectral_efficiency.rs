//! Spectral efficiency: perfect-CSI rates, the use-and-then-forget (UatF)
//! bound and the pilot-overhead factor `ρ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorKind;
use crate::numerics::{hermitian_part, identity, log2_det_hpd, pseudo_inverse, CMat};

/// Pilot and signalling cost of one coherence block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadModel {
    /// `t_p`.
    pub pilot_len: usize,
    /// `N_s`.
    pub streams: usize,
    /// `t_c`, symbols per coherence block.
    pub block_len_symbols: usize,
    /// Pilot symbols charged per subcarrier.
    pub effective_pilot_fraction: f64,
}

impl OverheadModel {
    /// FD estimation charges the full `t_p` on every subcarrier.
    pub fn fd(t_p: usize, n_s: usize, t_c: usize) -> Self {
        Self {
            pilot_len: t_p,
            streams: n_s,
            block_len_symbols: t_c,
            effective_pilot_fraction: t_p as f64,
        }
    }

    /// TD estimation only occupies `L` of `S` tones: `t_p·L/S` per subcarrier.
    pub fn td(t_p: usize, n_s: usize, t_c: usize, l: usize, s: usize) -> Self {
        Self {
            pilot_len: t_p,
            streams: n_s,
            block_len_symbols: t_c,
            effective_pilot_fraction: t_p as f64 * l as f64 / s as f64,
        }
    }

    pub fn for_estimator(
        kind: EstimatorKind,
        t_p: usize,
        n_s: usize,
        t_c: usize,
        l: usize,
        s: usize,
    ) -> Self {
        match kind {
            EstimatorKind::Fd => Self::fd(t_p, n_s, t_c),
            EstimatorKind::Td => Self::td(t_p, n_s, t_c, l, s),
        }
    }
}

/// `ρ = 1 − (effective pilot cost + N_s)/t_c`.
pub fn overhead_rho(model: &OverheadModel) -> Result<f64> {
    let t_c = model.block_len_symbols as f64;
    let rho = 1.0 - (model.effective_pilot_fraction + model.streams as f64) / t_c;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidConfig(vec![format!(
            "coherence block of {} symbols leaves no room for data after {} pilot and {} stream symbols",
            model.block_len_symbols, model.effective_pilot_fraction, model.streams
        )]));
    }
    Ok(rho)
}

/// `log2 det(I + EᴴE)` for an effective channel with white unit noise.
pub fn rate_of_effective(e: &CMat) -> Result<f64> {
    log2_det_hpd(&(identity(e.ncols()) + e.adjoint() * e))
}

/// Perfect-CSI rate of one subcarrier:
/// `log2 det(I + (QW)†HFFᴴHᴴ(QW)†ᴴ)`.
pub fn se_perfect_subcarrier(h: &CMat, f: &CMat, q: &CMat, w: &CMat) -> Result<f64> {
    let u = q * w;
    // Left pseudo-inverse of the tall composite combiner.
    let u_pinv = pseudo_inverse(&u.adjoint())?.adjoint();
    let e = u_pinv * h * f;
    log2_det_hpd(&(identity(e.nrows()) + &e * e.adjoint()))
}

/// `(ρ/S)·Σ_ν R[ν]` over all subcarriers.
pub fn se_perfect(h: &[CMat], f: &[CMat], q: &[CMat], w: &[CMat], rho: f64) -> Result<f64> {
    let s = h.len();
    if s == 0 || f.len() != s || q.len() != s || w.len() != s {
        return Err(Error::invalid(
            "per-subcarrier inputs must have equal, nonzero lengths",
        ));
    }
    let mut total = 0.0;
    for nu in 0..s {
        total += se_perfect_subcarrier(&h[nu], &f[nu], &q[nu], &w[nu])?;
    }
    Ok(rho * total / s as f64)
}

/// Mean effective channel and the UatF noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannelStats {
    /// `Ē`, `N_s×N_s`.
    pub mean_channel: CMat,
    /// `C = Cov{E·s} + I`.
    pub noise_covariance: CMat,
    pub sample_count: usize,
}

/// Streaming mean and scatter `Σ(E−Ē)(E−Ē)ᴴ` of effective-channel samples.
///
/// Updates follow Welford; [`MomentAccumulator::merge`] follows Chan et al.,
/// so partial accumulators from disjoint shards combine exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: usize,
    mean: CMat,
    scatter: CMat,
}

impl MomentAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            count: 0,
            mean: CMat::zeros(rows, cols),
            scatter: CMat::zeros(rows, rows),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &CMat) {
        self.count += 1;
        let delta = sample - &self.mean;
        self.mean += &delta / Complex64::new(self.count as f64, 0.0);
        let after = sample - &self.mean;
        self.scatter += delta * after.adjoint();
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.scatter +=
            &other.scatter + &delta * delta.adjoint() * Complex64::new(na * nb / n, 0.0);
        self.mean += delta * Complex64::new(nb / n, 0.0);
        self.count += other.count;
    }

    /// Sample statistics with the unbiased `1/(n−1)` covariance.
    pub fn finalize(&self) -> Result<EffectiveChannelStats> {
        if self.count < 2 {
            return Err(Error::DegenerateStatistics(format!(
                "{} effective-channel sample(s); at least two are needed",
                self.count
            )));
        }
        let cov = &self.scatter / Complex64::new((self.count - 1) as f64, 0.0);
        Ok(EffectiveChannelStats {
            mean_channel: self.mean.clone(),
            noise_covariance: hermitian_part(&(cov + identity(self.mean.nrows()))),
            sample_count: self.count,
        })
    }
}

/// Sample statistics of a batch of effective channels `E = WᴴD`.
pub fn effective_stats(samples: &[CMat]) -> Result<EffectiveChannelStats> {
    let first = samples
        .first()
        .ok_or_else(|| Error::DegenerateStatistics("no effective-channel samples".into()))?;
    let mut acc = MomentAccumulator::new(first.nrows(), first.ncols());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::invalid("effective-channel samples differ in shape"));
        }
        acc.push(s);
    }
    acc.finalize()
}

/// Running mean of `XXᴴ` for one interfering user.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentAccumulator {
    count: usize,
    sum: CMat,
}

impl SecondMomentAccumulator {
    pub fn new(rows: usize) -> Self {
        Self {
            count: 0,
            sum: CMat::zeros(rows, rows),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: &CMat) {
        self.count += 1;
        self.sum += sample * sample.adjoint();
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += &other.sum;
    }

    pub fn finalize(&self) -> Result<InterferenceMoment> {
        if self.count == 0 {
            return Err(Error::DegenerateStatistics(
                "no interference samples".into(),
            ));
        }
        Ok(InterferenceMoment {
            second_moment: hermitian_part(&(&self.sum / Complex64::new(self.count as f64, 0.0))),
            sample_count: self.count,
        })
    }
}

/// `E{E_{u,i}E_{u,i}ᴴ}` for one interferer `i` seen by user `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMoment {
    pub second_moment: CMat,
    pub sample_count: usize,
}

fn uatf_rate_with(mean: &CMat, covariance: &CMat) -> Result<f64> {
    let chol = hermitian_part(covariance)
        .cholesky()
        .ok_or_else(|| Error::invalid("UatF noise covariance is not positive definite"))?;
    let whitened = chol
        .l()
        .solve_lower_triangular(mean)
        .ok_or(Error::Singular { ratio: 0.0 })?;
    rate_of_effective(&whitened)
}

/// `log2 det(I + ĒᴴC⁻¹Ē)`.
pub fn uatf_su_rate(stats: &EffectiveChannelStats) -> Result<f64> {
    uatf_rate_with(&stats.mean_channel, &stats.noise_covariance)
}

/// UatF rate of one user with the other users' effective channels treated
/// as extra noise: `C_u = C + Σ_{i≠u} E{E_{u,i}E_{u,i}ᴴ}`.
pub fn uatf_mu_rate(
    desired: &EffectiveChannelStats,
    interference: &[InterferenceMoment],
) -> Result<f64> {
    let mut c = desired.noise_covariance.clone();
    for term in interference {
        if term.sample_count != desired.sample_count {
            return Err(Error::invalid(format!(
                "interference estimated on {} samples, desired signal on {}",
                term.sample_count, desired.sample_count
            )));
        }
        if term.second_moment.shape() != c.shape() {
            return Err(Error::invalid(
                "interference moment shape differs from the noise covariance",
            ));
        }
        c += &term.second_moment;
    }
    uatf_rate_with(&desired.mean_channel, &c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rho_examples() {
        let fd = overhead_rho(&OverheadModel::fd(16, 3, 100)).unwrap();
        assert!((fd - 0.81).abs() < 1e-12);
        let td = OverheadModel::td(16, 3, 100, 6, 512);
        assert!((td.effective_pilot_fraction - 0.1875).abs() < 1e-15);
        assert!(overhead_rho(&td).unwrap() > fd);
        assert!(matches!(
            overhead_rho(&OverheadModel::fd(16, 3, 19)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_precoder_gives_zero_rate() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let h = vec![complex_gaussian(&mut r, 4, 8)];
        let f = vec![CMat::zeros(8, 2)];
        let q = vec![CMat::identity(4, 3)];
        let w = vec![CMat::identity(3, 2)];
        assert_eq!(se_perfect(&h, &f, &q, &w, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_channel_has_identity_covariance() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let e = complex_gaussian(&mut r, 2, 2);
        let stats = effective_stats(&[e.clone(), e.clone(), e.clone()]).unwrap();
        assert!((&stats.noise_covariance - identity(2)).norm() < 1e-15);
        let uatf = uatf_su_rate(&stats).unwrap();
        assert!((uatf - rate_of_effective(&e).unwrap()).abs() < 1e-12);
        assert!(effective_stats(&[e]).is_err());
    }

    #[test]
    fn scalar_covariance_is_variance_plus_one() {
        let samples: Vec<CMat> = [1.0, 3.0, 2.0, 6.0]
            .iter()
            .map(|&x| CMat::from_element(1, 1, Complex64::new(x, 0.0)))
            .collect();
        let stats = effective_stats(&samples).unwrap();
        // mean 3, unbiased variance (4 + 0 + 1 + 9)/3
        assert!((stats.mean_channel[(0, 0)].re - 3.0).abs() < 1e-14);
        assert!((stats.noise_covariance[(0, 0)].re - (14.0 / 3.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_gives_zero_rate() {
        let z = CMat::zeros(2, 2);
        let stats = EffectiveChannelStats {
            mean_channel: z,
            noise_covariance: identity(2) * Complex64::new(3.0, 0.0),
            sample_count: 10,
        };
        assert_eq!(uatf_su_rate(&stats).unwrap(), 0.0);
    }

    #[test]
    fn merged_accumulators_match_a_single_pass() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<CMat> = (0..37).map(|_| complex_gaussian(&mut r, 3, 2)).collect();
        let mut whole = MomentAccumulator::new(3, 2);
        samples.iter().for_each(|s| whole.push(s));
        let mut a = MomentAccumulator::new(3, 2);
        let mut b = MomentAccumulator::new(3, 2);
        samples[..15].iter().for_each(|s| a.push(s));
        samples[15..].iter().for_each(|s| b.push(s));
        a.merge(&b);
        let (x, y) = (whole.finalize().unwrap(), a.finalize().unwrap());
        assert!((x.mean_channel - y.mean_channel).norm() < 1e-12);
        assert!((x.noise_covariance - y.noise_covariance).norm() < 1e-12);
    }

    #[test]
    fn single_user_mu_rate_equals_su_rate() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<CMat> = (0..50).map(|_| complex_gaussian(&mut r, 2, 2)).collect();
        let stats = effective_stats(&samples).unwrap();
        assert_eq!(
            uatf_mu_rate(&stats, &[]).unwrap(),
            uatf_su_rate(&stats).unwrap()
        );
    }

    #[test]
    fn interference_lowers_the_rate_and_counts_must_match() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let bias = complex_gaussian(&mut r, 2, 2) * Complex64::new(3.0, 0.0);
        let samples: Vec<CMat> = (0..40)
            .map(|_| &bias + complex_gaussian(&mut r, 2, 2))
            .collect();
        let stats = effective_stats(&samples).unwrap();
        let mut acc = SecondMomentAccumulator::new(2);
        for _ in 0..40 {
            acc.push(&complex_gaussian(&mut r, 2, 2));
        }
        let interference = acc.finalize().unwrap();
        assert!(
            uatf_mu_rate(&stats, std::slice::from_ref(&interference)).unwrap() < uatf_su_rate(&stats).unwrap()
        );
        let mut short = interference;
        short.sample_count = 39;
        assert!(uatf_mu_rate(&stats, &[short]).is_err());
    }

    #[test]
    fn uatf_is_invariant_to_a_common_rotation() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let bias = complex_gaussian(&mut r, 3, 3);
        let samples: Vec<CMat> = (0..30)
            .map(|_| &bias + complex_gaussian(&mut r, 3, 3))
            .collect();
        let unitary = crate::numerics::svd(&complex_gaussian(&mut r, 3, 3))
            .unwrap()
            .left_vectors;
        let rotated: Vec<CMat> = samples.iter().map(|s| &unitary * s).collect();
        let a = uatf_su_rate(&effective_stats(&samples).unwrap()).unwrap();
        let b = uatf_su_rate(&effective_stats(&rotated).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
