//! Mergeable Monte Carlo statistics.

use serde::{Deserialize, Serialize};

/// Welford mean/variance of a scalar; [`ScalarStats::merge`] uses Chan's
/// pairwise update so shards combine in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarStats {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

impl ScalarStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    /// Unbiased sample variance (0 with fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for ScalarStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Sums for the ratio estimator `Σe/Σg` over trials, with a delta-method
/// standard error. Used for NMSE, where `e` is squared error and `g` energy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub count: u64,
    pub sum_num: f64,
    pub sum_den: f64,
    pub sum_num_sq: f64,
    pub sum_den_sq: f64,
    pub sum_cross: f64,
}

impl RatioStats {
    pub fn push(&mut self, num: f64, den: f64) {
        self.count += 1;
        self.sum_num += num;
        self.sum_den += den;
        self.sum_num_sq += num * num;
        self.sum_den_sq += den * den;
        self.sum_cross += num * den;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum_num += other.sum_num;
        self.sum_den += other.sum_den;
        self.sum_num_sq += other.sum_num_sq;
        self.sum_den_sq += other.sum_den_sq;
        self.sum_cross += other.sum_cross;
    }

    pub fn ratio(&self) -> f64 {
        self.sum_num / self.sum_den
    }

    /// Delta-method standard error of [`RatioStats::ratio`].
    pub fn ratio_stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let r = self.ratio();
        let mean_den = self.sum_den / n;
        // Σ(e − r·g)², expanded so the sums stay additive.
        let resid = self.sum_num_sq - 2.0 * r * self.sum_cross + r * r * self.sum_den_sq;
        let var = (resid / (n - 1.0)).max(0.0);
        (var / n).sqrt() / mean_den
    }

    pub fn ratio_db(&self) -> f64 {
        10.0 * self.ratio().log10()
    }

    /// Standard error of [`RatioStats::ratio_db`] by first-order propagation.
    pub fn ratio_db_stderr(&self) -> f64 {
        10.0 / std::f64::consts::LN_10 * self.ratio_stderr() / self.ratio()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let s: ScalarStats = xs.iter().copied().collect();
        assert!((s.mean - 5.0).abs() < 1e-15);
        assert!((s.variance() - 32.0 / 7.0).abs() < 1e-12);
        assert!((s.stderr() - (32.0f64 / 7.0 / 8.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn merge_is_exact_for_any_split() {
        let xs: Vec<f64> = (0..50)
            .map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0)
            .collect();
        let whole: ScalarStats = xs.iter().copied().collect();
        for cut in [0, 1, 17, 49, 50] {
            let mut a: ScalarStats = xs[..cut].iter().copied().collect();
            let b: ScalarStats = xs[cut..].iter().copied().collect();
            a.merge(&b);
            assert_eq!(a.count, whole.count);
            assert!((a.mean - whole.mean).abs() < 1e-12);
            assert!((a.variance() - whole.variance()).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_of_proportional_samples_has_zero_error() {
        let mut r = RatioStats::default();
        for g in [1.0, 2.0, 5.0] {
            r.push(0.1 * g, g);
        }
        assert!((r.ratio() - 0.1).abs() < 1e-15);
        assert!(r.ratio_stderr() < 1e-9);
        assert!((r.ratio_db() + 10.0).abs() < 1e-12);
    }
}
