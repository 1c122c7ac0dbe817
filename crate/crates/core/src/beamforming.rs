//! Precoders and the two-stage receive combiner.
//!
//! The first stage `Q` (`K×N_c`) reduces the UE antennas to `N_c` digital
//! chains and is held for a beam-coherence window; the second stage `W`
//! (`N_c×N_s`) maps those chains to streams and is refreshed every block.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{
    frobenius_sq, identity, leading_left, orthonormality_residual, pseudo_inverse, thin_svd,
    water_fill, CMat, PowerAllocation, RANK_TOLERANCE,
};

/// Per-subcarrier beamformers of one block.
#[derive(Debug, Clone)]
pub struct BeamformerState {
    /// `F[ν]`, `M×N_s`.
    pub precoders: Vec<CMat>,
    /// `Q[ν]`, `K×N_c`.
    pub first_stage: Vec<CMat>,
    /// `W[ν]`, `N_c×N_s`.
    pub second_stage: Vec<CMat>,
    /// Water-filling result per subcarrier; empty for MMSE precoding.
    pub power_alloc: Vec<PowerAllocation>,
}

/// Worst-case deviations from the [`BeamformerState`] contracts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StateResiduals {
    /// `max_ν |‖F‖² − P_t| / P_t`.
    pub power: f64,
    /// `max_ν ‖QᴴQ − I‖_max`.
    pub first_stage: f64,
    /// `max_ν ‖WᴴW − I‖_max`.
    pub second_stage: f64,
    /// `max_ν ‖(QW)ᴴ(QW) − I‖_max`.
    pub composite: f64,
}

impl BeamformerState {
    pub fn residuals(&self, p_t: f64) -> StateResiduals {
        let mut r = StateResiduals::default();
        for f in &self.precoders {
            r.power = r.power.max((frobenius_sq(f) - p_t).abs() / p_t);
        }
        for (q, w) in self.first_stage.iter().zip(&self.second_stage) {
            r.first_stage = r.first_stage.max(orthonormality_residual(q));
            r.second_stage = r.second_stage.max(orthonormality_residual(w));
            r.composite = r.composite.max(orthonormality_residual(&(q * w)));
        }
        r
    }
}

/// SVD precoder `F = V_{:,1:N_s}·diag(√P)` with water-filled powers.
pub fn svd_precoder(
    channel_estimate: &CMat,
    n_s: usize,
    p_t: f64,
) -> Result<(CMat, PowerAllocation)> {
    if !(p_t > 0.0) {
        return Err(Error::invalid("transmit power must be positive"));
    }
    let (rows, cols) = channel_estimate.shape();
    if n_s == 0 || n_s > rows.min(cols) {
        return Err(Error::invalid(format!(
            "N_s = {n_s} streams do not fit a {rows}×{cols} channel"
        )));
    }
    let svd = thin_svd(channel_estimate)?;
    let smax = svd.s[0];
    if !(svd.s[n_s - 1] > RANK_TOLERANCE * smax) {
        return Err(Error::RankDeficient {
            requested: n_s,
            singular_values: svd.s.clone(),
        });
    }
    let gains: Vec<f64> = svd.s[..n_s].iter().map(|s| s * s).collect();
    let alloc = water_fill(&gains, p_t)?;
    let mut f = svd.v.columns(0, n_s).into_owned();
    for (j, p) in alloc.per_stream_power.iter().enumerate() {
        f.column_mut(j).scale_mut(p.sqrt());
    }
    Ok((f, alloc))
}

/// First-stage combiner: the `N_c` leading left singular vectors of the
/// precoded estimate `B̂`, completed to an orthonormal set when `B̂` has fewer
/// columns than `N_c`.
pub fn select_first_stage(precoded_estimate: &CMat, n_c: usize) -> Result<CMat> {
    let k = precoded_estimate.nrows();
    if n_c == 0 || n_c > k {
        return Err(Error::invalid(format!(
            "N_c = {n_c} must be in 1..={k} (UE antennas)"
        )));
    }
    let mut q = leading_left(precoded_estimate, n_c)?;
    align_phases(&mut q, std::slice::from_ref(precoded_estimate));
    Ok(q)
}

/// Rotates each combiner column so that its response to the stream it
/// serves, summed over `targets`, is real and positive.
///
/// Column `j` is matched to stream `j mod N_s`, where `N_s` is the column
/// count of each target. Singular vectors are only defined up to a phase;
/// fixing it this way keeps the effective channel `cᴴ·target` coherent
/// across independently designed realisations, which the use-and-then-forget
/// bound relies on.
pub fn align_phases(combiner: &mut CMat, targets: &[CMat]) {
    for j in 0..combiner.ncols() {
        let mut z = Complex64::new(0.0, 0.0);
        for t in targets {
            let k = j % t.ncols();
            z += combiner.column(j).dotc(&t.column(k));
        }
        let mag = z.norm();
        if mag > 0.0 && mag.is_finite() {
            let phase = z / mag;
            for r in 0..combiner.nrows() {
                combiner[(r, j)] *= phase;
            }
        }
    }
}

/// Initial second stage `[I_{N_s}; 0]`.
pub fn init_second_stage(n_c: usize, n_s: usize) -> Result<CMat> {
    if n_s == 0 || n_s > n_c {
        return Err(Error::invalid(format!(
            "N_s = {n_s} must be in 1..={n_c} (N_c)"
        )));
    }
    Ok(CMat::identity(n_c, n_s))
}

/// Second stage: the `N_s` leading left singular vectors of `D̂`.
pub fn update_second_stage(effective_estimate: &CMat, n_s: usize) -> Result<CMat> {
    let n_c = effective_estimate.nrows();
    if n_s == 0 || n_s > n_c {
        return Err(Error::invalid(format!(
            "N_s = {n_s} must be in 1..={n_c} (N_c)"
        )));
    }
    let mut w = leading_left(effective_estimate, n_s)?;
    align_phases(&mut w, std::slice::from_ref(effective_estimate));
    Ok(w)
}

/// Per-user regularised MMSE precoder scaled to `‖F‖² = P_t`.
///
/// The regularised inverse `A = (ĤᴴĤ + μI)⁻¹Ĥᴴ` has one column per receive
/// dimension. When that exceeds `N_s`, `A` is applied to the `N_s` dominant
/// left singular vectors of `Ĥ`, which keeps the strongest channel modes.
/// Returns the precoder and the normalisation `η`.
pub fn mu_mmse_precoder(
    channel_estimate: &CMat,
    mu: f64,
    p_t: f64,
    n_s: usize,
) -> Result<(CMat, f64)> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(
            "regularisation must be finite and non-negative",
        ));
    }
    if !(p_t > 0.0) {
        return Err(Error::invalid("transmit power must be positive"));
    }
    let rows = channel_estimate.nrows();
    if n_s == 0 {
        return Err(Error::invalid("at least one stream is required"));
    }
    let a = if mu == 0.0 {
        pseudo_inverse(channel_estimate)?
    } else {
        // Push-through identity: (ĤᴴĤ + μI)⁻¹Ĥᴴ = Ĥᴴ(ĤĤᴴ + μI)⁻¹; invert
        // whichever Gram matrix is smaller.
        let cols = channel_estimate.ncols();
        let reg = |n| identity(n) * Complex64::new(mu, 0.0);
        let chol_inv = |gram: CMat| {
            crate::numerics::hermitian_part(&gram)
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| Error::invalid("regularised Gram matrix is not positive definite"))
        };
        if rows <= cols {
            channel_estimate.adjoint()
                * chol_inv(channel_estimate * channel_estimate.adjoint() + reg(rows))?
        } else {
            chol_inv(channel_estimate.adjoint() * channel_estimate + reg(cols))?
                * channel_estimate.adjoint()
        }
    };
    let unscaled = if rows > n_s {
        let u = thin_svd(channel_estimate)?.u;
        a * u.columns(0, n_s)
    } else {
        a
    };
    let energy = frobenius_sq(&unscaled);
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::invalid(
            "MMSE precoder vanished; channel estimate is zero",
        ));
    }
    let eta = (p_t / energy).sqrt();
    Ok((unscaled * Complex64::new(eta, 0.0), eta))
}

/// Per-user MMSE precoders of one block.
#[derive(Debug, Clone)]
pub struct MuPrecoderSet {
    /// `precoders[u][ν]`, `M×N_s`.
    pub precoders: Vec<Vec<CMat>>,
    /// `μ = U·σ_n²/P_t` with unit noise power.
    pub regularization: f64,
    /// `normalizations[u][ν] = η_u[ν]`.
    pub normalizations: Vec<Vec<f64>>,
}

/// Regularisation `μ = U/P_t` for `users` simultaneous users.
pub fn mmse_regularization(users: usize, p_t: f64) -> f64 {
    users as f64 / p_t
}

impl MuPrecoderSet {
    /// Builds every user's precoder from per-subcarrier estimates
    /// `estimates[u][ν]`.
    pub fn build(estimates: &[Vec<CMat>], p_t: f64, n_s: usize) -> Result<Self> {
        let mu = mmse_regularization(estimates.len(), p_t);
        let mut precoders = Vec::with_capacity(estimates.len());
        let mut normalizations = Vec::with_capacity(estimates.len());
        for user in estimates {
            let (fs, etas): (Vec<CMat>, Vec<f64>) = user
                .iter()
                .map(|h| mu_mmse_precoder(h, mu, p_t, n_s))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            precoders.push(fs);
            normalizations.push(etas);
        }
        Ok(Self {
            precoders,
            regularization: mu,
            normalizations,
        })
    }
}

/// Vertical concatenation scaled by `1/√n`, used to design one beamformer for
/// a group of subcarriers from the stack of their channels.
pub fn stack_rows(blocks: &[CMat]) -> Result<CMat> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("nothing to stack"))?;
    let (r, c) = first.shape();
    if blocks.iter().any(|b| b.shape() != (r, c)) {
        return Err(Error::invalid("stacked blocks must share a shape"));
    }
    let scale = Complex64::new(1.0 / (blocks.len() as f64).sqrt(), 0.0);
    Ok(CMat::from_fn(r * blocks.len(), c, |i, j| {
        blocks[i / r][(i % r, j)] * scale
    }))
}

/// Horizontal concatenation scaled by `1/√n`.
pub fn stack_cols(blocks: &[CMat]) -> Result<CMat> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("nothing to stack"))?;
    let (r, c) = first.shape();
    if blocks.iter().any(|b| b.shape() != (r, c)) {
        return Err(Error::invalid("stacked blocks must share a shape"));
    }
    let scale = Complex64::new(1.0 / (blocks.len() as f64).sqrt(), 0.0);
    Ok(CMat::from_fn(r, c * blocks.len(), |i, j| {
        blocks[j / c][(i, j % c)] * scale
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn diagonal_channel_precoder_uses_standard_basis() {
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0), c(1.0)]));
        let (f, p) = svd_precoder(&h, 2, 1.0).unwrap();
        // gains [4, 1], budget 1 -> [0.875, 0.125]
        assert!((p.per_stream_power[0] - 0.875).abs() < 1e-12);
        assert!((f[(0, 0)] - c(0.875f64.sqrt())).norm() < 1e-12);
        assert!((f[(1, 1)] - c(0.125f64.sqrt())).norm() < 1e-12);
        assert!(f[(0, 1)].norm() < 1e-12 && f[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn precoder_meets_power_and_rank_contracts() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let h = complex_gaussian(&mut r, 4, 8);
        let (f, _) = svd_precoder(&h, 3, 123.0).unwrap();
        assert!((frobenius_sq(&f) - 123.0).abs() < 1e-9);
        let rank1 = complex_gaussian(&mut r, 4, 1) * complex_gaussian(&mut r, 1, 8);
        assert!(matches!(
            svd_precoder(&rank1, 2, 1.0),
            Err(Error::RankDeficient { requested: 2, .. })
        ));
    }

    #[test]
    fn full_first_stage_is_lossless() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let b = complex_gaussian(&mut r, 4, 2);
        let q = select_first_stage(&b, 4).unwrap();
        assert!(orthonormality_residual(&q) < 1e-12);
        assert!(((q.adjoint() * &b).norm() - b.norm()).abs() < 1e-12);
        assert!(select_first_stage(&b, 5).is_err());
    }

    #[test]
    fn rank_one_first_stage_captures_the_column_space() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let b = complex_gaussian(&mut r, 5, 1) * complex_gaussian(&mut r, 1, 3);
        let q = select_first_stage(&b, 2).unwrap();
        assert!(orthonormality_residual(&q) < 1e-12);
        assert!(((q.adjoint() * &b).norm() - b.norm()).abs() < 1e-9);
    }

    #[test]
    fn second_stage_initial_selector() {
        let w = init_second_stage(4, 3).unwrap();
        assert_eq!(w.shape(), (4, 3));
        assert!(orthonormality_residual(&w) < 1e-15);
        assert_eq!(init_second_stage(2, 2).unwrap(), CMat::identity(2, 2));
        assert!(init_second_stage(2, 3).is_err());
    }

    #[test]
    fn second_stage_update_on_diagonal_estimate() {
        let mut d = CMat::zeros(4, 2);
        d[(0, 0)] = c(3.0);
        d[(1, 1)] = c(1.5);
        let w = update_second_stage(&d, 2).unwrap();
        assert!((w - CMat::identity(4, 2)).norm() < 1e-12);
    }

    #[test]
    fn second_stage_rows_carry_singular_values() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let d = complex_gaussian(&mut r, 4, 3);
        let w = update_second_stage(&d, 2).unwrap();
        assert!(orthonormality_residual(&w) < 1e-12);
        let s = thin_svd(&d).unwrap().s;
        let proj = w.adjoint() * &d;
        for (i, sigma) in s.iter().take(2).enumerate() {
            assert!((proj.row(i).norm() - sigma).abs() < 1e-10);
        }
    }

    #[test]
    fn mmse_large_mu_is_matched_filter() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let h = complex_gaussian(&mut r, 2, 6);
        let smax = thin_svd(&h).unwrap().s[0];
        let (f, _) = mu_mmse_precoder(&h, 1e6 * smax * smax, 1.0, 2).unwrap();
        let mf = h.adjoint();
        let scale = mf.norm() / f.norm();
        assert!((f * c(scale) - &mf).norm() / mf.norm() < 1e-3);
    }

    #[test]
    fn mmse_zero_mu_inverts_a_square_channel() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let h = complex_gaussian(&mut r, 3, 3);
        let (f, eta) = mu_mmse_precoder(&h, 0.0, 2.0, 3).unwrap();
        let prod = &h * &f / c(eta);
        assert!((prod - CMat::identity(3, 3)).norm() < 1e-9);
        let rank1 = complex_gaussian(&mut r, 2, 1) * complex_gaussian(&mut r, 1, 4);
        assert!(mu_mmse_precoder(&rank1, 0.0, 1.0, 2).is_err());
    }

    #[test]
    fn mmse_power_normalisation() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let h = complex_gaussian(&mut r, 4, 8);
        let (f, _) = mu_mmse_precoder(&h, 0.3, 17.0, 2).unwrap();
        assert_eq!(f.shape(), (8, 2));
        assert!((frobenius_sq(&f) - 17.0).abs() < 1e-9);
    }

    #[test]
    fn stacking_scales_energy() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let blocks: Vec<CMat> = (0..4).map(|_| complex_gaussian(&mut r, 2, 3)).collect();
        let mean: f64 = blocks.iter().map(frobenius_sq).sum::<f64>() / 4.0;
        let rows = stack_rows(&blocks).unwrap();
        let cols = stack_cols(&blocks).unwrap();
        assert_eq!(rows.shape(), (8, 3));
        assert_eq!(cols.shape(), (2, 12));
        assert!((frobenius_sq(&rows) - mean).abs() < 1e-12);
        assert!((frobenius_sq(&cols) - mean).abs() < 1e-12);
        assert_eq!(rows[(2, 1)], blocks[1][(0, 1)] * c(0.5));
        assert_eq!(cols[(1, 4)], blocks[1][(1, 1)] * c(0.5));
    }
}
