//! Pilot books and channel estimators.
//!
//! Frequency-domain (FD) estimation observes every subcarrier and applies the
//! ML de-piloting `Y·Φ†/scale` per tone. Time-domain (TD) estimation observes
//! only a few equally spaced tones, solves for the channel taps and
//! re-synthesises all subcarriers from them.

use std::fmt;
use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::twiddle;
use crate::error::{Error, Result};
use crate::numerics::{complex_gaussian, dft_matrix, frobenius_sq, pseudo_inverse, svd, CMat};

/// Largest acceptable condition number of a pilot-to-tap conversion matrix.
pub const CONDITION_LIMIT: f64 = 1e8;

/// NMSE reported when the estimate is exact.
pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Fd,
    Td,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Fd => "fd",
            EstimatorKind::Td => "td",
        })
    }
}

/// Uplink and downlink pilot matrices plus TD tone offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    /// `K×t_p`, orthonormal rows.
    pub uplink_full: CMat,
    /// `N_c×t_p`, orthonormal rows.
    pub uplink_effective: CMat,
    /// `N_s×N_s` unitary.
    pub downlink: CMat,
    /// One TD tone-grid offset per transmit index.
    pub td_offsets: Vec<usize>,
}

impl PilotBook {
    pub fn pilot_len(&self) -> usize {
        self.uplink_full.ncols()
    }
}

/// Number of disjoint equally spaced tone grids of `l` tones among `s`.
///
/// Bounded by `⌈S/L⌉`, by the room left after the last rounded index, and by
/// the smallest gap between consecutive indices.
pub fn td_offset_capacity(s: usize, l: usize) -> usize {
    if l == 0 || l > s {
        return 0;
    }
    let base: Vec<usize> = (0..l).map(|i| rounded_position(s, l, i)).collect();
    let mut cap = s.div_ceil(l).min(s - base[l - 1]);
    for w in base.windows(2) {
        cap = cap.min(w[1] - w[0]);
    }
    cap
}

/// `round(s·i/l)` with halves rounded up, in exact integer arithmetic.
fn rounded_position(s: usize, l: usize, i: usize) -> usize {
    (2 * s * i + l) / (2 * l)
}

/// Builds the pilot books: uplink rows are the leading rows of the unitary
/// `t_p`-point DFT, the downlink book is the unitary `N_s`-point DFT.
pub fn make_pilot_books(
    k: usize,
    n_c: usize,
    n_s: usize,
    t_p: usize,
    s: usize,
    l: usize,
) -> Result<PilotBook> {
    if k == 0 || n_c == 0 || n_s == 0 {
        return Err(Error::invalid("antenna and stream counts must be positive"));
    }
    if t_p < k.max(n_c) {
        return Err(Error::invalid(format!(
            "pilot length {t_p} is shorter than max(K, N_c) = {}; orthonormal rows are impossible",
            k.max(n_c)
        )));
    }
    if l == 0 || l > s {
        return Err(Error::invalid(format!("tap count {l} must be in 1..={s}")));
    }
    let capacity = td_offset_capacity(s, l);
    if k > capacity {
        return Err(Error::PilotCapacity {
            requested: k,
            available: capacity,
            subcarriers: s,
            taps: l,
        });
    }
    let unitary =
        |n: usize| -> Result<CMat> { Ok(dft_matrix(n)? / Complex64::new((n as f64).sqrt(), 0.0)) };
    let full = unitary(t_p)?;
    Ok(PilotBook {
        uplink_full: full.rows(0, k).into_owned(),
        uplink_effective: full.rows(0, n_c).into_owned(),
        downlink: unitary(n_s)?,
        td_offsets: (0..k).collect(),
    })
}

/// `scale·transfer·Φ + N` with `N` i.i.d. `CN(0,1)`; `noise = None` gives the
/// noiseless observation.
pub fn simulate_pilot_rx<R: Rng + ?Sized>(
    transfer: &CMat,
    phi: &CMat,
    scale: f64,
    noise: Option<&mut R>,
) -> CMat {
    let mut y = transfer * phi * Complex64::new(scale, 0.0);
    if let Some(rng) = noise {
        y += complex_gaussian(rng, y.nrows(), y.ncols());
    }
    y
}

/// Uplink pilot reception `Y = √(P_r·t_p)·chᵀ·Φ + N` for one subcarrier.
pub fn simulate_uplink_pilot_rx<R: Rng + ?Sized>(
    channel: &CMat,
    phi: &CMat,
    p_r: f64,
    noise: Option<&mut R>,
) -> CMat {
    let scale = (p_r * phi.ncols() as f64).sqrt();
    simulate_pilot_rx(&channel.transpose(), phi, scale, noise)
}

/// ML de-piloting `Y·Φ†/scale`.
pub fn ml_depilot(y: &CMat, phi: &CMat, scale: f64) -> Result<CMat> {
    if !(scale > 0.0) {
        return Err(Error::invalid("de-piloting scale must be positive"));
    }
    if y.ncols() != phi.ncols() {
        return Err(Error::invalid(
            "received block and pilot matrix lengths differ",
        ));
    }
    Ok(y * pseudo_inverse(phi)? / Complex64::new(scale, 0.0))
}

/// Which side of the link transmits the pilots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    /// The UE transmits; the BS observes the transposed channel.
    Uplink,
    /// The BS transmits through its precoder; the UE observes directly.
    Downlink,
}

/// A pilot exchange with its de-piloting matrix precomputed.
#[derive(Debug, Clone)]
pub struct PilotLink {
    direction: LinkDirection,
    phi: CMat,
    phi_pinv: CMat,
    scale: f64,
}

impl PilotLink {
    /// Uplink with receive SNR `p_r` per pilot symbol: scale `√(P_r·t_p)`.
    pub fn uplink(phi: &CMat, p_r: f64) -> Result<Self> {
        if !(p_r > 0.0) {
            return Err(Error::invalid("uplink pilot power must be positive"));
        }
        Self::new(
            LinkDirection::Uplink,
            phi,
            (p_r * phi.ncols() as f64).sqrt(),
        )
    }

    /// Downlink through a precoder: scale `√N_s`, the precoder carries `P_t`.
    pub fn downlink(phi: &CMat) -> Result<Self> {
        Self::new(LinkDirection::Downlink, phi, (phi.nrows() as f64).sqrt())
    }

    fn new(direction: LinkDirection, phi: &CMat, scale: f64) -> Result<Self> {
        Ok(Self {
            direction,
            phi: phi.clone(),
            phi_pinv: pseudo_inverse(phi)?,
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Per-entry variance of the estimation error at power boost `boost`.
    pub fn error_variance(&self, boost: f64) -> f64 {
        let g = self.phi_pinv.adjoint() * &self.phi_pinv;
        let mean_diag = (0..g.nrows()).map(|i| g[(i, i)].re).sum::<f64>() / g.nrows() as f64;
        mean_diag / (self.scale * self.scale * boost)
    }

    /// Transmits pilots over `target` with per-tone power multiplied by
    /// `boost` and returns the ML estimate of `target` in its own orientation.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        target: &CMat,
        boost: f64,
        noise: Option<&mut R>,
    ) -> CMat {
        let scale = self.scale * boost.sqrt();
        let inv = Complex64::new(1.0 / scale, 0.0);
        match self.direction {
            LinkDirection::Uplink => {
                let y = simulate_pilot_rx(&target.transpose(), &self.phi, scale, noise);
                (y * &self.phi_pinv * inv).transpose()
            }
            LinkDirection::Downlink => {
                let y = simulate_pilot_rx(target, &self.phi, scale, noise);
                y * &self.phi_pinv * inv
            }
        }
    }
}

/// FD estimation: every subcarrier is observed at unit boost.
pub fn estimate_fd<R: Rng + ?Sized>(link: &PilotLink, truth: &[CMat], rng: &mut R) -> Vec<CMat> {
    truth
        .iter()
        .map(|h| link.observe(h, 1.0, Some(&mut *rng)))
        .collect()
}

/// TD estimation under equal total pilot energy: only the plan's pilot tones
/// are observed, each with power boosted by `S / pilot_count`.
pub fn estimate_td<R: Rng + ?Sized>(
    link: &PilotLink,
    plan: &TdPlan,
    truth: &[CMat],
    rng: &mut R,
) -> Result<Vec<CMat>> {
    if truth.len() != plan.num_subcarriers {
        return Err(Error::invalid("channel length differs from the TD plan"));
    }
    let boost = plan.energy_boost();
    let tones: Vec<CMat> = plan
        .pilot_tones()
        .into_iter()
        .map(|nu| link.observe(&truth[nu], boost, Some(&mut *rng)))
        .collect();
    plan.reconstruct(&tones)
}

/// Equally spaced pilot tones `offset + round(S·ℓ/L)`.
pub fn td_pilot_indices(s: usize, l: usize, offset: usize) -> Result<Vec<usize>> {
    if l == 0 || l > s {
        return Err(Error::invalid(format!("tap count {l} must be in 1..={s}")));
    }
    let capacity = td_offset_capacity(s, l);
    if offset >= capacity {
        return Err(Error::invalid(format!(
            "pilot offset {offset} out of range; {capacity} offsets fit S = {s}, L = {l}"
        )));
    }
    Ok((0..l).map(|i| offset + rounded_position(s, l, i)).collect())
}

/// Reconstruction of one contiguous band from its pilot tones.
#[derive(Debug, Clone)]
struct BandPlan {
    targets: Range<usize>,
    pilots: Vec<usize>,
    /// Row `ν - targets.start` holds the weights of each pilot tone.
    weights: CMat,
}

impl BandPlan {
    fn new(s: usize, taps: usize, pilots: Vec<usize>, targets: Range<usize>) -> Result<Self> {
        let a = CMat::from_fn(taps, taps, |i, l| twiddle(l, pilots[i], s));
        let sv = svd(&a)?.singular_values;
        let condition = sv[0] / sv[taps - 1];
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::IllConditionedPilots {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
        let a_inv = pseudo_inverse(&a)?;
        let f = CMat::from_fn(targets.len(), taps, |r, l| twiddle(l, targets.start + r, s));
        Ok(Self {
            targets,
            pilots,
            weights: f * a_inv,
        })
    }
}

/// Precomputed TD reconstruction for a full band or a set of subbands.
///
/// Taps are always expressed in the global `S`-point basis, so a response
/// that is an `L`-tap channel times a matrix held constant per band is
/// reconstructed exactly inside that band.
#[derive(Debug, Clone)]
pub struct TdPlan {
    num_subcarriers: usize,
    bands: Vec<BandPlan>,
}

impl TdPlan {
    /// One band with `l` pilots spread over all `s` subcarriers.
    pub fn full_band(s: usize, l: usize, offset: usize) -> Result<Self> {
        let pilots = td_pilot_indices(s, l, offset)?;
        Ok(Self {
            num_subcarriers: s,
            bands: vec![BandPlan::new(s, l, pilots, 0..s)?],
        })
    }

    /// Arbitrary pilot indices over the full band (conversion matrix built
    /// from the indices as given).
    pub fn from_indices(s: usize, pilots: &[usize]) -> Result<Self> {
        let l = pilots.len();
        if l == 0 || l > s || pilots.iter().any(|&p| p >= s) {
            return Err(Error::invalid(
                "pilot indices must be non-empty and below S",
            ));
        }
        Ok(Self {
            num_subcarriers: s,
            bands: vec![BandPlan::new(s, l, pilots.to_vec(), 0..s)?],
        })
    }

    /// `n_sub` equal subbands, each with `l_eff` pilots at
    /// `b·S_sub + offset + round(S_sub·i/L_eff)`.
    pub fn subbands(s: usize, n_sub: usize, l_eff: usize, offset: usize) -> Result<Self> {
        if n_sub == 0 || !s.is_multiple_of(n_sub) {
            return Err(Error::invalid(format!(
                "S = {s} is not divisible by N_sub = {n_sub}"
            )));
        }
        let s_sub = s / n_sub;
        if l_eff == 0 || l_eff > s_sub {
            return Err(Error::invalid(format!(
                "L_eff = {l_eff} must be in 1..={s_sub} (subband width)"
            )));
        }
        let local = td_pilot_indices(s_sub, l_eff, offset)?;
        let bands = (0..n_sub)
            .map(|b| {
                let start = b * s_sub;
                let pilots = local.iter().map(|p| start + p).collect();
                BandPlan::new(s, l_eff, pilots, start..start + s_sub)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_subcarriers: s,
            bands,
        })
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    /// Pilot tones in observation order (band by band).
    pub fn pilot_tones(&self) -> Vec<usize> {
        self.bands
            .iter()
            .flat_map(|b| b.pilots.iter().copied())
            .collect()
    }

    pub fn pilot_count(&self) -> usize {
        self.bands.iter().map(|b| b.pilots.len()).sum()
    }

    /// Per-tone power gain that keeps total pilot energy equal to FD.
    pub fn energy_boost(&self) -> f64 {
        self.num_subcarriers as f64 / self.pilot_count() as f64
    }

    /// Band ranges, in order.
    pub fn band_ranges(&self) -> Vec<Range<usize>> {
        self.bands.iter().map(|b| b.targets.clone()).collect()
    }

    /// Rebuilds all `S` subcarriers from per-tone estimates given in
    /// [`TdPlan::pilot_tones`] order.
    pub fn reconstruct(&self, tone_estimates: &[CMat]) -> Result<Vec<CMat>> {
        if tone_estimates.len() != self.pilot_count() {
            return Err(Error::invalid(format!(
                "expected {} pilot-tone estimates, got {}",
                self.pilot_count(),
                tone_estimates.len()
            )));
        }
        let (r, c) = tone_estimates[0].shape();
        if tone_estimates.iter().any(|t| t.shape() != (r, c)) {
            return Err(Error::invalid(
                "pilot-tone estimates have inconsistent shapes",
            ));
        }
        let mut out = Vec::with_capacity(self.num_subcarriers);
        let mut cursor = 0;
        for band in &self.bands {
            let obs = &tone_estimates[cursor..cursor + band.pilots.len()];
            cursor += band.pilots.len();
            for row in 0..band.targets.len() {
                let mut h = CMat::zeros(r, c);
                for (i, x) in obs.iter().enumerate() {
                    h += x * band.weights[(row, i)];
                }
                out.push(h);
            }
        }
        Ok(out)
    }
}

/// TD reconstruction from per-tone estimates at arbitrary `indices`: solves
/// for `indices.len()` taps and synthesises all `s` subcarriers.
pub fn td_estimate(tone_estimates: &[CMat], indices: &[usize], s: usize) -> Result<Vec<CMat>> {
    TdPlan::from_indices(s, indices)?.reconstruct(tone_estimates)
}

/// Subband TD reconstruction of an effective channel whose precoder and
/// combiners are constant inside each of the `n_sub` subbands.
pub fn td_estimate_effective(
    tone_estimates: &[CMat],
    n_sub: usize,
    l_eff: usize,
    s: usize,
    offset: usize,
) -> Result<Vec<CMat>> {
    TdPlan::subbands(s, n_sub, l_eff, offset)?.reconstruct(tone_estimates)
}

/// Squared error and energy sums of one estimate, mergeable across trials.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorEnergy {
    pub error: f64,
    pub energy: f64,
}

impl ErrorEnergy {
    pub fn of(estimate: &[CMat], truth: &[CMat]) -> Result<Self> {
        if estimate.len() != truth.len() {
            return Err(Error::invalid("estimate and truth have different lengths"));
        }
        let mut out = Self::default();
        for (e, t) in estimate.iter().zip(truth) {
            if e.shape() != t.shape() {
                return Err(Error::invalid("estimate and truth shapes differ"));
            }
            out.error += frobenius_sq(&(e - t));
            out.energy += frobenius_sq(t);
        }
        Ok(out)
    }
}

/// `10·log10(Σ‖Ĥ−H‖² / Σ‖H‖²)` over a batch, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db(batch: &[ErrorEnergy]) -> Result<f64> {
    let error: f64 = batch.iter().map(|b| b.error).sum();
    let energy: f64 = batch.iter().map(|b| b.energy).sum();
    if !(energy > 0.0) {
        return Err(Error::invalid("NMSE of a zero-energy channel"));
    }
    if error == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (error / energy).log10()).max(NMSE_FLOOR_DB))
}

/// NMSE of a single estimate.
pub fn nmse(estimate: &[CMat], truth: &[CMat]) -> Result<f64> {
    nmse_db(&[ErrorEnergy::of(estimate, truth)?])
}

/// Pilot symbols spent on one full-band estimate.
pub fn pilot_symbols_spent(method: EstimatorKind, t_p: usize, s: usize, l: usize) -> usize {
    match method {
        EstimatorKind::Fd => t_p * s,
        EstimatorKind::Td => t_p * l,
    }
}

/// Estimate plus its overhead ledger entry.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimate: Vec<CMat>,
    pub nmse_db: f64,
    pub pilot_symbols_spent: usize,
    pub method_tag: EstimatorKind,
}

impl EstimateReport {
    pub fn new(
        estimate: Vec<CMat>,
        truth: &[CMat],
        t_p: usize,
        l: usize,
        method: EstimatorKind,
    ) -> Result<Self> {
        let nmse_db = nmse(&estimate, truth)?;
        Ok(Self {
            pilot_symbols_spent: pilot_symbols_spent(method, t_p, truth.len(), l),
            estimate,
            nmse_db,
            method_tag: method,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::orthonormality_residual;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_taps(r: &mut ChaCha8Rng, k: usize, m: usize, l: usize) -> Vec<CMat> {
        (0..l).map(|_| complex_gaussian(r, k, m)).collect()
    }

    fn synthesize(taps: &[CMat], s: usize) -> Vec<CMat> {
        (0..s)
            .map(|nu| crate::channel::frequency_response(taps, nu, s))
            .collect()
    }

    fn rel_err(a: &[CMat], b: &[CMat]) -> f64 {
        let e = ErrorEnergy::of(a, b).unwrap();
        (e.error / e.energy).sqrt()
    }

    #[test]
    fn square_book_is_unitary() {
        let b = make_pilot_books(4, 3, 2, 4, 64, 4).unwrap();
        assert!(orthonormality_residual(&b.uplink_full.adjoint()) < 1e-12);
        let pinv = pseudo_inverse(&b.uplink_full).unwrap();
        assert!((pinv - b.uplink_full.adjoint()).norm() < 1e-12);
        assert_eq!(b.td_offsets, vec![0, 1, 2, 3]);
    }

    #[test]
    fn full_size_book_rows_are_orthonormal() {
        let b = make_pilot_books(16, 4, 3, 16, 512, 6).unwrap();
        assert!(orthonormality_residual(&b.uplink_full.adjoint()) < 1e-12);
        assert!(orthonormality_residual(&b.uplink_effective.adjoint()) < 1e-12);
        assert!(orthonormality_residual(&b.downlink) < 1e-12);
    }

    #[test]
    fn book_rejects_short_pilots_and_offset_overflow() {
        assert!(make_pilot_books(4, 3, 2, 3, 64, 4).is_err());
        // 17 tone grids of 4 do not fit in 64 subcarriers.
        assert!(matches!(
            make_pilot_books(17, 3, 2, 17, 64, 4),
            Err(Error::PilotCapacity { available: 16, .. })
        ));
    }

    #[test]
    fn pilot_indices_examples() {
        assert_eq!(
            td_pilot_indices(512, 6, 0).unwrap(),
            vec![0, 85, 171, 256, 341, 427]
        );
        assert_eq!(td_pilot_indices(64, 4, 0).unwrap(), vec![0, 16, 32, 48]);
        assert_eq!(td_pilot_indices(64, 1, 5).unwrap(), vec![5]);
        assert_eq!(td_offset_capacity(512, 6), 85);
        assert_eq!(td_offset_capacity(64, 4), 16);
        assert!(td_pilot_indices(64, 4, 16).is_err());
    }

    #[test]
    fn distinct_offsets_are_disjoint() {
        let sets: Vec<Vec<usize>> = (0..3)
            .map(|o| td_pilot_indices(64, 4, o).unwrap())
            .collect();
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(sets[a].iter().all(|x| !sets[b].contains(x)));
            }
        }
    }

    #[test]
    fn noiseless_uplink_observation() {
        let mut r = rng(1);
        let h = complex_gaussian(&mut r, 4, 8);
        let phi = make_pilot_books(4, 3, 2, 6, 64, 4).unwrap().uplink_full;
        let y = simulate_uplink_pilot_rx::<ChaCha8Rng>(&h, &phi, 2.5, None);
        let expect = h.transpose() * &phi * Complex64::new((2.5f64 * 6.0).sqrt(), 0.0);
        assert!((&y - expect).norm() < 1e-12);
        let y2 = simulate_uplink_pilot_rx::<ChaCha8Rng>(&h, &phi, 5.0, None);
        assert!((y2 - y * Complex64::new(2f64.sqrt(), 0.0)).norm() < 1e-10);
        let est = ml_depilot(
            &simulate_uplink_pilot_rx::<ChaCha8Rng>(&h, &phi, 2.5, None),
            &phi,
            (15.0f64).sqrt(),
        )
        .unwrap();
        assert!((est.transpose() - h).norm() < 1e-12);
    }

    #[test]
    fn receiver_noise_has_unit_variance() {
        let mut r = rng(2);
        let zero = CMat::zeros(100, 10);
        let phi = CMat::identity(10, 10);
        let mut acc = 0.0;
        let mut n = 0;
        for _ in 0..100 {
            let y = simulate_pilot_rx(&zero, &phi, 1.0, Some(&mut r));
            acc += frobenius_sq(&y);
            n += y.len();
        }
        let v = acc / n as f64;
        assert!((0.99..=1.01).contains(&v), "noise variance {v}");
    }

    #[test]
    fn identity_book_depilot_is_column_scaling() {
        let mut r = rng(3);
        let y = complex_gaussian(&mut r, 5, 3);
        let est = ml_depilot(&y, &CMat::identity(3, 3), 2.0).unwrap();
        assert!((est - &y / Complex64::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn fd_error_variance_matches_algebra() {
        let mut r = rng(4);
        let phi = make_pilot_books(4, 3, 2, 8, 64, 4).unwrap().uplink_full;
        let link = PilotLink::uplink(&phi, 0.7).unwrap();
        let h = complex_gaussian(&mut r, 4, 8);
        let trials = 4000;
        let mut acc = 0.0;
        for _ in 0..trials {
            acc += frobenius_sq(&(link.observe(&h, 1.0, Some(&mut r)) - &h));
        }
        let v = acc / (trials * 32) as f64;
        let oracle = 1.0 / (0.7 * 8.0);
        assert!((link.error_variance(1.0) - oracle).abs() < 1e-12);
        assert!((v / oracle - 1.0).abs() < 0.05, "{v} vs {oracle}");
    }

    #[test]
    fn td_reconstruction_is_exact_for_short_channels() {
        let mut r = rng(5);
        for (s, l) in [(64, 4), (512, 6), (48, 5)] {
            let taps = random_taps(&mut r, 2, 3, l);
            let truth = synthesize(&taps, s);
            let plan = TdPlan::full_band(s, l, 1).unwrap();
            let tones: Vec<CMat> = plan
                .pilot_tones()
                .iter()
                .map(|&nu| truth[nu].clone())
                .collect();
            let rec = plan.reconstruct(&tones).unwrap();
            assert!(rel_err(&rec, &truth) < 1e-10, "S={s} L={l}");
        }
    }

    #[test]
    fn tap_beyond_budget_costs_at_least_its_energy() {
        let mut r = rng(6);
        let (s, l) = (64, 4);
        let mut taps = random_taps(&mut r, 2, 2, l + 1);
        taps[l] *= Complex64::new(0.3, 0.0);
        let truth = synthesize(&taps, s);
        let pilots = td_pilot_indices(s, l, 0).unwrap();
        let tones: Vec<CMat> = pilots.iter().map(|&nu| truth[nu].clone()).collect();
        let rec = td_estimate(&tones, &pilots, s).unwrap();
        let err = ErrorEnergy::of(&rec, &truth).unwrap().error;
        // Projection of the truth onto the L-tap subspace leaves exactly the
        // extra tap, S·‖T_L‖² over all subcarriers.
        let floor = s as f64 * frobenius_sq(&taps[l]);
        assert!(err >= floor * (1.0 - 1e-9), "{err} < {floor}");
    }

    #[test]
    fn subband_plan_with_one_band_matches_full_band() {
        let mut r = rng(7);
        let taps = random_taps(&mut r, 3, 2, 4);
        let truth = synthesize(&taps, 64);
        let full = TdPlan::full_band(64, 4, 2).unwrap();
        let sub = TdPlan::subbands(64, 1, 4, 2).unwrap();
        assert_eq!(full.pilot_tones(), sub.pilot_tones());
        let tones: Vec<CMat> = full
            .pilot_tones()
            .iter()
            .map(|&nu| truth[nu].clone())
            .collect();
        let a = full.reconstruct(&tones).unwrap();
        let b = td_estimate_effective(&tones, 1, 4, 64, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn subband_constant_precoder_is_exact() {
        let mut r = rng(8);
        let (s, n_sub, l) = (64, 8, 4);
        let taps = random_taps(&mut r, 3, 6, l);
        let h = synthesize(&taps, s);
        let precoders: Vec<CMat> = (0..n_sub).map(|_| complex_gaussian(&mut r, 6, 2)).collect();
        let eff: Vec<CMat> = (0..s)
            .map(|nu| &h[nu] * &precoders[nu / (s / n_sub)])
            .collect();
        let plan = TdPlan::subbands(s, n_sub, l, 0).unwrap();
        let tones: Vec<CMat> = plan
            .pilot_tones()
            .iter()
            .map(|&nu| eff[nu].clone())
            .collect();
        let rec = plan.reconstruct(&tones).unwrap();
        assert!(rel_err(&rec, &eff) < 1e-9);
        assert!(TdPlan::subbands(64, 8, 9, 0).is_err());
        assert!(TdPlan::subbands(64, 7, 4, 0).is_err());
    }

    #[test]
    fn nmse_guards() {
        let mut r = rng(9);
        let h = vec![complex_gaussian(&mut r, 2, 2)];
        assert_eq!(nmse(&h, &h).unwrap(), NMSE_FLOOR_DB);
        let zero = vec![CMat::zeros(2, 2)];
        assert!(nmse(&zero, &h).unwrap().abs() < 1e-12);
        assert!(nmse(&h, &zero).is_err());
    }

    #[test]
    fn overhead_ratio_is_l_over_s() {
        let fd = pilot_symbols_spent(EstimatorKind::Fd, 16, 512, 6);
        let td = pilot_symbols_spent(EstimatorKind::Td, 16, 512, 6);
        assert_eq!(fd, 16 * 512);
        assert_eq!(td * 512, fd * 6);
    }
}
