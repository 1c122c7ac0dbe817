//! Complex dense-matrix kernels shared by every other module.
//!
//! The decompositions are backed by `nalgebra`; this module adds the pieces
//! the simulator relies on: a full (square-factor) SVD with a deterministic
//! per-column phase convention, a checked right pseudo-inverse, unnormalized
//! DFT matrices, water-filling and a Cholesky-based `log2 det`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative rank tolerance used by [`pseudo_inverse`] and the precoders.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Full singular value decomposition `A = left · diag(σ) · rightᴴ`.
///
/// `left_vectors` is `m×m`, `right_vectors` is `n×n` and `singular_values`
/// holds the `min(m, n)` values in descending order. Each left singular
/// vector is rotated so that its largest-magnitude entry is real and
/// positive; the matching right vector receives the same rotation.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    pub left_vectors: CMat,
    pub singular_values: Vec<f64>,
    pub right_vectors: CMat,
}

impl SvdFactorization {
    /// `left · diag(σ) · rightᴴ` with the rectangular diagonal.
    pub fn reconstruct(&self) -> CMat {
        let m = self.left_vectors.nrows();
        let n = self.right_vectors.nrows();
        let mut sigma = CMat::zeros(m, n);
        for (i, s) in self.singular_values.iter().enumerate() {
            sigma[(i, i)] = Complex64::new(*s, 0.0);
        }
        &self.left_vectors * sigma * self.right_vectors.adjoint()
    }
}

/// Thin factorization: `u` is `m×k`, `v` is `n×k`, `k = min(m, n)`.
#[derive(Debug, Clone)]
pub(crate) struct ThinSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

/// Water-filling result over a set of parallel subchannels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Power per stream, in the order of the input gains.
    pub per_stream_power: Vec<f64>,
    pub water_level: f64,
}

impl PowerAllocation {
    pub fn total(&self) -> f64 {
        self.per_stream_power.iter().sum()
    }
}

fn check_finite(a: &CMat) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("matrix contains non-finite entries"))
    }
}

/// Index of the largest-magnitude entry of column `j`; near-ties resolve to
/// the lowest row so the choice does not depend on rounding noise.
fn pivot_row(m: &CMat, j: usize) -> usize {
    let col = m.column(j);
    let max = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
    col.iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-9))
        .unwrap_or(0)
}

fn unit_phase_of(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        z.conj() / r
    }
}

pub(crate) fn thin_svd(a: &CMat) -> Result<ThinSvd> {
    check_finite(a)?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    let k = m.min(n);
    let dec = a.clone().svd(true, true);
    let u_raw = dec.u.expect("u requested");
    let vt_raw = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| {
        dec.singular_values[y]
            .partial_cmp(&dec.singular_values[x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = CMat::zeros(m, k);
    let mut v = CMat::zeros(n, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        s.push(dec.singular_values[src].max(0.0));
        u.set_column(dst, &u_raw.column(src));
        for r in 0..n {
            v[(r, dst)] = vt_raw[(src, r)].conj();
        }
    }
    for j in 0..k {
        let p = pivot_row(&u, j);
        let phase = unit_phase_of(u[(p, j)]);
        for r in 0..m {
            u[(r, j)] *= phase;
        }
        for r in 0..n {
            v[(r, j)] *= phase;
        }
        // Rounding can leave a tiny imaginary part on the pivot.
        u[(p, j)] = Complex64::new(u[(p, j)].norm(), 0.0);
    }
    Ok(ThinSvd { u, s, v })
}

/// Extends the orthonormal columns of `basis` (`m×k`) to `target` columns by
/// Gram-Schmidt over the standard basis, greedily taking the unit vector with
/// the largest residual. New columns follow the same phase convention.
pub(crate) fn complete_orthonormal(basis: &CMat, target: usize) -> CMat {
    let m = basis.nrows();
    let target = target.min(m);
    let mut out = CMat::zeros(m, target.max(basis.ncols()));
    let have = basis.ncols();
    for j in 0..have {
        out.set_column(j, &basis.column(j));
    }
    let mut filled = have;
    let mut used = vec![false; m];
    while filled < target {
        let mut best: Option<(usize, CVec, f64)> = None;
        for e in 0..m {
            if used[e] {
                continue;
            }
            let mut r = CVec::zeros(m);
            r[e] = Complex64::new(1.0, 0.0);
            for _pass in 0..2 {
                for j in 0..filled {
                    let c = out.column(j);
                    let proj = c.dotc(&r);
                    r -= c * proj;
                }
            }
            let nrm = r.norm();
            if best.as_ref().is_none_or(|b| nrm > b.2 + 1e-12) {
                best = Some((e, r, nrm));
            }
        }
        let (e, r, nrm) = best.expect("standard basis spans the space");
        used[e] = true;
        let mut col = r / Complex64::new(nrm, 0.0);
        let p = col
            .iter()
            .map(|z| z.norm())
            .enumerate()
            .fold((0, 0.0), |acc, (i, x)| {
                if x > acc.1 * (1.0 + 1e-9) {
                    (i, x)
                } else {
                    acc
                }
            })
            .0;
        let phase = unit_phase_of(col[p]);
        col *= phase;
        col[p] = Complex64::new(col[p].norm(), 0.0);
        out.set_column(filled, &col);
        filled += 1;
    }
    out
}

/// Full SVD with the deterministic phase convention described on
/// [`SvdFactorization`].
pub fn svd(a: &CMat) -> Result<SvdFactorization> {
    let thin = thin_svd(a)?;
    let (m, n) = a.shape();
    Ok(SvdFactorization {
        left_vectors: complete_orthonormal(&thin.u, m),
        singular_values: thin.s,
        right_vectors: complete_orthonormal(&thin.v, n),
    })
}

/// First `count` left singular vectors of `a`, completing the basis when
/// `count` exceeds `min(m, n)`.
pub(crate) fn leading_left(a: &CMat, count: usize) -> Result<CMat> {
    let thin = thin_svd(a)?;
    if count <= thin.u.ncols() {
        Ok(thin.u.columns(0, count).into_owned())
    } else {
        Ok(complete_orthonormal(&thin.u, count))
    }
}

/// Right pseudo-inverse `Aᴴ(AAᴴ)⁻¹` of a full-row-rank matrix.
pub fn pseudo_inverse(a: &CMat) -> Result<CMat> {
    let (m, n) = a.shape();
    if m > n {
        return Err(Error::Singular { ratio: 0.0 });
    }
    let thin = thin_svd(a)?;
    let smax = thin.s.first().copied().unwrap_or(0.0);
    let smin = thin.s.last().copied().unwrap_or(0.0);
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio > RANK_TOLERANCE) {
        return Err(Error::Singular { ratio });
    }
    // V Σ⁻¹ Uᴴ
    let mut vs = thin.v.clone();
    for (j, s) in thin.s.iter().enumerate() {
        vs.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(vs * thin.u.adjoint())
}

/// Unnormalized `n×n` DFT matrix, entry `(a, b) = exp(-j2π·a·b/n)`.
pub fn dft_matrix(n: usize) -> Result<CMat> {
    if n == 0 {
        return Err(Error::invalid("DFT size must be positive"));
    }
    Ok(CMat::from_fn(n, n, |a, b| {
        let k = ((a as u128 * b as u128) % n as u128) as f64;
        Complex64::from_polar(1.0, -2.0 * PI * k / n as f64)
    }))
}

/// Maximizes `Σ log2(1 + P_i g_i)` subject to `Σ P_i = budget`, `P_i ≥ 0`.
///
/// Streams are activated strongest-first; the weakest active stream is
/// dropped while its inverse gain sits at or above the water level. Gains
/// that are not strictly positive never receive power.
pub fn water_fill(channel_gains: &[f64], budget: f64) -> Result<PowerAllocation> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::invalid(format!(
            "power budget must be positive, got {budget}"
        )));
    }
    if channel_gains.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("channel gains must be finite"));
    }
    let mut order: Vec<usize> = (0..channel_gains.len())
        .filter(|&i| channel_gains[i] > 0.0)
        .collect();
    if order.is_empty() {
        return Err(Error::invalid(
            "water-filling needs at least one positive gain",
        ));
    }
    order.sort_by(|&a, &b| {
        channel_gains[b]
            .partial_cmp(&channel_gains[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut active = order.len();
    let level = loop {
        let inv_sum: f64 = order[..active]
            .iter()
            .map(|&i| 1.0 / channel_gains[i])
            .sum();
        let level = (budget + inv_sum) / active as f64;
        let weakest = 1.0 / channel_gains[order[active - 1]];
        if weakest >= level && active > 1 {
            active -= 1;
        } else {
            break level;
        }
    };
    let mut per_stream_power = vec![0.0; channel_gains.len()];
    for &i in &order[..active] {
        per_stream_power[i] = level - 1.0 / channel_gains[i];
    }
    // Remove the rounding residue so the budget is met to machine precision.
    let total: f64 = per_stream_power.iter().sum();
    let fix = (budget - total) / active as f64;
    for &i in &order[..active] {
        per_stream_power[i] += fix;
    }
    Ok(PowerAllocation {
        per_stream_power,
        water_level: level,
    })
}

/// `log2 det(A)` for a Hermitian positive-definite matrix via Cholesky.
pub fn log2_det_hpd(a: &CMat) -> Result<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::invalid("log-det of a non-square matrix"));
    }
    let chol = hermitian_part(a)
        .cholesky()
        .ok_or_else(|| Error::invalid("matrix is not positive definite"))?;
    let l = chol.l_dirty();
    // Complex Cholesky takes complex square roots instead of failing, so the
    // pivots have to be checked by hand.
    let mut acc = 0.0;
    for i in 0..n {
        let d = l[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > 1e-9 * d.re {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        acc += 2.0 * d.re.log2();
    }
    Ok(acc)
}

pub(crate) fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub(crate) fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Matrix of i.i.d. `CN(0, 1)` entries.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// Largest deviation of `AᴴA` from the identity.
pub fn orthonormality_residual(a: &CMat) -> f64 {
    let g = a.adjoint() * a;
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((g[(r, c)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_err(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let f = svd(&identity(2)).unwrap();
        assert_eq!(f.singular_values, vec![1.0, 1.0]);

        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(3.0, 0.0), c(1.0, 0.0)]));
        let f = svd(&d).unwrap();
        assert!((f.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((f.singular_values[1] - 1.0).abs() < 1e-14);
        assert!(rel_err(&f.left_vectors, &identity(2)) < 1e-14);
        assert!(rel_err(&f.right_vectors, &identity(2)) < 1e-14);
    }

    #[test]
    fn svd_reconstructs_random_4x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = complex_gaussian(&mut rng, 4, 6);
        let f = svd(&a).unwrap();
        assert_eq!(f.left_vectors.shape(), (4, 4));
        assert_eq!(f.right_vectors.shape(), (6, 6));
        assert!(rel_err(&f.reconstruct(), &a) < 1e-10);
        assert!(orthonormality_residual(&f.left_vectors) < 1e-10);
        assert!(orthonormality_residual(&f.right_vectors) < 1e-10);
    }

    #[test]
    fn svd_phase_convention_makes_pivot_real_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = complex_gaussian(&mut rng, 5, 3);
        let f = svd(&a).unwrap();
        for j in 0..5 {
            let p = pivot_row(&f.left_vectors, j);
            let z = f.left_vectors[(p, j)];
            assert!(z.re > 0.0 && z.im == 0.0);
        }
        // A global phase rotation of the input leaves the left vectors unchanged.
        let rotated = &a * Complex64::from_polar(1.0, 0.7);
        let g = svd(&rotated).unwrap();
        assert!(
            rel_err(
                &g.left_vectors.columns(0, 3).into_owned(),
                &f.left_vectors.columns(0, 3).into_owned()
            ) < 1e-10
        );
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = identity(2);
        a[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_of_orthonormal_rows_is_adjoint() {
        let phi = dft_matrix(4).unwrap() * c(0.5, 0.0);
        let rows = phi.rows(0, 3).into_owned();
        let p = pseudo_inverse(&rows).unwrap();
        assert!(rel_err(&p, &rows.adjoint()) < 1e-12);
        assert!(rel_err(&pseudo_inverse(&identity(3)).unwrap(), &identity(3)) < 1e-14);
    }

    #[test]
    fn pinv_moore_penrose_on_random_3x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = complex_gaussian(&mut rng, 3, 8);
        let p = pseudo_inverse(&a).unwrap();
        assert!(rel_err(&(&a * &p * &a), &a) < 1e-9);
        assert!(rel_err(&(&p * &a * &p), &p) < 1e-9);
        assert!(rel_err(&(&a * &p), &identity(3)) < 1e-9);
        let pa = &p * &a;
        assert!(rel_err(&pa.adjoint(), &pa) < 1e-9);
    }

    #[test]
    fn pinv_rank_deficient_names_ratio() {
        let mut a = CMat::zeros(2, 3);
        a[(0, 0)] = c(1.0, 0.0);
        a[(1, 0)] = c(2.0, 0.0);
        match pseudo_inverse(&a) {
            Err(Error::Singular { ratio }) => assert!(ratio < 1e-12),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(pseudo_inverse(&CMat::zeros(3, 2)).is_err());
    }

    #[test]
    fn dft_small_cases() {
        assert_eq!(dft_matrix(1).unwrap()[(0, 0)], c(1.0, 0.0));
        let d2 = dft_matrix(2).unwrap();
        assert!((d2[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!((d2[(0, 1)] - c(1.0, 0.0)).norm() < 1e-15);
        let d8 = dft_matrix(8).unwrap() * c(1.0 / 8f64.sqrt(), 0.0);
        assert!(orthonormality_residual(&d8) < 1e-12);
        assert!(dft_matrix(0).is_err());
    }

    #[test]
    fn water_fill_closed_forms() {
        let p = water_fill(&[2.0, 2.0], 3.0).unwrap();
        assert!((p.per_stream_power[0] - 1.5).abs() < 1e-12);
        assert!((p.per_stream_power[1] - 1.5).abs() < 1e-12);

        let p = water_fill(&[4.0, 1.0], 1.0).unwrap();
        assert!((p.per_stream_power[0] - 0.875).abs() < 1e-12);
        assert!((p.per_stream_power[1] - 0.125).abs() < 1e-12);
        assert!((p.water_level - 1.125).abs() < 1e-12);

        let p = water_fill(&[10.0, 0.01], 0.1).unwrap();
        assert_eq!(p.per_stream_power[1], 0.0);
        assert!((p.per_stream_power[0] - 0.1).abs() < 1e-12);
        assert!(1.0 / 0.01 > p.water_level);
    }

    #[test]
    fn water_fill_rejects_bad_input() {
        assert!(water_fill(&[0.0, -1.0], 1.0).is_err());
        assert!(water_fill(&[1.0], 0.0).is_err());
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(8.0, 0.0)]));
        assert!((log2_det_hpd(&d).unwrap() - 4.0).abs() < 1e-14);
        assert!(log2_det_hpd(&(-identity(2))).is_err());
    }
}
