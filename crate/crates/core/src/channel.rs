//! Geometric cluster channel for a mobile link.
//!
//! Each block draws one line-of-sight path plus `N_cl` single-bounce cluster
//! paths. Angles, delays and powers follow from the 2-D positions of the BS,
//! the UE and the clusters; small-scale coefficients are redrawn per block.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMat, CVec};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// 2-D point or vector in meters.
pub type Point = [f64; 2];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

/// Uniform linear array description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_elements: usize,
    /// Element spacing in carrier wavelengths.
    pub element_spacing: f64,
    /// Unit vector along the array axis.
    pub orientation: Point,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, element_spacing: f64, orientation: Point) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::invalid("array needs at least one element"));
        }
        if !(element_spacing > 0.0) {
            return Err(Error::invalid("element spacing must be positive"));
        }
        let n = orientation[0].hypot(orientation[1]);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("array orientation must be a nonzero vector"));
        }
        Ok(Self {
            num_elements,
            element_spacing,
            orientation: [orientation[0] / n, orientation[1] / n],
        })
    }

    /// Half-wavelength ULA with its axis along +y.
    pub fn half_wavelength_ula(num_elements: usize) -> Self {
        Self {
            num_elements,
            element_spacing: 0.5,
            orientation: [0.0, 1.0],
        }
    }

    /// Angle from broadside towards `target` as seen from `origin`.
    pub fn angle_towards(&self, origin: Point, target: Point) -> f64 {
        let d = sub(target, origin);
        let axis = self.orientation;
        let normal = [axis[1], -axis[0]];
        let along = d[0] * axis[0] + d[1] * axis[1];
        let across = d[0] * normal[0] + d[1] * normal[1];
        along.atan2(across)
    }
}

/// ULA response: element `n` is `exp(j2π·spacing·n·sin(angle))`.
pub fn array_response(geometry: &ArrayGeometry, angle_rad: f64) -> CVec {
    let step = 2.0 * PI * geometry.element_spacing * angle_rad.sin();
    CVec::from_fn(geometry.num_elements, |n, _| {
        Complex64::from_polar(1.0, step * n as f64)
    })
}

/// 3GPP UMi street-canyon LOS path loss in dB (no shadow fading).
pub fn umi_path_loss_db(distance_m: f64, carrier_ghz: f64) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::invalid(format!(
            "path-loss distance must be at least 1 m, got {distance_m}"
        )));
    }
    if !(carrier_ghz > 0.0) {
        return Err(Error::invalid("carrier frequency must be positive"));
    }
    Ok(32.4 + 21.0 * distance_m.log10() + 20.0 * carrier_ghz.log10())
}

/// Linear power gain `10^(-PL/10)` of [`umi_path_loss_db`].
pub fn umi_path_loss(distance_m: f64, carrier_ghz: f64) -> Result<f64> {
    Ok(10f64.powf(-umi_path_loss_db(distance_m, carrier_ghz)? / 10.0))
}

/// One propagation path of the cluster model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Angle of arrival at the UE array.
    pub aoa_rad: f64,
    /// Angle of departure at the BS array.
    pub aod_rad: f64,
    pub tap_index: usize,
    /// Average power per tap, length `L`.
    pub tap_powers: Vec<f64>,
    pub is_los: bool,
}

impl PathComponent {
    pub fn total_power(&self) -> f64 {
        self.tap_powers.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationGeometry {
    /// Path 0 is the LOS path.
    pub paths: Vec<PathComponent>,
    pub num_taps: usize,
    /// Cluster paths whose delay fell beyond the tap budget.
    pub dropped_paths: usize,
}

impl PropagationGeometry {
    /// `E|H_km[ν]|²`, identical for every antenna pair and subcarrier.
    pub fn per_entry_gain(&self) -> f64 {
        self.paths.iter().map(PathComponent::total_power).sum()
    }
}

/// Link parameters needed to turn positions into a [`PropagationGeometry`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    pub sample_period_s: f64,
    pub num_taps: usize,
    pub carrier_ghz: f64,
    /// Extra loss of each cluster reflection, in dB.
    pub reflection_loss_db: f64,
}

pub fn build_geometry(
    bs_pos: Point,
    ue_pos: Point,
    cluster_positions: &[Point],
    params: &GeometryParams,
    bs_array: &ArrayGeometry,
    ue_array: &ArrayGeometry,
) -> Result<PropagationGeometry> {
    let l = params.num_taps;
    if l == 0 {
        return Err(Error::invalid("channel needs at least one tap"));
    }
    if !(params.sample_period_s > 0.0) {
        return Err(Error::invalid("sample period must be positive"));
    }
    let d_los = dist(bs_pos, ue_pos);
    if d_los == 0.0 {
        return Err(Error::invalid("UE and BS positions coincide"));
    }
    let mut los_powers = vec![0.0; l];
    los_powers[0] = umi_path_loss(d_los.max(1.0), params.carrier_ghz)?;
    let mut paths = vec![PathComponent {
        aoa_rad: ue_array.angle_towards(ue_pos, bs_pos),
        aod_rad: bs_array.angle_towards(bs_pos, ue_pos),
        tap_index: 0,
        tap_powers: los_powers,
        is_los: true,
    }];
    let reflection = 10f64.powf(-params.reflection_loss_db / 10.0);
    let mut dropped = 0;
    for &c in cluster_positions {
        let unfolded = dist(bs_pos, c) + dist(c, ue_pos);
        let excess = (unfolded - d_los).max(0.0) / SPEED_OF_LIGHT;
        let tap = ((excess / params.sample_period_s).round() as usize).max(1);
        if tap >= l {
            log::warn!(
                "cluster at {c:?} needs tap {tap} but only {l} taps are available; path dropped"
            );
            dropped += 1;
            continue;
        }
        let mut powers = vec![0.0; l];
        powers[tap] = umi_path_loss(unfolded.max(1.0), params.carrier_ghz)? * reflection;
        paths.push(PathComponent {
            aoa_rad: ue_array.angle_towards(ue_pos, c),
            aod_rad: bs_array.angle_towards(bs_pos, c),
            tap_index: tap,
            tap_powers: powers,
            is_los: false,
        });
    }
    Ok(PropagationGeometry {
        paths,
        num_taps: l,
        dropped_paths: dropped,
    })
}

/// Small-scale coefficients `α_i[ℓ]`, indexed `[path][tap]`.
pub type PathCoefficients = Vec<Vec<Complex64>>;

/// Draws the per-block tap coefficients. The LOS path is deterministic;
/// every cluster tap consumes one complex normal whether or not its power is
/// zero, so stream consumption depends only on the path count.
pub fn draw_small_scale<R: Rng + ?Sized>(
    geom: &PropagationGeometry,
    rng: &mut R,
) -> PathCoefficients {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    geom.paths
        .iter()
        .map(|p| {
            if p.is_los {
                p.tap_powers
                    .iter()
                    .enumerate()
                    .map(|(l, b)| {
                        if l == 0 {
                            Complex64::new(b.sqrt(), 0.0)
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect()
            } else {
                p.tap_powers
                    .iter()
                    .map(|b| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        if *b > 0.0 {
                            Complex64::new(re * s, im * s) * b.sqrt()
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect()
            }
        })
        .collect()
}

/// Time-domain taps: `taps[ℓ]` is the `K×M` matrix of tap `ℓ`.
#[derive(Debug, Clone)]
pub struct TapChannel {
    pub taps: Vec<CMat>,
    pub block_index: usize,
}

impl TapChannel {
    pub fn from_paths(
        geom: &PropagationGeometry,
        coefficients: &PathCoefficients,
        bs_array: &ArrayGeometry,
        ue_array: &ArrayGeometry,
        block_index: usize,
    ) -> Self {
        let (k, m) = (ue_array.num_elements, bs_array.num_elements);
        let mut taps = vec![CMat::zeros(k, m); geom.num_taps];
        for (path, alphas) in geom.paths.iter().zip(coefficients) {
            let ar = array_response(ue_array, path.aoa_rad);
            let at = array_response(bs_array, path.aod_rad);
            let outer = &ar * at.transpose();
            for (tap, alpha) in taps.iter_mut().zip(alphas) {
                if *alpha != Complex64::new(0.0, 0.0) {
                    *tap += &outer * *alpha;
                }
            }
        }
        Self { taps, block_index }
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }
}

/// Per-subcarrier channel matrices `H[ν]`, each `K×M`.
#[derive(Debug, Clone)]
pub struct FreqChannel {
    pub per_subcarrier: Vec<CMat>,
    pub block_index: usize,
}

/// `exp(-j2π·ℓ·ν/S)` with the product reduced mod `S` first.
pub(crate) fn twiddle(l: usize, nu: usize, s: usize) -> Complex64 {
    let k = ((l as u128 * nu as u128) % s as u128) as f64;
    Complex64::from_polar(1.0, -2.0 * PI * k / s as f64)
}

/// `H[ν] = Σ_ℓ taps[ℓ]·exp(-j2πℓν/S)` for `ν = 0..S`.
pub fn assemble_freq_channel(taps: &TapChannel, num_subcarriers: usize) -> Result<FreqChannel> {
    let l = taps.num_taps();
    if l == 0 || l > num_subcarriers {
        return Err(Error::invalid(format!(
            "tap count {l} must be in 1..={num_subcarriers} (number of subcarriers)"
        )));
    }
    let per_subcarrier = (0..num_subcarriers)
        .map(|nu| frequency_response(&taps.taps, nu, num_subcarriers))
        .collect();
    Ok(FreqChannel {
        per_subcarrier,
        block_index: taps.block_index,
    })
}

pub(crate) fn frequency_response(taps: &[CMat], nu: usize, s: usize) -> CMat {
    let mut h = taps[0].clone();
    for (l, tap) in taps.iter().enumerate().skip(1) {
        h += tap * twiddle(l, nu, s);
    }
    h
}

/// Channel and beam coherence bookkeeping; blocks are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockClock {
    pub coherence_time_s: f64,
    pub beam_coherence_time_s: f64,
    pub blocks_per_beam: usize,
    pub current_block: usize,
}

impl BlockClock {
    pub fn new(coherence_time_s: f64, beam_coherence_time_s: f64) -> Result<Self> {
        if !(coherence_time_s > 0.0) || !(beam_coherence_time_s > 0.0) {
            return Err(Error::invalid("coherence times must be positive"));
        }
        let ratio = beam_coherence_time_s / coherence_time_s;
        let blocks = ratio.round();
        if blocks < 1.0 || (ratio - blocks).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(format!(
                "T_B/T_C = {ratio} must be a positive integer"
            )));
        }
        Ok(Self {
            coherence_time_s,
            beam_coherence_time_s,
            blocks_per_beam: blocks as usize,
            current_block: 1,
        })
    }

    /// Whether the first-stage combiner is reselected in block `tau` (1-based).
    pub fn q_refresh_due(&self, tau: usize) -> bool {
        tau >= 1 && (tau - 1).is_multiple_of(self.blocks_per_beam)
    }

    /// Start time of block `tau`.
    pub fn block_start_s(&self, tau: usize) -> f64 {
        (tau.saturating_sub(1)) as f64 * self.coherence_time_s
    }

    pub fn advance(&mut self) {
        self.current_block += 1;
    }
}

/// Straight-line UE motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_position_m: Point,
    pub velocity_mps: Point,
}

pub fn ue_position_at(traj: &Trajectory, t_s: f64) -> Point {
    [
        traj.start_position_m[0] + traj.velocity_mps[0] * t_s,
        traj.start_position_m[1] + traj.velocity_mps[1] * t_s,
    ]
}

/// Uniform cluster placement over the axis-aligned rectangle spanned by two
/// corners.
pub fn place_clusters<R: Rng + ?Sized>(
    rng: &mut R,
    corner_a: Point,
    corner_b: Point,
    count: usize,
) -> Vec<Point> {
    let (x0, x1) = (corner_a[0].min(corner_b[0]), corner_a[0].max(corner_b[0]));
    let (y0, y1) = (corner_a[1].min(corner_b[1]), corner_a[1].max(corner_b[1]));
    (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            [x0 + u * (x1 - x0), y0 + v * (y1 - y0)]
        })
        .collect()
}
