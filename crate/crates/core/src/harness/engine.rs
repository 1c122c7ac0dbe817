//! Block-by-block simulation of one Monte Carlo trial.
//!
//! A trial fixes the cluster positions. Each block recomputes the geometry
//! from the UE positions, draws `fading_draws` small-scale realisations and
//! runs every scheme on the same realisations. The UatF statistics of a
//! block are taken over those draws, with the beamformers re-designed from
//! fresh pilots on each draw and the held first stage taken from draw 0 of
//! the block where it was selected.

use std::hash::{DefaultHasher, Hash, Hasher};

use num_complex::Complex64;

use crate::beamforming::{
    align_phases, init_second_stage, mmse_regularization, mu_mmse_precoder, select_first_stage,
    stack_cols, stack_rows, svd_precoder, update_second_stage, BeamformerState, StateResiduals,
};
use crate::channel::{
    assemble_freq_channel, build_geometry, draw_small_scale, place_clusters, ue_position_at,
    ArrayGeometry, BlockClock, GeometryParams, Point, PropagationGeometry, TapChannel,
};
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_fd, estimate_td, make_pilot_books, EstimatorKind, PilotBook, PilotLink, TdPlan,
};
use crate::numerics::{CMat, PowerAllocation};
use crate::spectral_efficiency::{
    overhead_rho, rate_of_effective, uatf_mu_rate, MomentAccumulator, OverheadModel,
    SecondMomentAccumulator,
};

use super::config::{db_to_linear, PrecoderKind, ScenarioConfig, Scheme};
use super::rng::{Purpose, StreamKey};
use super::stats::ScalarStats;

/// Where the UEs are during a trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// Each UE follows its configured trajectory.
    Trajectories,
    /// A single UE parked at a point.
    Static(Point),
}

/// How transmit and pilot powers are set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerMode {
    /// `P_t` and `P_r` from the configuration.
    Configured,
    /// Both powers set per trial so that `P·g` equals this linear SNR, where
    /// `g` is the per-entry channel gain of UE 0 in the first block.
    Snr(f64),
}

/// What to simulate in a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub blocks: usize,
    pub motion: Motion,
    pub power: PowerMode,
    pub schemes: Vec<Scheme>,
    /// Keep per-subcarrier rates in the outcome.
    pub keep_subcarriers: bool,
}

/// UatF and perfect-CSI rate of one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcarrierRates {
    pub uatf: f64,
    pub perfect_mean: f64,
    /// Standard error of `perfect_mean` over the fading draws.
    pub perfect_stderr: f64,
}

/// One user's spectral efficiency in one block, already scaled by `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBlock {
    /// SE credited to the scheme: `perfect_se` for the genie scheme,
    /// `uatf_se` for every scheme that relies on estimates.
    pub se: f64,
    pub uatf_se: f64,
    pub perfect_se: f64,
    pub rho: f64,
    pub per_subcarrier: Option<Vec<SubcarrierRates>>,
}

/// Results of one trial, indexed `[block][scheme][user]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub blocks: Vec<Vec<Vec<UserBlock>>>,
    /// Digest of the channel realisations each scheme consumed.
    pub draw_ledgers: Vec<u64>,
    /// Worst contract deviation over every constructed beamformer state.
    pub residuals: StateResiduals,
    /// Cluster paths dropped for exceeding the tap budget.
    pub dropped_paths: usize,
}

/// Transmit and pilot powers of a trial (linear, noise normalised).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Powers {
    p_t: f64,
    p_r: f64,
}

/// Links of one trial.
struct Links {
    uplink_full: PilotLink,
    uplink_effective: PilotLink,
    downlink: PilotLink,
}

/// Held beamformers of one scheme and user.
#[derive(Debug, Clone, Default)]
struct Memory {
    first_stage: Option<Vec<CMat>>,
    second_stage: Option<Vec<CMat>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// True channel, every stage refreshed.
    Genie,
    /// Full estimation and first-stage selection.
    Fresh,
    /// Held first stage; second stage adapted or frozen.
    Tracking { freeze_second_stage: bool },
}

/// Per-configuration constants shared by all trials.
pub struct Engine {
    cfg: ScenarioConfig,
    bs_array: ArrayGeometry,
    ue_array: ArrayGeometry,
    params: GeometryParams,
    clock: BlockClock,
    book: PilotBook,
    full_plans: Vec<TdPlan>,
    subband_plans: Vec<TdPlan>,
    rho_fd: f64,
    rho_td: f64,
}

impl Engine {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let users = cfg.users();
        let capacity = cfg.td_user_capacity();
        let uses_td = cfg
            .schemes
            .iter()
            .any(|s| s.estimator(cfg.estimator) == EstimatorKind::Td);
        if uses_td && users > capacity {
            return Err(Error::PilotCapacity {
                requested: users,
                available: capacity,
                subcarriers: cfg.subcarriers,
                taps: cfg.taps,
            });
        }
        let axis = [0.0, 1.0];
        let book = make_pilot_books(
            cfg.ue_antennas,
            cfg.first_stage_outputs,
            cfg.streams,
            cfg.pilot_len,
            cfg.subcarriers,
            cfg.taps,
        )?;
        let planned = if uses_td { users } else { 1 };
        let full_plans = (0..planned)
            .map(|u| TdPlan::full_band(cfg.subcarriers, cfg.taps, u))
            .collect::<Result<Vec<_>>>()?;
        let subband_plans = (0..planned)
            .map(|u| TdPlan::subbands(cfg.subcarriers, cfg.subbands, cfg.effective_taps, u))
            .collect::<Result<Vec<_>>>()?;
        let rho = |kind| {
            overhead_rho(&OverheadModel::for_estimator(
                kind,
                cfg.pilot_len,
                cfg.streams,
                cfg.block_len_symbols,
                cfg.taps,
                cfg.subcarriers,
            ))
        };
        Ok(Self {
            bs_array: ArrayGeometry::new(cfg.bs_antennas, cfg.bs_element_spacing, axis)?,
            ue_array: ArrayGeometry::new(cfg.ue_antennas, cfg.ue_element_spacing, axis)?,
            params: GeometryParams {
                sample_period_s: cfg.sample_period_s,
                num_taps: cfg.taps,
                carrier_ghz: cfg.carrier_ghz,
                reflection_loss_db: cfg.reflection_loss_db,
            },
            clock: cfg.block_clock()?,
            book,
            full_plans,
            subband_plans,
            rho_fd: rho(EstimatorKind::Fd)?,
            rho_td: rho(EstimatorKind::Td)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &BlockClock {
        &self.clock
    }

    pub fn rho(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Fd => self.rho_fd,
            EstimatorKind::Td => self.rho_td,
        }
    }

    pub fn pilot_book(&self) -> &PilotBook {
        &self.book
    }

    pub fn key(&self, purpose: Purpose) -> StreamKey {
        StreamKey::new(self.cfg.master_seed, purpose)
    }

    fn users_for(&self, motion: &Motion) -> usize {
        match motion {
            Motion::Trajectories => self.cfg.users(),
            Motion::Static(_) => 1,
        }
    }

    fn position(&self, motion: &Motion, user: usize, block: usize) -> Point {
        match motion {
            Motion::Trajectories => ue_position_at(
                &self.cfg.ue_trajectories[user],
                self.clock.block_start_s(block),
            ),
            Motion::Static(p) => *p,
        }
    }

    /// Cluster positions of a trial, uniform over the box spanned by the BS
    /// and the UE start positions.
    pub fn clusters(&self, trial: usize, motion: &Motion) -> Vec<Point> {
        let mut lo = self.cfg.bs_position;
        let mut hi = self.cfg.bs_position;
        for u in 0..self.users_for(motion) {
            let p = self.position(motion, u, 1);
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut rng = self.key(Purpose::ClusterPlacement).trial(trial).rng();
        place_clusters(&mut rng, lo, hi, self.cfg.clusters)
    }

    /// Propagation geometry of every user in a block.
    pub fn geometries(
        &self,
        clusters: &[Point],
        motion: &Motion,
        block: usize,
    ) -> Result<Vec<PropagationGeometry>> {
        (0..self.users_for(motion))
            .map(|u| {
                build_geometry(
                    self.cfg.bs_position,
                    self.position(motion, u, block),
                    clusters,
                    &self.params,
                    &self.bs_array,
                    &self.ue_array,
                )
            })
            .collect()
    }

    /// Per-subcarrier channel of one user for a given fading draw.
    pub fn channel(
        &self,
        geom: &PropagationGeometry,
        trial: usize,
        block: usize,
        draw: usize,
        user: usize,
    ) -> Result<Vec<CMat>> {
        let key = self
            .key(Purpose::SmallScale)
            .trial(trial)
            .block(block)
            .draw(draw)
            .user(user);
        self.channel_from(geom, key, block)
    }

    /// Per-subcarrier channel with fading drawn from `key`.
    pub fn channel_from(
        &self,
        geom: &PropagationGeometry,
        key: StreamKey,
        block: usize,
    ) -> Result<Vec<CMat>> {
        let mut rng = key.rng();
        let coeffs = draw_small_scale(geom, &mut rng);
        let taps = TapChannel::from_paths(geom, &coeffs, &self.bs_array, &self.ue_array, block);
        Ok(assemble_freq_channel(&taps, self.cfg.subcarriers)?.per_subcarrier)
    }

    fn powers(&self, mode: PowerMode, first_block: &[PropagationGeometry]) -> Powers {
        match mode {
            PowerMode::Configured => Powers {
                p_t: db_to_linear(self.cfg.tx_power_db),
                p_r: db_to_linear(self.cfg.pilot_power_db),
            },
            PowerMode::Snr(snr) => {
                let p = snr / first_block[0].per_entry_gain();
                Powers { p_t: p, p_r: p }
            }
        }
    }

    fn links(&self, powers: Powers) -> Result<Links> {
        Ok(Links {
            uplink_full: PilotLink::uplink(&self.book.uplink_full, powers.p_r)?,
            uplink_effective: PilotLink::uplink(&self.book.uplink_effective, powers.p_r)?,
            downlink: PilotLink::downlink(&self.book.downlink)?,
        })
    }

    /// Runs all blocks of one trial.
    pub fn run_trial(&self, trial: usize, plan: &TrialPlan) -> Result<TrialOutcome> {
        let users = self.users_for(&plan.motion);
        let clusters = self.clusters(trial, &plan.motion);
        let first = self.geometries(&clusters, &plan.motion, 1)?;
        let powers = self.powers(plan.power, &first);
        let links = self.links(powers)?;
        let mut memory = vec![vec![Memory::default(); users]; plan.schemes.len()];
        let mut ledgers = vec![DefaultHasher::new(); plan.schemes.len()];
        let mut residuals = StateResiduals::default();
        let mut dropped = 0;
        let mut blocks = Vec::with_capacity(plan.blocks);
        for block in 1..=plan.blocks {
            let geoms = if block == 1 {
                first.clone()
            } else {
                self.geometries(&clusters, &plan.motion, block)?
            };
            dropped += geoms.iter().map(|g| g.dropped_paths).sum::<usize>();
            let channels = (0..self.cfg.fading_draws)
                .map(|d| {
                    geoms
                        .iter()
                        .enumerate()
                        .map(|(u, g)| self.channel(g, trial, block, d, u))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut per_scheme = Vec::with_capacity(plan.schemes.len());
            for (si, &scheme) in plan.schemes.iter().enumerate() {
                let ctx = BlockContext {
                    trial,
                    block,
                    powers,
                    links: &links,
                    keep_subcarriers: plan.keep_subcarriers,
                };
                per_scheme.push(self.run_scheme_block(
                    scheme,
                    &ctx,
                    &channels,
                    &mut memory[si],
                    &mut ledgers[si],
                    &mut residuals,
                )?);
            }
            blocks.push(per_scheme);
        }
        Ok(TrialOutcome {
            trial,
            blocks,
            draw_ledgers: ledgers.iter().map(Hasher::finish).collect(),
            residuals,
            dropped_paths: dropped,
        })
    }

    fn phase(&self, scheme: Scheme, block: usize) -> Phase {
        match scheme {
            Scheme::IdealDbf => Phase::Genie,
            Scheme::Continuous => Phase::Fresh,
            Scheme::FixedQTd | Scheme::FixedQFd => {
                if self.clock.q_refresh_due(block) {
                    Phase::Fresh
                } else {
                    Phase::Tracking {
                        freeze_second_stage: false,
                    }
                }
            }
            Scheme::FixedQw => {
                if block == 1 {
                    Phase::Fresh
                } else {
                    Phase::Tracking {
                        freeze_second_stage: true,
                    }
                }
            }
        }
    }

    fn run_scheme_block(
        &self,
        scheme: Scheme,
        ctx: &BlockContext<'_>,
        channels: &[Vec<Vec<CMat>>],
        memory: &mut [Memory],
        ledger: &mut DefaultHasher,
        residuals: &mut StateResiduals,
    ) -> Result<Vec<UserBlock>> {
        let users = memory.len();
        let s = self.cfg.subcarriers;
        let n_s = self.cfg.streams;
        let kind = scheme.estimator(self.cfg.estimator);
        let rho = self.rho(kind);
        let phase = self.phase(scheme, ctx.block);
        let mut acc: Vec<Vec<SubcarrierAccumulator>> = (0..users)
            .map(|_| {
                (0..s)
                    .map(|_| SubcarrierAccumulator::new(n_s, users - 1))
                    .collect()
            })
            .collect();
        for (draw, realisation) in channels.iter().enumerate() {
            let mut states = Vec::with_capacity(users);
            for (user, h) in realisation.iter().enumerate() {
                let keys = self
                    .key(Purpose::SmallScale)
                    .trial(ctx.trial)
                    .block(ctx.block)
                    .draw(draw)
                    .user(user);
                let state = self.design(phase, kind, h, user, users, keys, ctx, &memory[user])?;
                record_draw(ledger, ctx.block, draw, user, h);
                let r = state.residuals(ctx.powers.p_t);
                residuals.power = residuals.power.max(r.power);
                residuals.first_stage = residuals.first_stage.max(r.first_stage);
                residuals.second_stage = residuals.second_stage.max(r.second_stage);
                residuals.composite = residuals.composite.max(r.composite);
                states.push(state);
            }
            if draw == 0 && phase == Phase::Fresh {
                for (m, st) in memory.iter_mut().zip(&states) {
                    m.first_stage = Some(st.first_stage.clone());
                    m.second_stage = Some(st.second_stage.clone());
                }
            }
            for (user, h) in realisation.iter().enumerate() {
                let st = &states[user];
                for nu in 0..s {
                    let projected =
                        st.second_stage[nu].adjoint() * (st.first_stage[nu].adjoint() * &h[nu]);
                    let desired = &projected * &st.precoders[nu];
                    let mut interference = Vec::with_capacity(users - 1);
                    for (other, ost) in states.iter().enumerate() {
                        if other != user {
                            interference.push(&projected * &ost.precoders[nu]);
                        }
                    }
                    acc[user][nu].push(&desired, &interference)?;
                }
            }
        }
        acc.iter()
            .map(|per_nu| {
                let rates = per_nu
                    .iter()
                    .map(SubcarrierAccumulator::finish)
                    .collect::<Result<Vec<_>>>()?;
                let uatf = rates.iter().map(|r| r.uatf).sum::<f64>() / s as f64;
                let perfect = rates.iter().map(|r| r.perfect_mean).sum::<f64>() / s as f64;
                Ok(UserBlock {
                    se: rho
                        * if scheme.has_perfect_csi() {
                            perfect
                        } else {
                            uatf
                        },
                    uatf_se: rho * uatf,
                    perfect_se: rho * perfect,
                    rho,
                    per_subcarrier: ctx.keep_subcarriers.then_some(rates),
                })
            })
            .collect()
    }

    fn precode(
        &self,
        estimate: &CMat,
        users: usize,
        p_t: f64,
    ) -> Result<(CMat, Option<PowerAllocation>)> {
        match self.cfg.precoder {
            PrecoderKind::Svd => {
                let (f, p) = svd_precoder(estimate, self.cfg.streams, p_t)?;
                Ok((f, Some(p)))
            }
            PrecoderKind::Mmse => {
                let (f, _) = mu_mmse_precoder(
                    estimate,
                    mmse_regularization(users, p_t),
                    p_t,
                    self.cfg.streams,
                )?;
                Ok((f, None))
            }
        }
    }

    /// Designs the beamformers of one user for one fading draw.
    #[allow(clippy::too_many_arguments)]
    fn design(
        &self,
        phase: Phase,
        kind: EstimatorKind,
        h: &[CMat],
        user: usize,
        users: usize,
        keys: StreamKey,
        ctx: &BlockContext<'_>,
        memory: &Memory,
    ) -> Result<BeamformerState> {
        let n_c = self.cfg.first_stage_outputs;
        let n_s = self.cfg.streams;
        let p_t = ctx.powers.p_t;
        let links = ctx.links;
        let mut alloc = Vec::new();
        let mut keep = |p: Option<PowerAllocation>, n: usize| {
            if let Some(p) = p {
                alloc.extend(std::iter::repeat_n(p, n));
            }
        };
        let w0 = init_second_stage(n_c, n_s)?;
        match phase {
            Phase::Genie => {
                let mut f = Vec::with_capacity(h.len());
                let mut q = Vec::with_capacity(h.len());
                for hn in h {
                    let (fn_, p) = self.precode(hn, users, p_t)?;
                    keep(p, 1);
                    q.push(select_first_stage(&(hn * &fn_), n_c)?);
                    f.push(fn_);
                }
                Ok(BeamformerState {
                    precoders: f,
                    first_stage: q,
                    second_stage: vec![w0; h.len()],
                    power_alloc: alloc,
                })
            }
            Phase::Fresh => {
                let h_hat = self.estimate(
                    kind,
                    &links.uplink_full,
                    user,
                    false,
                    h,
                    keys.purpose(Purpose::UplinkFullPilots),
                )?;
                let f = self.design_precoders(kind, &h_hat, users, p_t, &mut keep)?;
                let b: Vec<CMat> = h.iter().zip(&f).map(|(hn, fn_)| hn * fn_).collect();
                let b_hat = self.estimate(
                    kind,
                    &links.downlink,
                    user,
                    true,
                    &b,
                    keys.purpose(Purpose::DownlinkPrecodedPilots),
                )?;
                let q = self.design_combiners(kind, &b_hat, |m| select_first_stage(m, n_c))?;
                Ok(BeamformerState {
                    precoders: f,
                    first_stage: q,
                    second_stage: vec![w0; h.len()],
                    power_alloc: alloc,
                })
            }
            Phase::Tracking {
                freeze_second_stage,
            } => {
                let q = memory
                    .first_stage
                    .clone()
                    .ok_or_else(|| Error::invalid("held first stage missing"))?;
                let g: Vec<CMat> = h.iter().zip(&q).map(|(hn, qn)| qn.adjoint() * hn).collect();
                let g_hat = self.estimate(
                    kind,
                    &links.uplink_effective,
                    user,
                    true,
                    &g,
                    keys.purpose(Purpose::UplinkEffectivePilots),
                )?;
                let f = self.design_precoders(kind, &g_hat, users, p_t, &mut keep)?;
                let w = if freeze_second_stage {
                    memory
                        .second_stage
                        .clone()
                        .ok_or_else(|| Error::invalid("held second stage missing"))?
                } else {
                    let d: Vec<CMat> = g.iter().zip(&f).map(|(gn, fn_)| gn * fn_).collect();
                    let d_hat = self.estimate(
                        kind,
                        &links.downlink,
                        user,
                        true,
                        &d,
                        keys.purpose(Purpose::DownlinkEffectivePilots),
                    )?;
                    self.design_combiners(kind, &d_hat, |m| update_second_stage(m, n_s))?
                };
                Ok(BeamformerState {
                    precoders: f,
                    first_stage: q,
                    second_stage: w,
                    power_alloc: alloc,
                })
            }
        }
    }

    /// FD: every subcarrier. TD: the full-band tone grid for the raw channel,
    /// the subband grid for effective channels.
    fn estimate(
        &self,
        kind: EstimatorKind,
        link: &PilotLink,
        user: usize,
        effective: bool,
        truth: &[CMat],
        key: StreamKey,
    ) -> Result<Vec<CMat>> {
        let mut rng = key.rng();
        match kind {
            EstimatorKind::Fd => Ok(estimate_fd(link, truth, &mut rng)),
            EstimatorKind::Td => {
                let plan = if effective {
                    &self.subband_plans[user]
                } else {
                    &self.full_plans[user]
                };
                estimate_td(link, plan, truth, &mut rng)
            }
        }
    }

    /// FD designs per subcarrier; TD designs one precoder per subband from
    /// the row-stacked estimates so the effective channel stays short.
    fn design_precoders(
        &self,
        kind: EstimatorKind,
        estimates: &[CMat],
        users: usize,
        p_t: f64,
        keep: &mut impl FnMut(Option<PowerAllocation>, usize),
    ) -> Result<Vec<CMat>> {
        match kind {
            EstimatorKind::Fd => estimates
                .iter()
                .map(|e| {
                    let (f, p) = self.precode(e, users, p_t)?;
                    keep(p, 1);
                    Ok(f)
                })
                .collect(),
            EstimatorKind::Td => {
                let mut out = Vec::with_capacity(estimates.len());
                for band in self.subband_plans[0].band_ranges() {
                    let (f, p) =
                        self.precode(&stack_rows(&estimates[band.clone()])?, users, p_t)?;
                    keep(p, band.len());
                    out.extend(std::iter::repeat_n(f, band.len()));
                }
                Ok(out)
            }
        }
    }

    /// FD: per subcarrier. TD: per subband from the column-stacked estimates.
    fn design_combiners(
        &self,
        kind: EstimatorKind,
        estimates: &[CMat],
        select: impl Fn(&CMat) -> Result<CMat>,
    ) -> Result<Vec<CMat>> {
        match kind {
            EstimatorKind::Fd => estimates.iter().map(select).collect(),
            EstimatorKind::Td => {
                let mut out = Vec::with_capacity(estimates.len());
                for band in self.subband_plans[0].band_ranges() {
                    let mut c = select(&stack_cols(&estimates[band.clone()])?)?;
                    align_phases(&mut c, &estimates[band.clone()]);
                    out.extend(std::iter::repeat_n(c, band.len()));
                }
                Ok(out)
            }
        }
    }
}

struct BlockContext<'a> {
    trial: usize,
    block: usize,
    powers: Powers,
    links: &'a Links,
    keep_subcarriers: bool,
}

fn record_draw(ledger: &mut DefaultHasher, block: usize, draw: usize, user: usize, h: &[CMat]) {
    (block, draw, user).hash(ledger);
    for m in [h.first(), h.last()].into_iter().flatten() {
        for z in m.iter().take(2) {
            z.re.to_bits().hash(ledger);
            z.im.to_bits().hash(ledger);
        }
    }
}

/// Statistics of one user on one subcarrier across fading draws.
struct SubcarrierAccumulator {
    desired: MomentAccumulator,
    interference: Vec<SecondMomentAccumulator>,
    perfect: ScalarStats,
}

impl SubcarrierAccumulator {
    fn new(n_s: usize, interferers: usize) -> Self {
        Self {
            desired: MomentAccumulator::new(n_s, n_s),
            interference: (0..interferers)
                .map(|_| SecondMomentAccumulator::new(n_s))
                .collect(),
            perfect: ScalarStats::default(),
        }
    }

    fn push(&mut self, desired: &CMat, interference: &[CMat]) -> Result<()> {
        self.desired.push(desired);
        for (acc, x) in self.interference.iter_mut().zip(interference) {
            acc.push(x);
        }
        self.perfect.push(perfect_rate(desired, interference)?);
        Ok(())
    }

    fn finish(&self) -> Result<SubcarrierRates> {
        let stats = self.desired.finalize()?;
        let interference = self
            .interference
            .iter()
            .map(SecondMomentAccumulator::finalize)
            .collect::<Result<Vec<_>>>()?;
        Ok(SubcarrierRates {
            uatf: uatf_mu_rate(&stats, &interference)?,
            perfect_mean: self.perfect.mean,
            perfect_stderr: self.perfect.stderr(),
        })
    }
}

/// `log2 det(I + Eᴴ(I + Σ E_iE_iᴴ)⁻¹E)`; with no interferers this is the
/// single-user perfect-CSI rate.
pub fn perfect_rate(desired: &CMat, interference: &[CMat]) -> Result<f64> {
    if interference.is_empty() {
        return rate_of_effective(desired);
    }
    let n = desired.nrows();
    let mut c = CMat::identity(n, n);
    for x in interference {
        c += x * x.adjoint();
    }
    let chol = c.cholesky().ok_or_else(|| {
        Error::invalid("interference-plus-noise covariance is not positive definite")
    })?;
    let whitened = chol
        .l()
        .solve_lower_triangular(desired)
        .ok_or(Error::Singular { ratio: 0.0 })?;
    rate_of_effective(&whitened)
}

/// Empirical covariance of `(QW)ᴴn` for `samples` white noise vectors.
pub fn combined_noise_covariance<R: rand::Rng + ?Sized>(
    q: &CMat,
    w: &CMat,
    samples: usize,
    rng: &mut R,
) -> CMat {
    let u = q * w;
    let noise = crate::numerics::complex_gaussian(rng, q.nrows(), samples);
    let projected = u.adjoint() * noise;
    &projected * projected.adjoint() / Complex64::new(samples as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::desk();
        cfg.beam_coherence_time_s = 3.0 * cfg.coherence_time_s;
        cfg.beam_windows = 1;
        cfg.fading_draws = 3;
        cfg.trial_count = 2;
        cfg
    }

    fn plan(cfg: &ScenarioConfig) -> TrialPlan {
        TrialPlan {
            blocks: cfg.trajectory_blocks().unwrap(),
            motion: Motion::Trajectories,
            power: PowerMode::Configured,
            schemes: cfg.schemes.clone(),
            keep_subcarriers: true,
        }
    }

    #[test]
    fn perfect_rate_without_interference_is_the_single_user_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = crate::numerics::complex_gaussian(&mut rng, 2, 2);
        assert_eq!(
            perfect_rate(&e, &[]).unwrap(),
            rate_of_effective(&e).unwrap()
        );
        let x = crate::numerics::complex_gaussian(&mut rng, 2, 2);
        assert!(perfect_rate(&e, &[x]).unwrap() < rate_of_effective(&e).unwrap());
    }

    #[test]
    fn white_noise_stays_white_through_orthonormal_combiners() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = crate::numerics::complex_gaussian(&mut rng, 4, 2);
        let q = select_first_stage(&b, 3).unwrap();
        let w = update_second_stage(&crate::numerics::complex_gaussian(&mut rng, 3, 2), 2).unwrap();
        let c = combined_noise_covariance(&q, &w, 20_000, &mut rng);
        let dev = (c - CMat::identity(2, 2))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(dev < 0.05, "{dev}");
    }

    #[test]
    fn trials_are_reproducible_and_schemes_share_draws() {
        let cfg = small();
        let engine = Engine::new(&cfg).unwrap();
        let p = plan(&cfg);
        let a = engine.run_trial(1, &p).unwrap();
        let b = engine.run_trial(1, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.draw_ledgers.windows(2).all(|w| w[0] == w[1]));
        assert!(a.residuals.first_stage < 1e-12 && a.residuals.composite < 1e-12);
        assert!(a.residuals.power < 1e-9);
    }

    #[test]
    fn refresh_blocks_match_continuous_updating() {
        let cfg = small();
        let engine = Engine::new(&cfg).unwrap();
        let out = engine.run_trial(0, &plan(&cfg)).unwrap();
        let idx = |s| cfg.schemes.iter().position(|&x| x == s).unwrap();
        let first = &out.blocks[0];
        assert_eq!(first[idx(Scheme::Continuous)], first[idx(Scheme::FixedQTd)]);
        assert_eq!(first[idx(Scheme::Continuous)], first[idx(Scheme::FixedQw)]);
        assert_ne!(
            out.blocks[1][idx(Scheme::Continuous)],
            out.blocks[1][idx(Scheme::FixedQTd)]
        );
    }

    #[test]
    fn uatf_never_beats_perfect_csi_by_much() {
        let cfg = small();
        let engine = Engine::new(&cfg).unwrap();
        let out = engine.run_trial(0, &plan(&cfg)).unwrap();
        for ub in out.blocks.iter().flatten().flatten() {
            for r in ub.per_subcarrier.as_ref().unwrap() {
                assert!(r.uatf <= r.perfect_mean + 3.0 * r.perfect_stderr + 1e-9);
            }
        }
    }

    #[test]
    fn too_many_td_users_are_rejected() {
        let mut cfg = small();
        let t = cfg.ue_trajectories[0];
        cfg.ue_trajectories = vec![t; cfg.td_user_capacity() + 1];
        assert!(matches!(
            Engine::new(&cfg),
            Err(Error::PilotCapacity { .. })
        ));
    }
}
