//! The four experiments, each split into a mergeable per-shard aggregate and
//! a final [`RunResult`].
//!
//! Trials run in parallel but are folded in trial order, so a result depends
//! only on the configuration and the trial range.

use std::ops::Range;

use rayon::prelude::*;

use crate::beamforming::StateResiduals;
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_fd, estimate_td, pilot_symbols_spent, ErrorEnergy, EstimatorKind, PilotLink, TdPlan,
};

use super::config::{db_to_linear, ScenarioConfig, Scheme};
use super::engine::{Engine, Motion, PowerMode, TrialOutcome, TrialPlan};
use super::results::{CurveKind, OverheadEntry, RunMetadata, RunResult, Series, SCHEMA_VERSION};
use super::rng::Purpose;
use super::stats::{RatioStats, ScalarStats};

/// Schemes compared in the SE-vs-SNR run.
pub const SNR_SCHEMES: [Scheme; 2] = [Scheme::FixedQTd, Scheme::FixedQFd];

fn metadata(cfg: &ScenarioConfig, trials: usize) -> RunMetadata {
    RunMetadata {
        config_hash: cfg.config_hash(),
        master_seed: cfg.master_seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        trial_count: trials,
    }
}

fn overhead(engine: &Engine) -> Vec<OverheadEntry> {
    let cfg = engine.config();
    [EstimatorKind::Fd, EstimatorKind::Td]
        .into_iter()
        .map(|kind| {
            let spent = pilot_symbols_spent(kind, cfg.pilot_len, cfg.subcarriers, cfg.taps);
            OverheadEntry {
                estimator: kind,
                pilot_symbols_spent: spent,
                rho: engine.rho(kind),
            }
        })
        .collect()
}

fn check_range(cfg: &ScenarioConfig, trials: &Range<usize>) -> Result<()> {
    if trials.is_empty() || trials.end > cfg.trial_count {
        return Err(Error::InvalidConfig(vec![format!(
            "trial range {}..{} must be non-empty and within 0..{}",
            trials.start, trials.end, cfg.trial_count
        )]));
    }
    Ok(())
}

/// Runs `f` on every trial in parallel and returns the outputs in trial order.
fn par_trials<T: Send>(
    trials: Range<usize>,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    trials.into_par_iter().map(f).collect()
}

/// NMSE of both estimators on a shard of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct NmseAggregate {
    pub snr_db: Vec<f64>,
    pub fd: Vec<RatioStats>,
    pub td: Vec<RatioStats>,
    /// `Σ‖H‖²_F / (K·M·S)` over trials, the mean per-entry channel energy.
    pub energy: ScalarStats,
}

impl NmseAggregate {
    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.fd.iter_mut().zip(&other.fd) {
            a.merge(b);
        }
        for (a, b) in self.td.iter_mut().zip(&other.td) {
            a.merge(b);
        }
        self.energy.merge(&other.energy);
    }
}

/// NMSE sweep over `trials`. Each trial draws one channel of UE 0 in the
/// first block and sets `P_r = SNR / g` with `g` the per-entry path gain, so
/// the x axis is the per-antenna receive SNR during training.
pub fn nmse_shard(cfg: &ScenarioConfig, trials: Range<usize>) -> Result<NmseAggregate> {
    check_range(cfg, &trials)?;
    let engine = Engine::new(cfg)?;
    let plan = TdPlan::full_band(cfg.subcarriers, cfg.taps, 0)?;
    let outcomes = par_trials(trials, |trial| {
        let clusters = engine.clusters(trial, &Motion::Trajectories);
        let geom = engine
            .geometries(&clusters, &Motion::Trajectories, 1)?
            .swap_remove(0);
        let h = engine.channel_from(&geom, engine.key(Purpose::NmseChannel).trial(trial), 1)?;
        let g = geom.per_entry_gain();
        let noise = engine.key(Purpose::NmseNoise).trial(trial);
        let mut fd = Vec::with_capacity(cfg.nmse_snr_db.len());
        let mut td = Vec::with_capacity(cfg.nmse_snr_db.len());
        for &snr in &cfg.nmse_snr_db {
            let link = PilotLink::uplink(&engine.pilot_book().uplink_full, db_to_linear(snr) / g)?;
            fd.push(ErrorEnergy::of(
                &estimate_fd(&link, &h, &mut noise.draw(0).rng()),
                &h,
            )?);
            td.push(ErrorEnergy::of(
                &estimate_td(&link, &plan, &h, &mut noise.draw(1).rng())?,
                &h,
            )?);
        }
        let energy = h.iter().map(|m| m.norm_squared()).sum::<f64>();
        Ok((
            fd,
            td,
            energy / (g * (cfg.ue_antennas * cfg.bs_antennas * cfg.subcarriers) as f64),
        ))
    })?;
    let n = cfg.nmse_snr_db.len();
    let mut agg = NmseAggregate {
        snr_db: cfg.nmse_snr_db.clone(),
        fd: vec![RatioStats::default(); n],
        td: vec![RatioStats::default(); n],
        energy: ScalarStats::default(),
    };
    for (fd, td, energy) in outcomes {
        for i in 0..n {
            agg.fd[i].push(fd[i].error, fd[i].energy);
            agg.td[i].push(td[i].error, td[i].energy);
        }
        agg.energy.push(energy);
    }
    Ok(agg)
}

pub fn nmse_result(cfg: &ScenarioConfig, agg: &NmseAggregate) -> Result<RunResult> {
    let engine = Engine::new(cfg)?;
    let series = |name: &str, stats: &[RatioStats]| Series {
        name: name.to_string(),
        mean: stats.iter().map(RatioStats::ratio_db).collect(),
        stderr: stats.iter().map(RatioStats::ratio_db_stderr).collect(),
    };
    Ok(RunResult {
        schema_version: SCHEMA_VERSION,
        kind: CurveKind::NmseSweep,
        x_label: "snr".into(),
        x_unit: "dB".into(),
        x: agg.snr_db.clone(),
        series: vec![series("fd", &agg.fd), series("td", &agg.td)],
        overhead: overhead(&engine),
        metadata: metadata(cfg, agg.energy.count as usize),
    })
}

pub fn run_nmse_sweep(cfg: &ScenarioConfig) -> Result<RunResult> {
    let agg = nmse_shard(cfg, 0..cfg.trial_count)?;
    nmse_result(cfg, &agg)
}

/// Per-point statistics of several named curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveAggregate {
    pub x: Vec<f64>,
    pub names: Vec<String>,
    /// `[series][point]`.
    pub stats: Vec<Vec<ScalarStats>>,
    /// Time averages, `[series]`; empty for the SE-vs-SNR run.
    pub time_average: Vec<ScalarStats>,
    pub trials: usize,
    /// Worst beamformer contract deviation seen.
    pub residuals: StateResiduals,
    /// Trials in which the schemes did not consume identical channel draws.
    pub ledger_mismatches: usize,
    pub dropped_paths: usize,
}

impl CurveAggregate {
    fn new(x: Vec<f64>, names: Vec<String>, with_time_average: bool) -> Self {
        let points = x.len();
        let series = names.len();
        Self {
            x,
            stats: vec![vec![ScalarStats::default(); points]; series],
            time_average: if with_time_average {
                vec![ScalarStats::default(); series]
            } else {
                Vec::new()
            },
            names,
            trials: 0,
            residuals: StateResiduals::default(),
            ledger_mismatches: 0,
            dropped_paths: 0,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in self.time_average.iter_mut().zip(&other.time_average) {
            a.merge(b);
        }
        self.trials += other.trials;
        self.residuals = max_residuals(self.residuals, other.residuals);
        self.ledger_mismatches += other.ledger_mismatches;
        self.dropped_paths += other.dropped_paths;
    }

    fn absorb(&mut self, outcome: &TrialOutcome) {
        self.trials += 1;
        self.residuals = max_residuals(self.residuals, outcome.residuals);
        self.dropped_paths += outcome.dropped_paths;
        if outcome.draw_ledgers.windows(2).any(|w| w[0] != w[1]) {
            self.ledger_mismatches += 1;
        }
    }

    pub fn series(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn into_result(
        self,
        cfg: &ScenarioConfig,
        engine: &Engine,
        kind: CurveKind,
        label: &str,
        unit: &str,
    ) -> RunResult {
        let series = self
            .names
            .iter()
            .zip(&self.stats)
            .map(|(name, stats)| Series {
                name: name.clone(),
                mean: stats.iter().map(|s| s.mean).collect(),
                stderr: stats.iter().map(ScalarStats::stderr).collect(),
            })
            .collect();
        RunResult {
            schema_version: SCHEMA_VERSION,
            kind,
            x_label: label.into(),
            x_unit: unit.into(),
            x: self.x,
            series,
            overhead: overhead(engine),
            metadata: metadata(cfg, self.trials),
        }
    }
}

fn max_residuals(a: StateResiduals, b: StateResiduals) -> StateResiduals {
    StateResiduals {
        power: a.power.max(b.power),
        first_stage: a.first_stage.max(b.first_stage),
        second_stage: a.second_stage.max(b.second_stage),
        composite: a.composite.max(b.composite),
    }
}

/// Plan of a trajectory run.
pub fn trajectory_plan(cfg: &ScenarioConfig, keep_subcarriers: bool) -> Result<TrialPlan> {
    Ok(TrialPlan {
        blocks: cfg.trajectory_blocks()?,
        motion: Motion::Trajectories,
        power: PowerMode::Configured,
        schemes: cfg.schemes.clone(),
        keep_subcarriers,
    })
}

/// Raw outcomes of trajectory trials, in trial order.
pub fn trajectory_trials(
    cfg: &ScenarioConfig,
    trials: Range<usize>,
    keep_subcarriers: bool,
) -> Result<Vec<TrialOutcome>> {
    check_range(cfg, &trials)?;
    let engine = Engine::new(cfg)?;
    let plan = trajectory_plan(cfg, keep_subcarriers)?;
    par_trials(trials, |t| engine.run_trial(t, &plan))
}

fn block_times(engine: &Engine, blocks: usize) -> Vec<f64> {
    (1..=blocks)
        .map(|b| engine.clock().block_start_s(b))
        .collect()
}

/// Per-block UatF SE of every scheme for the single-user trajectory (UE 0
/// of each trial is the only user simulated when the config lists one).
pub fn su_trajectory_shard(cfg: &ScenarioConfig, trials: Range<usize>) -> Result<CurveAggregate> {
    if cfg.users() != 1 {
        return Err(Error::InvalidConfig(vec![format!(
            "su-trajectory needs exactly one UE trajectory, found {}",
            cfg.users()
        )]));
    }
    let engine = Engine::new(cfg)?;
    let blocks = cfg.trajectory_blocks()?;
    let names = cfg.schemes.iter().map(|s| s.name().to_string()).collect();
    let mut agg = CurveAggregate::new(block_times(&engine, blocks), names, true);
    for outcome in trajectory_trials(cfg, trials, false)? {
        agg.absorb(&outcome);
        for si in 0..cfg.schemes.len() {
            let mut avg = 0.0;
            for (b, per_scheme) in outcome.blocks.iter().enumerate() {
                let se = per_scheme[si][0].se;
                agg.stats[si][b].push(se);
                avg += se;
            }
            agg.time_average[si].push(avg / blocks as f64);
        }
    }
    Ok(agg)
}

pub fn su_trajectory_result(cfg: &ScenarioConfig, agg: CurveAggregate) -> Result<RunResult> {
    let engine = Engine::new(cfg)?;
    Ok(agg.into_result(cfg, &engine, CurveKind::SuTrajectory, "time", "s"))
}

pub fn run_su_trajectory(cfg: &ScenarioConfig) -> Result<RunResult> {
    su_trajectory_result(cfg, su_trajectory_shard(cfg, 0..cfg.trial_count)?)
}

/// Per-user and sum UatF SE of every scheme for the multi-user trajectory.
/// Series are named `<scheme>_ue<u>` (1-based) and `<scheme>_sum`.
pub fn mu_trajectory_shard(cfg: &ScenarioConfig, trials: Range<usize>) -> Result<CurveAggregate> {
    let engine = Engine::new(cfg)?;
    let users = cfg.users();
    let blocks = cfg.trajectory_blocks()?;
    let mut names = Vec::new();
    for s in &cfg.schemes {
        for u in 1..=users {
            names.push(format!("{}_ue{u}", s.name()));
        }
        names.push(format!("{}_sum", s.name()));
    }
    let mut agg = CurveAggregate::new(block_times(&engine, blocks), names, true);
    for outcome in trajectory_trials(cfg, trials, false)? {
        agg.absorb(&outcome);
        for si in 0..cfg.schemes.len() {
            let base = si * (users + 1);
            let mut avg = vec![0.0; users + 1];
            for (b, per_scheme) in outcome.blocks.iter().enumerate() {
                let mut sum = 0.0;
                for (u, ub) in per_scheme[si].iter().enumerate() {
                    agg.stats[base + u][b].push(ub.se);
                    avg[u] += ub.se;
                    sum += ub.se;
                }
                agg.stats[base + users][b].push(sum);
                avg[users] += sum;
            }
            for (k, a) in avg.iter().enumerate() {
                agg.time_average[base + k].push(a / blocks as f64);
            }
        }
    }
    Ok(agg)
}

pub fn mu_trajectory_result(cfg: &ScenarioConfig, agg: CurveAggregate) -> Result<RunResult> {
    let engine = Engine::new(cfg)?;
    Ok(agg.into_result(cfg, &engine, CurveKind::MuTrajectory, "time", "s"))
}

pub fn run_mu_trajectory(cfg: &ScenarioConfig) -> Result<RunResult> {
    mu_trajectory_result(cfg, mu_trajectory_shard(cfg, 0..cfg.trial_count)?)
}

/// Time-averaged UatF SE of the fixed-Q schemes for a static UE at
/// `se_position`, one beam window per SNR point. Each trial scales both
/// powers so the per-entry training SNR equals the grid value.
pub fn se_vs_snr_shard(cfg: &ScenarioConfig, trials: Range<usize>) -> Result<CurveAggregate> {
    check_range(cfg, &trials)?;
    let engine = Engine::new(cfg)?;
    let blocks = engine.clock().blocks_per_beam;
    let names = SNR_SCHEMES.iter().map(|s| s.name().to_string()).collect();
    let mut agg = CurveAggregate::new(cfg.se_snr_db.clone(), names, false);
    let per_trial = par_trials(trials, |t| {
        cfg.se_snr_db
            .iter()
            .map(|&snr| {
                let plan = TrialPlan {
                    blocks,
                    motion: Motion::Static(cfg.se_position),
                    power: PowerMode::Snr(db_to_linear(snr)),
                    schemes: SNR_SCHEMES.to_vec(),
                    keep_subcarriers: false,
                };
                engine.run_trial(t, &plan)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for outcomes in per_trial {
        for (p, outcome) in outcomes.iter().enumerate() {
            agg.residuals = max_residuals(agg.residuals, outcome.residuals);
            agg.dropped_paths += outcome.dropped_paths;
            if outcome.draw_ledgers.windows(2).any(|w| w[0] != w[1]) {
                agg.ledger_mismatches += 1;
            }
            for si in 0..SNR_SCHEMES.len() {
                let avg = outcome.blocks.iter().map(|b| b[si][0].se).sum::<f64>() / blocks as f64;
                agg.stats[si][p].push(avg);
            }
        }
        agg.trials += 1;
    }
    Ok(agg)
}

pub fn se_vs_snr_result(cfg: &ScenarioConfig, agg: CurveAggregate) -> Result<RunResult> {
    let engine = Engine::new(cfg)?;
    Ok(agg.into_result(cfg, &engine, CurveKind::SeVsSnr, "snr", "dB"))
}

pub fn run_se_vs_snr(cfg: &ScenarioConfig) -> Result<RunResult> {
    se_vs_snr_result(cfg, se_vs_snr_shard(cfg, 0..cfg.trial_count)?)
}
