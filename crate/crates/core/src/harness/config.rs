//! Scenario configuration, presets and validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{BlockClock, Point, Trajectory};
use crate::error::{Error, Result};
use crate::estimation::{td_offset_capacity, EstimatorKind};

/// Receiver processing schemes compared in trajectory runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Perfect CSI; precoder and both combiners refreshed every block.
    IdealDbf,
    /// Estimated CSI; the first-stage combiner is reselected every block.
    Continuous,
    /// First stage held per beam window, TD estimation.
    FixedQTd,
    /// First stage held per beam window, FD estimation.
    FixedQFd,
    /// Both combiners frozen after the first block of the run.
    #[serde(rename = "fixed-qw")]
    FixedQw,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::IdealDbf,
        Scheme::Continuous,
        Scheme::FixedQTd,
        Scheme::FixedQFd,
        Scheme::FixedQw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::IdealDbf => "ideal-dbf",
            Scheme::Continuous => "continuous",
            Scheme::FixedQTd => "fixed-q-td",
            Scheme::FixedQFd => "fixed-q-fd",
            Scheme::FixedQw => "fixed-qw",
        }
    }

    /// Estimator used for pilots and for the overhead factor.
    pub fn estimator(self, configured: EstimatorKind) -> EstimatorKind {
        match self {
            Scheme::FixedQTd => EstimatorKind::Td,
            Scheme::FixedQFd => EstimatorKind::Fd,
            _ => configured,
        }
    }

    pub fn has_perfect_csi(self) -> bool {
        self == Scheme::IdealDbf
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    /// SVD directions with water-filling.
    Svd,
    /// Per-user regularised MMSE.
    Mmse,
}

/// Named starting points for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Small arrays and few subcarriers; fast enough for tests.
    Desk,
    /// The full-size setup: 64×16 arrays, 512 subcarriers.
    PaperVii,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_position: Point,
    /// One trajectory per UE.
    pub ue_trajectories: Vec<Trajectory>,
    /// `M`.
    pub bs_antennas: usize,
    /// `K`.
    pub ue_antennas: usize,
    /// `N_s`.
    pub streams: usize,
    /// `N_c`, outputs of the first combining stage.
    pub first_stage_outputs: usize,
    /// `N_cl`.
    pub clusters: usize,
    /// `S`.
    pub subcarriers: usize,
    /// `L`, channel taps.
    pub taps: usize,
    /// `L_eff`, pilots per subband for effective-channel estimation.
    pub effective_taps: usize,
    /// `N_sub`.
    pub subbands: usize,
    /// `t_p`.
    pub pilot_len: usize,
    /// `t_c`, symbols per coherence block.
    pub block_len_symbols: usize,
    /// `N_d`; documents the data block, never used in rate formulas.
    pub data_symbols: usize,
    /// `P_t` in dB relative to the noise power.
    pub tx_power_db: f64,
    /// `P_r` in dB relative to the noise power.
    pub pilot_power_db: f64,
    pub carrier_ghz: f64,
    /// BS element spacing in wavelengths.
    pub bs_element_spacing: f64,
    /// UE element spacing in wavelengths.
    pub ue_element_spacing: f64,
    /// Extra attenuation of each cluster reflection.
    pub reflection_loss_db: f64,
    pub sample_period_s: f64,
    /// `T_C`.
    pub coherence_time_s: f64,
    /// `T_B`.
    pub beam_coherence_time_s: f64,
    /// Beam-coherence windows simulated along a trajectory.
    pub beam_windows: usize,
    pub trial_count: usize,
    pub master_seed: u64,
    pub schemes: Vec<Scheme>,
    /// Estimator of the ideal, continuous and fixed-QW schemes.
    pub estimator: EstimatorKind,
    pub precoder: PrecoderKind,
    /// Small-scale fading draws per block for the UatF statistics.
    pub fading_draws: usize,
    /// SNR grid of the NMSE sweep, in dB.
    pub nmse_snr_db: Vec<f64>,
    /// SNR grid of the SE-vs-SNR run, in dB.
    pub se_snr_db: Vec<f64>,
    /// Static UE position of the SE-vs-SNR run.
    pub se_position: Point,
}

impl ScenarioConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::PaperVii => Self::paper_vii(),
        }
    }

    pub fn desk() -> Self {
        Self {
            bs_position: [2.0, 5.0],
            ue_trajectories: vec![Trajectory {
                start_position_m: [10.0, 6.0],
                velocity_mps: [0.0, 20.0],
            }],
            bs_antennas: 8,
            ue_antennas: 4,
            streams: 2,
            first_stage_outputs: 3,
            clusters: 2,
            subcarriers: 64,
            taps: 4,
            effective_taps: 4,
            subbands: 4,
            pilot_len: 4,
            block_len_symbols: 200,
            data_symbols: 100,
            tx_power_db: 75.0,
            pilot_power_db: 75.0,
            carrier_ghz: 28.0,
            bs_element_spacing: 0.5,
            ue_element_spacing: 0.5,
            reflection_loss_db: 10.0,
            sample_period_s: 5e-9,
            coherence_time_s: 0.0102,
            beam_coherence_time_s: 0.102,
            beam_windows: 2,
            trial_count: 200,
            master_seed: 1,
            schemes: Scheme::ALL.to_vec(),
            estimator: EstimatorKind::Td,
            precoder: PrecoderKind::Svd,
            fading_draws: 8,
            nmse_snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            se_snr_db: vec![-10.0, 0.0, 10.0],
            se_position: [20.0, 10.0],
        }
    }

    pub fn paper_vii() -> Self {
        Self {
            ue_trajectories: vec![Trajectory {
                start_position_m: [20.0, 10.0],
                velocity_mps: [0.0, 5.0],
            }],
            tx_power_db: 90.0,
            pilot_power_db: 90.0,
            bs_antennas: 64,
            ue_antennas: 16,
            streams: 3,
            first_stage_outputs: 4,
            clusters: 3,
            subcarriers: 512,
            taps: 6,
            effective_taps: 6,
            subbands: 8,
            pilot_len: 16,
            sample_period_s: 8e-9,
            fading_draws: 500,
            se_position: [20.0, 15.0],
            ..Self::desk()
        }
    }

    /// Reads a TOML file whose keys override the chosen preset.
    pub fn from_toml_file(path: &Path, base: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base: Preset) -> Result<Self> {
        let overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(vec![e.to_string()]))?;
        let mut merged = toml::Table::try_from(Self::preset(base))
            .map_err(|e| Error::Serialization(e.to_string()))?;
        merge_tables(&mut merged, overrides);
        merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(vec![e.to_string()]))
    }

    pub fn users(&self) -> usize {
        self.ue_trajectories.len()
    }

    pub fn block_clock(&self) -> Result<BlockClock> {
        BlockClock::new(self.coherence_time_s, self.beam_coherence_time_s)
    }

    /// Blocks simulated along a trajectory.
    pub fn trajectory_blocks(&self) -> Result<usize> {
        Ok(self.block_clock()?.blocks_per_beam * self.beam_windows)
    }

    /// `S / N_sub`.
    pub fn subband_width(&self) -> usize {
        self.subcarriers / self.subbands.max(1)
    }

    /// Users that can be separated by distinct TD tone offsets.
    pub fn td_user_capacity(&self) -> usize {
        let full = td_offset_capacity(self.subcarriers, self.taps);
        if self.subbands == 0 || !self.subcarriers.is_multiple_of(self.subbands) {
            return full;
        }
        full.min(td_offset_capacity(
            self.subband_width(),
            self.effective_taps,
        ))
    }

    /// Every violated constraint, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        check(
            self.bs_antennas >= 1,
            "bs_antennas (M) must be at least 1".into(),
        );
        check(
            self.ue_antennas >= 1,
            "ue_antennas (K) must be at least 1".into(),
        );
        check(self.streams >= 1, "streams (N_s) must be at least 1".into());
        check(
            self.streams <= self.first_stage_outputs
                && self.first_stage_outputs <= self.ue_antennas,
            format!(
                "need N_s <= N_c <= K, got N_s = {}, N_c = {}, K = {}",
                self.streams, self.first_stage_outputs, self.ue_antennas
            ),
        );
        check(
            self.streams <= self.bs_antennas,
            format!("N_s = {} exceeds M = {}", self.streams, self.bs_antennas),
        );
        check(
            self.taps >= 1 && self.taps <= self.subcarriers,
            format!(
                "need 1 <= L <= S, got L = {}, S = {}",
                self.taps, self.subcarriers
            ),
        );
        let subbands_ok = self.subbands >= 1 && self.subcarriers.is_multiple_of(self.subbands);
        check(
            subbands_ok,
            format!(
                "S = {} must be divisible by N_sub = {}",
                self.subcarriers, self.subbands
            ),
        );
        if subbands_ok {
            check(
                self.effective_taps >= self.taps && self.effective_taps <= self.subband_width(),
                format!(
                    "need L <= L_eff <= S/N_sub, got L = {}, L_eff = {}, S/N_sub = {}",
                    self.taps,
                    self.effective_taps,
                    self.subband_width()
                ),
            );
        }
        check(
            self.pilot_len >= self.ue_antennas,
            format!(
                "t_p = {} must be at least K = {}",
                self.pilot_len, self.ue_antennas
            ),
        );
        let cap = td_offset_capacity(self.subcarriers, self.taps);
        check(
            self.ue_antennas <= cap,
            format!(
                "K = {} transmit antennas need distinct TD offsets but only {cap} fit S = {}, L = {}",
                self.ue_antennas, self.subcarriers, self.taps
            ),
        );
        check(
            self.block_len_symbols > self.pilot_len + self.streams,
            format!(
                "t_c = {} must exceed t_p + N_s = {}",
                self.block_len_symbols,
                self.pilot_len + self.streams
            ),
        );
        match BlockClock::new(self.coherence_time_s, self.beam_coherence_time_s) {
            Ok(_) => {}
            Err(e) => check(false, format!("block clock: {e}")),
        }
        check(
            self.beam_windows >= 1,
            "beam_windows must be at least 1".into(),
        );
        check(
            self.trial_count >= 1,
            "trial_count must be at least 1".into(),
        );
        check(
            self.fading_draws >= 2,
            format!("fading_draws = {} must be at least 2", self.fading_draws),
        );
        check(
            !self.ue_trajectories.is_empty(),
            "at least one UE trajectory is required".into(),
        );
        let finite = |p: &Point| p.iter().all(|x| x.is_finite());
        check(
            finite(&self.bs_position),
            "bs_position must be finite".into(),
        );
        check(
            self.ue_trajectories
                .iter()
                .all(|t| finite(&t.start_position_m) && finite(&t.velocity_mps)),
            "trajectory coordinates must be finite".into(),
        );
        check(
            finite(&self.se_position),
            "se_position must be finite".into(),
        );
        for (name, x) in [
            ("tx_power_db", self.tx_power_db),
            ("pilot_power_db", self.pilot_power_db),
            ("reflection_loss_db", self.reflection_loss_db),
        ] {
            check(x.is_finite(), format!("{name} must be finite"));
        }
        for (name, x) in [
            ("carrier_ghz", self.carrier_ghz),
            ("bs_element_spacing", self.bs_element_spacing),
            ("ue_element_spacing", self.ue_element_spacing),
            ("sample_period_s", self.sample_period_s),
        ] {
            check(x > 0.0 && x.is_finite(), format!("{name} must be positive"));
        }
        check(
            self.nmse_snr_db
                .iter()
                .chain(&self.se_snr_db)
                .all(|x| x.is_finite()),
            "SNR grids must be finite".into(),
        );
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// SHA-256 of the canonical JSON serialisation, hex encoded.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// dB to linear power.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
