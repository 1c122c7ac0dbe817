//! Experiment harness: configuration, the trial engine, the four run types
//! and result output.

pub mod config;
pub mod engine;
pub mod results;
pub mod rng;
pub mod runs;
pub mod stats;

pub use config::{PrecoderKind, Preset, ScenarioConfig, Scheme};
pub use engine::{Engine, Motion, PowerMode, TrialOutcome, TrialPlan};
pub use results::{emit_results, OutputFormat, RunResult};
pub use runs::{run_mu_trajectory, run_nmse_sweep, run_se_vs_snr, run_su_trajectory};
