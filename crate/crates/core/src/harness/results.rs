//! Curve results and their CSV/JSON serialisation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Which experiment produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    NmseSweep,
    SuTrajectory,
    MuTrajectory,
    SeVsSnr,
}

/// One named curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Pilot cost of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadEntry {
    pub estimator: EstimatorKind,
    /// Pilot symbols spent on one full-band estimate: `t_p·S` for FD and
    /// `t_p·L` for TD.
    pub pilot_symbols_spent: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
    /// Number of trials aggregated.
    pub trial_count: usize,
}

/// A set of curves over a common x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub kind: CurveKind,
    pub x_label: String,
    pub x_unit: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
    pub overhead: Vec<OverheadEntry>,
    pub metadata: RunMetadata,
}

impl RunResult {
    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// CSV with header `x,<name>_mean,<name>_stderr,...`, RFC 4180 quoting
    /// and LF line endings.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut header = vec!["x".to_string()];
        for s in &self.series {
            header.push(format!("{}_mean", s.name));
            header.push(format!("{}_stderr", s.name));
        }
        w.write_record(&header).map_err(ser)?;
        for (i, x) in self.x.iter().enumerate() {
            let mut row = vec![x.to_string()];
            for s in &self.series {
                row.push(s.mean[i].to_string());
                row.push(s.stderr[i].to_string());
            }
            w.write_record(&row).map_err(ser)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn render(self, result: &RunResult) -> Result<String> {
        match self {
            OutputFormat::Csv => result.to_csv(),
            OutputFormat::Json => result.to_json(),
        }
    }
}

/// Run-environment details kept out of the result body so results stay
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub code_version: String,
    pub unix_time_s: u64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the result to `out` plus a `.meta.json` sidecar, or to stdout when
/// `out` is `None`.
pub fn emit_results(result: &RunResult, format: OutputFormat, out: Option<&Path>) -> Result<()> {
    let body = format.render(result)?;
    let Some(path) = out else {
        let mut stdout = std::io::stdout().lock();
        return stdout
            .write_all(body.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            });
    };
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(path, body).map_err(io)?;
    let sidecar = Sidecar {
        config_hash: result.metadata.config_hash.clone(),
        code_version: result.metadata.code_version.clone(),
        unix_time_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let meta =
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serialization(e.to_string()))?;
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, meta).map_err(|source| Error::Io {
        path: meta_path.clone(),
        source,
    })
}
