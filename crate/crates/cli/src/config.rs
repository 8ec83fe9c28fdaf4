//! Run configuration: one JSON document per invocation.

use std::path::{Path, PathBuf};

use mimo_noma::search::SearchConfig;
use mimo_noma::SystemConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Rate tuple in nats: membership point for `capacity`, target for `search`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate_ese: Option<EseBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
}

/// One swept user: `points` log-spaced values of `γ_user` in `[from, to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub user: usize,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesBlock {
    /// Axes of a Cartesian grid; unswept users keep their `gamma` value.
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub cross_check: bool,
    #[serde(default = "default_quadrature_tol")]
    pub quadrature_tol: f64,
    #[serde(default = "default_decoder_tol")]
    pub decoder_tol: f64,
}

fn default_quadrature_tol() -> f64 {
    1e-8
}

fn default_decoder_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecoderSpec {
    Matched {
        #[serde(default = "default_margin")]
        margin: f64,
    },
    Genie,
    /// Per-user `[rho, psi]` breakpoints, interpolated linearly.
    Table {
        tables: Vec<Vec<[f64; 2]>>,
    },
}

fn default_margin() -> f64 {
    0.05
}

impl Default for DecoderSpec {
    fn default() -> Self {
        DecoderSpec::Matched {
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackBlock {
    #[serde(default)]
    pub decoder: DecoderSpec,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_track_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    mimo_noma::track::DEFAULT_MAX_ITER
}

fn default_track_tol() -> f64 {
    mimo_noma::track::DEFAULT_TOL
}

impl Default for TrackBlock {
    fn default() -> Self {
        Self {
            decoder: DecoderSpec::default(),
            max_iter: default_max_iter(),
            tol: default_track_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EseBlock {
    pub v: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Allowed relative error between empirical and predicted SNR.
    #[serde(default = "default_snr_tol")]
    pub tol: f64,
}

fn default_trials() -> usize {
    100_000
}

fn default_snr_tol() -> f64 {
    0.03
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Reads a config from a path, or from stdin for `-`.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = if path.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin()).map_err(|e| CliError::Io(format!("stdin: {e}")))?
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
    };
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Serialize)]
struct HashInput<'a> {
    command: &'a str,
    config: &'a RunConfig,
    tol: Option<f64>,
    seed: Option<u64>,
}

/// SHA-256 over the canonical serialization of everything that affects the
/// numbers: the command, the config without its output block, and the
/// `--tol`/`--seed` overrides.
pub fn config_hash(command: &str, config: &RunConfig, tol: Option<f64>, seed: Option<u64>) -> String {
    let mut c = config.clone();
    c.output = None;
    let canonical = serde_json::to_string(&HashInput {
        command,
        config: &c,
        tol,
        seed,
    })
    .expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}
