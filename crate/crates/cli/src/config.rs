//! Run configuration file (TOML). See the README for the full grammar.

use std::path::{Path, PathBuf};

use pqcan::crypto::{
    default_profiles, load_profiles_file, AlgorithmProfile, ComputeTimeModel, ProfileError, TimingDistribution,
};
use pqcan::ecu::EcuConfig;
use pqcan::experiment::CampaignSpec;
use pqcan::frame::{BitRate, StuffingModel};
use pqcan::time::SimDuration;
use serde::Deserialize;
use thiserror::Error;

pub const ENV_PROFILES: &str = "PQCAN_PROFILES";
pub const ENV_SEED: &str = "PQCAN_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Profiles(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Markdown,
    #[default]
    Both,
}

impl Format {
    pub fn markdown(self) -> bool {
        matches!(self, Format::Markdown | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    campaign: RawCampaign,
    #[serde(default)]
    profiles: RawProfiles,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    ecu: Vec<RawEcu>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    algorithms: Algorithms,
    #[serde(default = "default_configs")]
    configs: Vec<String>,
    #[serde(default = "default_iterations")]
    iterations: u32,
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    background_load: f64,
    stuffing: Option<String>,
    #[serde(default)]
    jitter_ms: f64,
    #[serde(default = "default_timeout_ms")]
    receiver_timeout_ms: f64,
    #[serde(default)]
    inverted_priority: bool,
    compute_model: Option<String>,
    outlier_mad: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Algorithms {
    All(String),
    List(Vec<String>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfiles {
    path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    #[serde(default)]
    format: Format,
    #[serde(default)]
    trace: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEcu {
    name: String,
    cpu_mhz: f64,
    bit_rate: u32,
}

fn default_configs() -> Vec<String> {
    vec!["high".into(), "mid".into(), "low".into()]
}

fn default_iterations() -> u32 {
    100
}

fn default_timeout_ms() -> f64 {
    2000.0
}

#[derive(Debug)]
pub struct RunConfig {
    pub spec: CampaignSpec,
    /// `None` means the bundled profiles.
    pub profiles_path: Option<PathBuf>,
    pub profiles: Vec<AlgorithmProfile>,
    pub out_dir: PathBuf,
    pub format: Format,
    pub trace: bool,
}

pub fn parse_compute_model(s: &str) -> Result<ComputeTimeModel, ConfigError> {
    match s {
        "table_driven" => Ok(ComputeTimeModel::TableDriven(TimingDistribution::LogNormal)),
        "table_driven_truncated" => Ok(ComputeTimeModel::TableDriven(TimingDistribution::TruncatedNormal)),
        "cycle_based" => Ok(ComputeTimeModel::CycleBased),
        other => Err(ConfigError::Invalid(format!(
            "unknown compute_model `{other}` (table_driven, table_driven_truncated or cycle_based)"
        ))),
    }
}

fn millis(what: &str, ms: f64) -> Result<SimDuration, ConfigError> {
    if !ms.is_finite() || ms < 0.0 {
        return Err(ConfigError::Invalid(format!("{what} must be a non-negative number of milliseconds")));
    }
    Ok(SimDuration::from_millis_f64(ms))
}

/// Resolves the profile source: the environment wins over the file.
pub fn load_profiles_from(path: Option<&Path>) -> Result<Vec<AlgorithmProfile>, ConfigError> {
    match path {
        Some(p) => Ok(load_profiles_file(p)?),
        None => Ok(default_profiles()),
    }
}

pub fn env_profiles_path() -> Option<PathBuf> {
    std::env::var_os(ENV_PROFILES).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(ENV_SEED) {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::Invalid(format!("{ENV_SEED}=`{v}` is not an unsigned integer"))),
        _ => Ok(None),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parses `text` as if read from `path`; relative paths inside resolve
    /// against the file's directory.
    pub fn parse(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        let raw: RawFile = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let c = raw.campaign;

        let profiles_path = env_profiles_path().or_else(|| raw.profiles.path.map(|p| base.join(p)));
        let profiles = load_profiles_from(profiles_path.as_deref())?;

        let algorithms = match c.algorithms {
            Algorithms::All(s) if s == "all" => profiles.iter().map(|p| p.name.clone()).collect(),
            Algorithms::All(s) => {
                return Err(ConfigError::Invalid(format!(
                    "algorithms must be a list of names or \"all\", got \"{s}\""
                )))
            }
            Algorithms::List(v) => v,
        };

        let mut custom = Vec::new();
        for e in raw.ecu {
            let hz = (e.cpu_mhz * 1e6).round();
            if hz.is_nan() || hz < 1.0 {
                return Err(ConfigError::Invalid(format!("ecu `{}` needs cpu_mhz > 0", e.name)));
            }
            let rate = BitRate::new(e.bit_rate).map_err(|err| ConfigError::Invalid(format!("ecu `{}`: {err}", e.name)))?;
            let ecu = EcuConfig::new(e.name, hz as u64, rate).map_err(|err| ConfigError::Invalid(err.to_string()))?;
            custom.push(ecu);
        }
        let configs = c
            .configs
            .iter()
            .map(|name| {
                custom
                    .iter()
                    .find(|e| &e.name == name)
                    .cloned()
                    .map_or_else(|| EcuConfig::preset(name), Ok)
                    .map_err(|_| ConfigError::Invalid(format!("unknown ECU config `{name}` (no preset or [[ecu]] entry)")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let stuffing = match c.stuffing.as_deref() {
            None => StuffingModel::default(),
            Some(s) => s.parse().map_err(|e| ConfigError::Invalid(format!("stuffing: {e}")))?,
        };
        let compute_model = match c.compute_model.as_deref() {
            None => ComputeTimeModel::default(),
            Some(s) => parse_compute_model(s)?,
        };
        let receiver_timeout = millis("receiver_timeout_ms", c.receiver_timeout_ms)?;
        if receiver_timeout == SimDuration::ZERO {
            return Err(ConfigError::Invalid("receiver_timeout_ms must be positive".into()));
        }
        if let Some(k) = c.outlier_mad {
            if k.is_nan() || k <= 0.0 {
                return Err(ConfigError::Invalid("outlier_mad must be positive".into()));
            }
        }

        let spec = CampaignSpec {
            algorithms,
            configs,
            iterations: c.iterations,
            master_seed: env_seed()?.unwrap_or(c.master_seed),
            background_load: c.background_load,
            stuffing,
            jitter: millis("jitter_ms", c.jitter_ms)?,
            receiver_timeout,
            inverted_priority: c.inverted_priority,
            compute_model,
            outlier_mad: c.outlier_mad,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for name in &spec.algorithms {
            if pqcan::crypto::find_profile(&profiles, name).is_none() {
                return Err(ConfigError::Invalid(format!("unknown profile `{name}`")));
            }
        }

        Ok(RunConfig {
            spec,
            profiles_path,
            profiles,
            out_dir: raw.output.dir.map(|d| base.join(d)).unwrap_or_else(|| PathBuf::from("results")),
            format: raw.output.format,
            trace: raw.output.trace,
        })
    }
}
