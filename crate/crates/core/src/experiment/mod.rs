//! Campaign runner: algorithms x ECU configs x iterations, aggregated into
//! one [`Metrics`] row per cell.
//!
//! Every session gets its own seed from
//! [`session_seed`](crate::seed::session_seed)`(master, algorithm, config,
//! iteration)`; the bus, compute clock and mock backend draw from named
//! sub-streams of it. No RNG state is shared between sessions, so results do
//! not depend on the iteration count or on how cells are scheduled.

pub mod report;
pub mod stats;

use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::bus::{Bus, BusError, BusEvent, TrafficGenConfig};
use crate::crypto::{
    check_model, find_profile, AlgorithmProfile, ComputeTimeModel, Kind, MockBackend, OpClock, TimingError,
};
use crate::ecu::EcuConfig;
use crate::frame::StuffingModel;
use crate::protocol::{
    self, attach_endpoints, crypto_only_overhead, nominal_time, ProtocolError, SessionConfig, SessionRecord,
    SessionResult,
};
use crate::seed::{session_seed, stream};
use crate::time::SimDuration;
use crate::transport::TransportError;

pub use report::{read_results_csv, render_markdown, write_results_csv, write_sessions_csv, ReportError};
pub use stats::{mad_filter, summarize, Summary};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("background load must lie in [0, 1), got {0}")]
    InvalidLoad(f64),
    #[error("campaign has no algorithms or no configs")]
    EmptyCampaign,
    #[error("cannot aggregate an empty result list")]
    EmptyResults,
    #[error("scaling check needs at least two configs, got {0}")]
    TooFewConfigs(usize),
    #[error("{algorithm} on {config}: {source}")]
    Timing {
        algorithm: String,
        config: String,
        source: TimingError,
    },
    #[error("{algorithm} on {config}, iteration {iteration}: {source}")]
    Session {
        algorithm: String,
        config: String,
        iteration: u32,
        source: ProtocolError,
    },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub algorithms: Vec<String>,
    pub configs: Vec<EcuConfig>,
    pub iterations: u32,
    pub master_seed: u64,
    /// Fraction of bus time used by the background generator.
    pub background_load: f64,
    pub stuffing: StuffingModel,
    pub jitter: SimDuration,
    pub receiver_timeout: SimDuration,
    /// Protocol on 0x7FE/0x7FF below the background traffic.
    pub inverted_priority: bool,
    pub compute_model: ComputeTimeModel,
    /// Drop values beyond `k` scaled MADs before computing statistics.
    pub outlier_mad: Option<f64>,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        CampaignSpec {
            algorithms: Vec::new(),
            configs: EcuConfig::presets(),
            iterations: 100,
            master_seed: 0,
            background_load: 0.0,
            stuffing: StuffingModel::default(),
            jitter: SimDuration::ZERO,
            receiver_timeout: SimDuration::from_secs(2),
            inverted_priority: false,
            compute_model: ComputeTimeModel::default(),
            outlier_mad: None,
        }
    }
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.iterations == 0 {
            return Err(ExperimentError::NoIterations);
        }
        if !(0.0..1.0).contains(&self.background_load) {
            return Err(ExperimentError::InvalidLoad(self.background_load));
        }
        if self.algorithms.is_empty() || self.configs.is_empty() {
            return Err(ExperimentError::EmptyCampaign);
        }
        Ok(())
    }

    fn session_config(&self, algorithm: &str) -> SessionConfig {
        let mut cfg = SessionConfig::new(algorithm);
        if self.inverted_priority {
            cfg = cfg.inverted_priority();
        }
        cfg.receiver_timeout = self.receiver_timeout;
        cfg.start_jitter = self.jitter;
        cfg
    }

    fn generator_ids(&self) -> (u16, u16) {
        if self.inverted_priority {
            (0x100, 0x7FD)
        } else {
            (0x100, 0x7FF)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl From<Summary> for Stat {
    fn from(s: Summary) -> Self {
        Stat { mean: s.mean, std: s.std }
    }
}

/// Aggregated statistics of one (algorithm, config) cell. Timing fields
/// cover successful sessions only and are absent when there were none.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub algorithm: String,
    pub kind: Kind,
    pub config: String,
    pub security_level: u8,
    pub n_iterations: u32,
    pub success_rate: f64,
    pub keygen: Option<Stat>,
    pub op2: Option<Stat>,
    pub op3: Option<Stat>,
    pub overhead: Option<Stat>,
    pub crypto_only: Option<Stat>,
    pub bytes_on_wire_mean: Option<f64>,
}

/// Statistics for one cell. `nominal` is subtracted from DSA wall-clock
/// times to form the overhead.
pub fn aggregate(
    profile: &AlgorithmProfile,
    config: &str,
    results: &[SessionResult],
    nominal: SimDuration,
    outlier_mad: Option<f64>,
) -> Result<Metrics, ExperimentError> {
    if results.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    let ok: Vec<&SessionResult> = results.iter().filter(|r| r.success).collect();
    let stat = |f: &dyn Fn(&SessionResult) -> Option<SimDuration>| -> Option<Stat> {
        let mut v: Vec<f64> = ok.iter().filter_map(|r| f(r)).map(SimDuration::as_millis_f64).collect();
        if let Some(k) = outlier_mad {
            v = mad_filter(&v, k);
        }
        summarize(&v).map(Stat::from)
    };
    let bytes: Vec<f64> = ok.iter().map(|r| r.bytes_on_wire as f64).collect();
    Ok(Metrics {
        algorithm: profile.name.clone(),
        kind: profile.kind,
        config: config.to_string(),
        security_level: profile.security_level,
        n_iterations: results.len() as u32,
        success_rate: ok.len() as f64 / results.len() as f64,
        keygen: stat(&|r| r.keygen),
        op2: stat(&|r| r.op2),
        op3: stat(&|r| r.op3),
        overhead: stat(&|r| protocol::overhead(r, nominal)),
        crypto_only: stat(&crypto_only_overhead),
        bytes_on_wire_mean: summarize(&bytes).map(|s| s.mean),
    })
}

/// Unloaded wire time of the bare DSA message for `ecu` under `stuffing`.
pub fn dsa_nominal(cfg: &SessionConfig, ecu: &EcuConfig, stuffing: StuffingModel) -> Result<SimDuration, TransportError> {
    nominal_time(cfg.message_length, ecu.bit_rate, stuffing)
}

/// Runs one session with seed `seed`. With `trace` the bus event trace is
/// returned as well.
pub fn run_one(
    spec: &CampaignSpec,
    profile: &AlgorithmProfile,
    ecu: &EcuConfig,
    seed: u64,
    trace: bool,
) -> Result<(SessionResult, Option<Vec<BusEvent>>), ProtocolError> {
    let cfg = spec.session_config(&profile.name);
    let mut bus = Bus::new(ecu.bit_rate, spec.stuffing, stream(seed, "bus").next_u64());
    bus.set_recording(trace);
    let ends = attach_endpoints(&mut bus, &cfg);
    if spec.background_load > 0.0 {
        let (lo, hi) = spec.generator_ids();
        let gen = TrafficGenConfig::new(spec.background_load, lo, hi, stream(seed, "traffic").next_u64())?;
        bus.attach_traffic_generator(gen);
    }
    let mut backend = MockBackend::new(profile, stream(seed, "backend"));
    let mut clock = OpClock::new(profile, ecu, spec.compute_model, stream(seed, "compute"));
    let result = match profile.kind {
        Kind::Kem => protocol::run_kem_session(&mut bus, ends, &cfg, &mut backend, &mut clock)?,
        Kind::Dsa => protocol::run_dsa_session(&mut bus, ends, &cfg, &mut backend, &mut clock)?,
    };
    Ok((result, trace.then(|| bus.take_trace())))
}

/// Full output of one cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub metrics: Metrics,
    pub sessions: Vec<SessionRecord>,
    /// Event trace of the first iteration, when requested.
    pub trace: Option<Vec<BusEvent>>,
}

pub fn run_cell(
    spec: &CampaignSpec,
    profile: &AlgorithmProfile,
    ecu: &EcuConfig,
    trace_first: bool,
) -> Result<Cell, ExperimentError> {
    check_model(profile, ecu, spec.compute_model).map_err(|source| ExperimentError::Timing {
        algorithm: profile.name.clone(),
        config: ecu.name.clone(),
        source,
    })?;
    let nominal = match profile.kind {
        Kind::Kem => SimDuration::ZERO,
        Kind::Dsa => dsa_nominal(&spec.session_config(&profile.name), ecu, spec.stuffing)?,
    };
    let mut results = Vec::with_capacity(spec.iterations as usize);
    let mut sessions = Vec::with_capacity(spec.iterations as usize);
    let mut trace = None;
    for i in 0..spec.iterations {
        let seed = session_seed(spec.master_seed, &profile.name, &ecu.name, i as u64);
        let (r, t) = run_one(spec, profile, ecu, seed, trace_first && i == 0).map_err(|source| {
            ExperimentError::Session {
                algorithm: profile.name.clone(),
                config: ecu.name.clone(),
                iteration: i,
                source,
            }
        })?;
        if t.is_some() {
            trace = t;
        }
        sessions.push(SessionRecord::new(&profile.name, &ecu.name, seed, &r, nominal));
        results.push(r);
    }
    Ok(Cell {
        metrics: aggregate(profile, &ecu.name, &results, nominal, spec.outlier_mad)?,
        sessions,
        trace,
    })
}

pub type Progress<'a> = &'a (dyn Fn(&str, &str, &Result<Cell, ExperimentError>) + Sync);

/// Knobs for [`run_campaign_with`] that do not affect results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads; `None` uses every available processor.
    pub jobs: Option<usize>,
    pub trace_first: bool,
    /// Called once per finished cell, from worker threads.
    pub progress: Option<Progress<'a>>,
}

/// Validates `spec`, resolves every profile, then runs all cells in
/// parallel. The outer error covers validation; per-cell failures are
/// returned in place, in (algorithm, config) order.
pub fn run_campaign_with(
    spec: &CampaignSpec,
    profiles: &[AlgorithmProfile],
    opts: &RunOptions<'_>,
) -> Result<Vec<Result<Cell, ExperimentError>>, ExperimentError> {
    spec.validate()?;
    let resolved = spec
        .algorithms
        .iter()
        .map(|name| find_profile(profiles, name).ok_or_else(|| ExperimentError::UnknownProfile(name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(&AlgorithmProfile, &EcuConfig)> = resolved
        .iter()
        .flat_map(|p| spec.configs.iter().map(move |c| (*p, c)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|(p, c)| {
                let out = run_cell(spec, p, c, opts.trace_first);
                if let Some(f) = opts.progress {
                    f(&p.name, &c.name, &out);
                }
                out
            })
            .collect()
    }))
}

/// One [`Metrics`] per cell, failing on the first cell error.
pub fn run_campaign(spec: &CampaignSpec, profiles: &[AlgorithmProfile]) -> Result<Vec<Metrics>, ExperimentError> {
    run_campaign_with(spec, profiles, &RunOptions::default())?
        .into_iter()
        .map(|c| c.map(|c| c.metrics))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub config: EcuConfig,
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub config: String,
    pub reference: String,
    pub overhead_ratio: f64,
    /// Reference bit rate over this config's bit rate.
    pub bit_rate_ratio: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<RatioRow>,
    /// Every ratio matched the inverse bit-rate ratio within tolerance.
    pub communication_dominated: bool,
}

/// Compares each config's overhead with the fastest-bus config's. A row
/// matches when `|overhead_ratio / bit_rate_ratio - 1| <= tolerance`.
pub fn scaling_check(points: &[ScalingPoint], tolerance: f64) -> Result<ScalingReport, ExperimentError> {
    if points.len() < 2 {
        return Err(ExperimentError::TooFewConfigs(points.len()));
    }
    let reference = points
        .iter()
        .max_by_key(|p| p.config.bit_rate.bits_per_second())
        .expect("non-empty");
    let rows: Vec<RatioRow> = points
        .iter()
        .filter(|p| !std::ptr::eq(*p, reference))
        .map(|p| {
            let overhead_ratio = p.overhead_ms / reference.overhead_ms;
            let bit_rate_ratio =
                reference.config.bit_rate.bits_per_second() as f64 / p.config.bit_rate.bits_per_second() as f64;
            RatioRow {
                config: p.config.name.clone(),
                reference: reference.config.name.clone(),
                overhead_ratio,
                bit_rate_ratio,
                matches: (overhead_ratio / bit_rate_ratio - 1.0).abs() <= tolerance,
            }
        })
        .collect();
    let communication_dominated = rows.iter().all(|r| r.matches);
    Ok(ScalingReport {
        rows,
        communication_dominated,
    })
}

/// Scaling points for each algorithm in `metrics` that has an overhead on
/// every config in `configs`.
pub fn scaling_points(metrics: &[Metrics], algorithm: &str, configs: &[EcuConfig]) -> Vec<ScalingPoint> {
    configs
        .iter()
        .filter_map(|c| {
            let m = metrics.iter().find(|m| m.algorithm == algorithm && m.config == c.name)?;
            Some(ScalingPoint {
                config: c.clone(),
                overhead_ms: m.overhead?.mean,
            })
        })
        .collect()
}
