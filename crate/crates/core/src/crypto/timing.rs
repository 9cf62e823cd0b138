//! Compute-time models: how long one cryptographic operation takes on a
//! simulated ECU.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use thiserror::Error;

use super::profile::{AlgorithmProfile, Kind, MeanStd, Op};
use crate::ecu::EcuConfig;
use crate::time::SimDuration;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("{op} is not a {kind} operation")]
    OpNotForKind { op: Op, kind: Kind },
    #[error("{profile} has no {op} timing for ECU config `{config}`")]
    NoTiming { profile: String, op: Op, config: String },
    #[error("{profile} has no cycle count for {op}")]
    NoCycles { profile: String, op: Op },
}

/// Shape used to draw table-driven samples. Both preserve the configured
/// mean and standard deviation where they can and never go negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingDistribution {
    /// Log-normal with exactly the configured mean and standard deviation.
    #[default]
    LogNormal,
    /// Normal draw clamped at zero. Biases the mean upward when
    /// `std / mean` is large.
    TruncatedNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComputeTimeModel {
    /// Per-config measured (mean, std) from the profile's timing rows.
    TableDriven(TimingDistribution),
    /// `work_cycles / cpu_hz` from the profile's cycle counts.
    CycleBased,
}

impl Default for ComputeTimeModel {
    fn default() -> Self {
        ComputeTimeModel::TableDriven(TimingDistribution::default())
    }
}

fn draw_ms<R: Rng + ?Sized>(stats: MeanStd, dist: TimingDistribution, rng: &mut R) -> f64 {
    let MeanStd { mean_ms, std_ms } = stats;
    if std_ms == 0.0 || mean_ms == 0.0 {
        return mean_ms;
    }
    match dist {
        TimingDistribution::LogNormal => {
            let cv2 = (std_ms / mean_ms).powi(2);
            let sigma2 = cv2.ln_1p();
            let mu = mean_ms.ln() - sigma2 / 2.0;
            LogNormal::new(mu, sigma2.sqrt()).expect("finite parameters").sample(rng)
        }
        TimingDistribution::TruncatedNormal => {
            Normal::new(mean_ms, std_ms).expect("finite parameters").sample(rng).max(0.0)
        }
    }
}

/// Duration of `op` for `profile` on `config` under `model`. The RNG is only
/// consumed by the table-driven model.
pub fn sample_op_time<R: Rng + ?Sized>(
    profile: &AlgorithmProfile,
    op: Op,
    config: &EcuConfig,
    model: ComputeTimeModel,
    rng: &mut R,
) -> Result<SimDuration, TimingError> {
    if !op.valid_for(profile.kind) {
        return Err(TimingError::OpNotForKind { op, kind: profile.kind });
    }
    match model {
        ComputeTimeModel::TableDriven(dist) => {
            let stats = profile.op_timing(&config.name, op).ok_or_else(|| TimingError::NoTiming {
                profile: profile.name.clone(),
                op,
                config: config.name.clone(),
            })?;
            Ok(SimDuration::from_millis_f64(draw_ms(stats, dist, rng)))
        }
        ComputeTimeModel::CycleBased => {
            let cycles = *profile.cycles.get(&op).ok_or_else(|| TimingError::NoCycles {
                profile: profile.name.clone(),
                op,
            })?;
            let ns = (cycles as u128 * 1_000_000_000 + config.cpu_hz as u128 / 2) / config.cpu_hz as u128;
            Ok(SimDuration(ns as u64))
        }
    }
}

/// Checks up front that every op of `profile` can be timed on `config`.
pub fn check_model(profile: &AlgorithmProfile, config: &EcuConfig, model: ComputeTimeModel) -> Result<(), TimingError> {
    for op in profile.kind.ops() {
        let present = match model {
            ComputeTimeModel::TableDriven(_) => profile.op_timing(&config.name, op).is_some(),
            ComputeTimeModel::CycleBased => profile.cycles.contains_key(&op),
        };
        if !present {
            return Err(match model {
                ComputeTimeModel::TableDriven(_) => TimingError::NoTiming {
                    profile: profile.name.clone(),
                    op,
                    config: config.name.clone(),
                },
                ComputeTimeModel::CycleBased => TimingError::NoCycles {
                    profile: profile.name.clone(),
                    op,
                },
            });
        }
    }
    Ok(())
}

/// Binds a profile, ECU, model and RNG stream so protocol code can ask for
/// op durations without threading all four through.
pub struct OpClock<'a, R: Rng> {
    profile: &'a AlgorithmProfile,
    config: &'a EcuConfig,
    model: ComputeTimeModel,
    rng: R,
}

impl<'a, R: Rng> OpClock<'a, R> {
    pub fn new(profile: &'a AlgorithmProfile, config: &'a EcuConfig, model: ComputeTimeModel, rng: R) -> Self {
        OpClock {
            profile,
            config,
            model,
            rng,
        }
    }

    pub fn profile(&self) -> &'a AlgorithmProfile {
        self.profile
    }

    pub fn config(&self) -> &'a EcuConfig {
        self.config
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }

    pub fn sample(&mut self, op: Op) -> Result<SimDuration, TimingError> {
        sample_op_time(self.profile, op, self.config, self.model, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::profile::{default_profiles, find_profile, Sizes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn cycle_profile() -> AlgorithmProfile {
        AlgorithmProfile {
            name: "cyc".into(),
            kind: Kind::Kem,
            security_level: 1,
            sizes: Sizes::Kem {
                public_key: 1,
                secret_key: 1,
                ciphertext: 1,
                shared_secret: 0,
            },
            source: String::new(),
            timings: BTreeMap::new(),
            cycles: BTreeMap::from([(Op::KeyGen, 300_000)]),
        }
    }

    fn mean_of(p: &AlgorithmProfile, op: Op, cfg: &EcuConfig, dist: TimingDistribution, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ComputeTimeModel::TableDriven(dist);
        (0..n)
            .map(|_| sample_op_time(p, op, cfg, model, &mut rng).unwrap().as_millis_f64())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn cycle_based_division() {
        let p = cycle_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at = |hz: u64, rng: &mut ChaCha8Rng| {
            let cfg = EcuConfig::new("x", hz, crate::frame::BitRate::MBPS_1).unwrap();
            sample_op_time(&p, Op::KeyGen, &cfg, ComputeTimeModel::CycleBased, rng).unwrap()
        };
        assert_eq!(at(300_000_000, &mut rng), SimDuration::from_millis(1));
        assert_eq!(at(120_000_000, &mut rng), SimDuration::from_micros(2_500));
        assert!(matches!(
            sample_op_time(&p, Op::Encapsulate, &EcuConfig::high(), ComputeTimeModel::CycleBased, &mut rng),
            Err(TimingError::NoCycles { .. })
        ));
    }

    #[test]
    fn cycle_based_scales_inversely() {
        let p = cycle_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for hz in [1_000_000u64, 3_000_000, 150_000_000] {
            let a = EcuConfig::new("a", hz, crate::frame::BitRate::MBPS_1).unwrap();
            let b = EcuConfig::new("b", 2 * hz, crate::frame::BitRate::MBPS_1).unwrap();
            let ta = sample_op_time(&p, Op::KeyGen, &a, ComputeTimeModel::CycleBased, &mut rng).unwrap();
            let tb = sample_op_time(&p, Op::KeyGen, &b, ComputeTimeModel::CycleBased, &mut rng).unwrap();
            assert!((ta.as_nanos() as i64 - 2 * tb.as_nanos() as i64).abs() <= 1);
        }
    }

    #[test]
    fn wrong_op_and_missing_config() {
        let ps = default_profiles();
        let kyber = find_profile(&ps, "Kyber512").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ComputeTimeModel::default();
        assert!(matches!(
            sample_op_time(kyber, Op::Sign, &EcuConfig::high(), model, &mut rng),
            Err(TimingError::OpNotForKind { .. })
        ));
        let odd = EcuConfig::new("custom", 1, crate::frame::BitRate::MBPS_1).unwrap();
        assert!(matches!(
            sample_op_time(kyber, Op::KeyGen, &odd, model, &mut rng),
            Err(TimingError::NoTiming { .. })
        ));
        assert!(check_model(kyber, &odd, model).is_err());
        assert!(check_model(kyber, &EcuConfig::high(), model).is_ok());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let ps = default_profiles();
        let p = find_profile(&ps, "Falcon-512").unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..20)
                .map(|_| sample_op_time(p, Op::KeyGen, &EcuConfig::low(), ComputeTimeModel::default(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn lognormal_mean_within_three_standard_errors() {
        let ps = default_profiles();
        let n = 10_000;
        for (name, op, cfg) in [
            ("Kyber512", Op::KeyGen, EcuConfig::high()),
            ("Falcon-512", Op::KeyGen, EcuConfig::low()),
            ("Falcon-1024", Op::Verify, EcuConfig::high()),
        ] {
            let p = find_profile(&ps, name).unwrap();
            let stats = p.op_timing(&cfg.name, op).unwrap();
            let m = mean_of(p, op, &cfg, TimingDistribution::LogNormal, n);
            let se = stats.std_ms / (n as f64).sqrt();
            assert!((m - stats.mean_ms).abs() <= 3.0 * se, "{name} {op}: {m} vs {}", stats.mean_ms);
        }
    }

    #[test]
    fn clamped_normal_biases_high_variance_cells() {
        // std/mean = 1.5: clamping at zero pushes the mean far above target.
        let ps = default_profiles();
        let p = find_profile(&ps, "Falcon-1024").unwrap();
        let stats = p.op_timing("high", Op::Verify).unwrap();
        let m = mean_of(p, Op::Verify, &EcuConfig::high(), TimingDistribution::TruncatedNormal, 10_000);
        let se = stats.std_ms / 100.0;
        assert!(m - stats.mean_ms > 3.0 * se, "{m}");
    }

    #[test]
    fn clamped_normal_never_negative() {
        let ps = default_profiles();
        let p = find_profile(&ps, "Falcon-1024").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ComputeTimeModel::TableDriven(TimingDistribution::TruncatedNormal);
        let zeros = (0..2000)
            .map(|_| sample_op_time(p, Op::Verify, &EcuConfig::high(), model, &mut rng).unwrap())
            .filter(|d| *d == SimDuration::ZERO)
            .count();
        assert!(zeros > 0);
    }
}
