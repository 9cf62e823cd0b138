//! Simulated ECU classes: a CPU clock paired with the bus bit rate it sits on.

use thiserror::Error;

use crate::frame::BitRate;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EcuError {
    #[error("unknown ECU preset `{0}` (expected high, mid or low)")]
    UnknownPreset(String),
    #[error("ECU `{0}` needs a positive CPU frequency")]
    ZeroFrequency(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EcuConfig {
    pub name: String,
    pub cpu_hz: u64,
    pub bit_rate: BitRate,
}

impl EcuConfig {
    pub fn new(name: impl Into<String>, cpu_hz: u64, bit_rate: BitRate) -> Result<Self, EcuError> {
        let name = name.into();
        if cpu_hz == 0 {
            return Err(EcuError::ZeroFrequency(name));
        }
        Ok(EcuConfig { name, cpu_hz, bit_rate })
    }

    /// 300 MHz on a 1 Mbit/s bus.
    pub fn high() -> Self {
        EcuConfig {
            name: "high".into(),
            cpu_hz: 300_000_000,
            bit_rate: BitRate::MBPS_1,
        }
    }

    /// 200 MHz on a 500 kbit/s bus.
    pub fn mid() -> Self {
        EcuConfig {
            name: "mid".into(),
            cpu_hz: 200_000_000,
            bit_rate: BitRate::KBPS_500,
        }
    }

    /// 120 MHz on a 125 kbit/s bus.
    pub fn low() -> Self {
        EcuConfig {
            name: "low".into(),
            cpu_hz: 120_000_000,
            bit_rate: BitRate::KBPS_125,
        }
    }

    pub fn presets() -> Vec<EcuConfig> {
        vec![Self::high(), Self::mid(), Self::low()]
    }

    pub fn preset(name: &str) -> Result<Self, EcuError> {
        match name {
            "high" => Ok(Self::high()),
            "mid" => Ok(Self::mid()),
            "low" => Ok(Self::low()),
            other => Err(EcuError::UnknownPreset(other.to_string())),
        }
    }
}
