//! CAN 2.0A standard data frames and their on-wire bit cost.
//!
//! Only 11-bit identifiers and data frames are modeled. A frame's nominal
//! length counts every fixed field from SOF through EOF plus the 3-bit
//! interframe space, so back-to-back frames tile the bus exactly.

use std::fmt;

use thiserror::Error;

use crate::time::SimDuration;

/// Largest 11-bit identifier.
pub const MAX_STANDARD_ID: u16 = 0x7FF;
/// Maximum payload of a classic CAN data frame.
pub const MAX_DLC: usize = 8;

/// SOF, ID, RTR, IDE, r0, DLC, CRC, CRC delimiter, ACK slot, ACK delimiter, EOF.
const FIXED_FIELD_BITS: u32 = 1 + 11 + 1 + 1 + 1 + 4 + 15 + 1 + 1 + 1 + 7;
const INTERFRAME_BITS: u32 = 3;
/// Bits from SOF through the end of the CRC sequence, excluding data; the
/// span where stuff bits may be inserted.
const STUFFABLE_FIXED_BITS: u32 = 1 + 11 + 1 + 1 + 1 + 4 + 15;
/// Upper bound on the extra-bit fraction bit stuffing can produce.
pub const MAX_STUFFING_FRACTION: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("identifier {0:#x} exceeds the 11-bit range")]
    IdOutOfRange(u32),
    #[error("payload of {0} bytes exceeds the 8-byte limit")]
    PayloadTooLong(usize),
    #[error("bit rate must be positive")]
    ZeroBitRate,
    #[error("stuffing fraction {0} outside [0, 0.25]")]
    StuffingFraction(f64),
}

/// 11-bit CAN identifier. Lower values win arbitration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanId(u16);

impl CanId {
    pub fn new(raw: u32) -> Result<Self, FrameError> {
        if raw > MAX_STANDARD_ID as u32 {
            return Err(FrameError::IdOutOfRange(raw));
        }
        Ok(CanId(raw as u16))
    }

    pub fn raw(self) -> u16 {
        self.0
    }
}

impl fmt::Display for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#05x}", self.0)
    }
}

/// A CAN 2.0A data frame. Validity is enforced at construction, so the
/// identifier is always in range and `dlc() == data().len() <= 8`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: CanId,
    len: u8,
    buf: [u8; MAX_DLC],
}

impl CanFrame {
    pub fn new(id: CanId, data: &[u8]) -> Result<Self, FrameError> {
        if data.len() > MAX_DLC {
            return Err(FrameError::PayloadTooLong(data.len()));
        }
        let mut buf = [0u8; MAX_DLC];
        buf[..data.len()].copy_from_slice(data);
        Ok(CanFrame {
            id,
            len: data.len() as u8,
            buf,
        })
    }

    pub fn id(&self) -> CanId {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.len
    }

    pub fn data(&self) -> &[u8] {
        &self.buf[..self.len as usize]
    }
}

impl fmt::Debug for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanFrame({} [{}]", self.id, self.len)?;
        for b in self.data() {
            write!(f, " {b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Nominal bus bit rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitRate(u32);

impl BitRate {
    pub const KBPS_125: BitRate = BitRate(125_000);
    pub const KBPS_500: BitRate = BitRate(500_000);
    pub const MBPS_1: BitRate = BitRate(1_000_000);

    pub fn new(bits_per_second: u32) -> Result<Self, FrameError> {
        if bits_per_second == 0 {
            return Err(FrameError::ZeroBitRate);
        }
        Ok(BitRate(bits_per_second))
    }

    pub fn bits_per_second(self) -> u32 {
        self.0
    }

    /// Time to clock `bits` onto the wire, rounded half up to whole nanoseconds.
    pub fn duration_of(self, bits: u64) -> SimDuration {
        let bps = self.0 as u128;
        let ns = (bits as u128 * 1_000_000_000 + bps / 2) / bps;
        SimDuration(ns as u64)
    }
}

impl fmt::Display for BitRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bit/s", self.0)
    }
}

/// How stuff bits are accounted for when computing on-wire length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StuffingModel {
    None,
    WorstCase,
    /// Extra bits as a fraction of the stuffable span, in `[0, 0.25]`.
    Expected(f64),
}

impl StuffingModel {
    pub fn expected(fraction: f64) -> Result<Self, FrameError> {
        if !(0.0..=MAX_STUFFING_FRACTION).contains(&fraction) {
            return Err(FrameError::StuffingFraction(fraction));
        }
        Ok(StuffingModel::Expected(fraction))
    }
}

impl Default for StuffingModel {
    fn default() -> Self {
        StuffingModel::Expected(0.05)
    }
}

impl fmt::Display for StuffingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StuffingModel::None => write!(f, "none"),
            StuffingModel::WorstCase => write!(f, "worst_case"),
            StuffingModel::Expected(x) => write!(f, "expected:{x}"),
        }
    }
}

impl std::str::FromStr for StuffingModel {
    type Err = String;

    /// Accepts `none`, `worst_case`, or `expected:<fraction>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(StuffingModel::None),
            "worst_case" | "worst-case" => Ok(StuffingModel::WorstCase),
            other => {
                let frac = other
                    .strip_prefix("expected:")
                    .ok_or_else(|| format!("unknown stuffing model `{other}`"))?;
                let x: f64 = frac
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad stuffing fraction `{frac}`"))?;
                StuffingModel::expected(x).map_err(|e| e.to_string())
            }
        }
    }
}

/// Unstuffed length of a frame including the interframe space: `47 + 8·dlc`.
pub fn nominal_bit_length(frame: &CanFrame) -> u32 {
    nominal_bits_for_dlc(frame.dlc())
}

pub(crate) fn nominal_bits_for_dlc(dlc: u8) -> u32 {
    FIXED_FIELD_BITS + INTERFRAME_BITS + 8 * dlc as u32
}

pub fn stuffed_bit_length(frame: &CanFrame, model: StuffingModel) -> u32 {
    stuffed_bits_for_dlc(frame.dlc(), model)
}

pub(crate) fn stuffed_bits_for_dlc(dlc: u8, model: StuffingModel) -> u32 {
    let nominal = nominal_bits_for_dlc(dlc);
    let span = STUFFABLE_FIXED_BITS + 8 * dlc as u32;
    let extra = match model {
        StuffingModel::None => 0,
        // One stuff bit after the first five, then one per four further bits.
        StuffingModel::WorstCase => (span - 1) / 4,
        StuffingModel::Expected(f) => (f * span as f64).round() as u32,
    };
    nominal + extra
}

pub fn frame_duration(frame: &CanFrame, rate: BitRate, model: StuffingModel) -> SimDuration {
    rate.duration_of(stuffed_bit_length(frame, model) as u64)
}
