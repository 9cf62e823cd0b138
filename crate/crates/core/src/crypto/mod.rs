//! Post-quantum algorithm profiles, compute-time models and crypto backends.

pub mod backend;
pub mod profile;
pub mod timing;

pub use backend::{BackendError, CryptoBackend, Encapsulation, Fault, KeyPair, MockBackend};
pub use profile::{
    default_profiles, find_profile, load_profiles, load_profiles_file, AlgorithmProfile, ConfigTimings, Kind,
    MeanStd, Op, ProfileError, Sizes, DEFAULT_PROFILES, EXTRA_PROFILES,
};
pub use timing::{check_model, sample_op_time, ComputeTimeModel, OpClock, TimingDistribution, TimingError};
