//! Algorithm parameter profiles and their TOML representation.
//!
//! A profile file is a list of `[[profile]]` tables:
//!
//! ```toml
//! [[profile]]
//! name = "Kyber512"
//! kind = "KEM"                # or "DSA"
//! level = 1                   # 1, 2, 3 or 5
//! source = "where the sizes come from"
//! public_key = 800
//! secret_key = 1632
//! ciphertext = 768            # KEM only
//! shared_secret = 32          # KEM only
//! # signature = 2420          # DSA only
//!
//! [profile.timing.high]       # one table per ECU config name
//! keygen = [0.045, 0.019]     # [mean_ms, std_ms]
//! encapsulate = [0.063, 0.024]
//! decapsulate = [0.030, 0.018]
//! overhead = [1.189, 0.583]   # optional reference values, not sampled
//! success_rate = 0.93
//!
//! [profile.cycles]            # optional, for the cycle-based model
//! keygen = 300000
//! ```
//!
//! Every error reports the 1-based line it refers to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

/// Profiles shipped with the crate (the 18 profiled campaign variants).
pub const DEFAULT_PROFILES: &str = include_str!("../../data/profiles.toml");
/// Size-only profiles excluded from default campaigns.
pub const EXTRA_PROFILES: &str = include_str!("../../data/extra_profiles.toml");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ProfileError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ProfileError::Invalid { line, .. } => Some(*line),
            ProfileError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Kem,
    Dsa,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Kem => "KEM",
            Kind::Dsa => "DSA",
        }
    }

    /// The three timed operations, in table column order.
    pub fn ops(self) -> [Op; 3] {
        match self {
            Kind::Kem => [Op::KeyGen, Op::Encapsulate, Op::Decapsulate],
            Kind::Dsa => [Op::KeyGen, Op::Sign, Op::Verify],
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    KeyGen,
    Encapsulate,
    Decapsulate,
    Sign,
    Verify,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::KeyGen => "keygen",
            Op::Encapsulate => "encapsulate",
            Op::Decapsulate => "decapsulate",
            Op::Sign => "sign",
            Op::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Option<Op> {
        Some(match s {
            "keygen" => Op::KeyGen,
            "encapsulate" => Op::Encapsulate,
            "decapsulate" => Op::Decapsulate,
            "sign" => Op::Sign,
            "verify" => Op::Verify,
            _ => return None,
        })
    }

    pub fn valid_for(self, kind: Kind) -> bool {
        kind.ops().contains(&self)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sizes {
    Kem {
        public_key: usize,
        secret_key: usize,
        ciphertext: usize,
        shared_secret: usize,
    },
    Dsa {
        public_key: usize,
        secret_key: usize,
        signature: usize,
    },
}

impl Sizes {
    pub fn public_key(&self) -> usize {
        match *self {
            Sizes::Kem { public_key, .. } | Sizes::Dsa { public_key, .. } => public_key,
        }
    }

    pub fn secret_key(&self) -> usize {
        match *self {
            Sizes::Kem { secret_key, .. } | Sizes::Dsa { secret_key, .. } => secret_key,
        }
    }

    /// Ciphertext (KEM) or signature (DSA) length.
    pub fn second_artifact(&self) -> usize {
        match *self {
            Sizes::Kem { ciphertext, .. } => ciphertext,
            Sizes::Dsa { signature, .. } => signature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Per-ECU-config timing row: sampled op timings plus optional reference
/// measurements kept for comparison.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigTimings {
    pub ops: BTreeMap<Op, MeanStd>,
    pub overhead: Option<MeanStd>,
    pub nominal: Option<MeanStd>,
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmProfile {
    pub name: String,
    pub kind: Kind,
    pub security_level: u8,
    pub sizes: Sizes,
    pub source: String,
    /// Keyed by ECU config name.
    pub timings: BTreeMap<String, ConfigTimings>,
    pub cycles: BTreeMap<Op, u64>,
}

impl AlgorithmProfile {
    pub fn op_timing(&self, config: &str, op: Op) -> Option<MeanStd> {
        self.timings.get(config)?.ops.get(&op).copied()
    }

    /// True when the profile carries timings for every op under `config`.
    pub fn has_timings(&self, config: &str) -> bool {
        self.kind.ops().iter().all(|op| self.op_timing(config, *op).is_some())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    profile: Vec<Spanned<RawProfile>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: Spanned<String>,
    kind: Spanned<String>,
    level: Spanned<i64>,
    #[serde(default)]
    source: String,
    public_key: Spanned<i64>,
    secret_key: Spanned<i64>,
    ciphertext: Option<Spanned<i64>>,
    shared_secret: Option<Spanned<i64>>,
    signature: Option<Spanned<i64>>,
    #[serde(default)]
    timing: BTreeMap<String, Spanned<RawTiming>>,
    #[serde(default)]
    cycles: Option<Spanned<BTreeMap<String, u64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTiming {
    keygen: Option<[f64; 2]>,
    encapsulate: Option<[f64; 2]>,
    decapsulate: Option<[f64; 2]>,
    sign: Option<[f64; 2]>,
    verify: Option<[f64; 2]>,
    overhead: Option<[f64; 2]>,
    nominal: Option<[f64; 2]>,
    success_rate: Option<f64>,
}

struct LineIndex<'a>(&'a str);

impl LineIndex<'_> {
    fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.0.len());
        self.0.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> ProfileError {
        ProfileError::Invalid {
            line: self.line(offset),
            message: message.into(),
        }
    }
}

fn mean_std(pair: [f64; 2]) -> Option<MeanStd> {
    let [mean_ms, std_ms] = pair;
    (mean_ms.is_finite() && std_ms.is_finite() && mean_ms >= 0.0 && std_ms >= 0.0)
        .then_some(MeanStd { mean_ms, std_ms })
}

/// Parses a profile file. Names must be unique (case-insensitively).
pub fn load_profiles(src: &str) -> Result<Vec<AlgorithmProfile>, ProfileError> {
    let idx = LineIndex(src);
    let raw: RawFile = toml::from_str(src).map_err(|e| {
        let offset = e.span().map(|s| s.start).unwrap_or(0);
        idx.err(offset, e.message().trim().to_string())
    })?;
    if raw.profile.is_empty() {
        return Err(ProfileError::Invalid {
            line: 1,
            message: "no [[profile]] entries".into(),
        });
    }

    let mut out: Vec<AlgorithmProfile> = Vec::with_capacity(raw.profile.len());
    for entry in raw.profile {
        let at = entry.span().start;
        let p = entry.into_inner();
        let name = p.name.get_ref().trim().to_string();
        if name.is_empty() {
            return Err(idx.err(p.name.span().start, "empty profile name"));
        }
        if out.iter().any(|q| q.name.eq_ignore_ascii_case(&name)) {
            return Err(idx.err(p.name.span().start, format!("duplicate profile name `{name}`")));
        }
        let kind = match p.kind.get_ref().to_ascii_uppercase().as_str() {
            "KEM" => Kind::Kem,
            "DSA" => Kind::Dsa,
            other => return Err(idx.err(p.kind.span().start, format!("unknown kind `{other}` (expected KEM or DSA)"))),
        };
        let level = *p.level.get_ref();
        if ![1, 2, 3, 5].contains(&level) {
            return Err(idx.err(p.level.span().start, format!("security level {level} not in {{1, 2, 3, 5}}")));
        }

        let positive = |v: &Spanned<i64>, what: &str| -> Result<usize, ProfileError> {
            if *v.get_ref() <= 0 {
                return Err(idx.err(v.span().start, format!("{what} must be positive")));
            }
            Ok(*v.get_ref() as usize)
        };
        let required = |v: &Option<Spanned<i64>>, what: &str| -> Result<usize, ProfileError> {
            match v {
                Some(v) => positive(v, what),
                None => Err(idx.err(at, format!("{name}: missing field `{what}` for {}", kind.as_str()))),
            }
        };
        let forbidden = |v: &Option<Spanned<i64>>, what: &str| -> Result<(), ProfileError> {
            match v {
                Some(v) => Err(idx.err(v.span().start, format!("field `{what}` is not valid for {}", kind.as_str()))),
                None => Ok(()),
            }
        };

        let public_key = positive(&p.public_key, "public_key")?;
        let secret_key = positive(&p.secret_key, "secret_key")?;
        let sizes = match kind {
            Kind::Kem => {
                forbidden(&p.signature, "signature")?;
                let shared_secret = match &p.shared_secret {
                    Some(v) if *v.get_ref() < 0 => {
                        return Err(idx.err(v.span().start, "shared_secret must not be negative"))
                    }
                    Some(v) => *v.get_ref() as usize,
                    None => return Err(idx.err(at, format!("{name}: missing field `shared_secret` for KEM"))),
                };
                Sizes::Kem {
                    public_key,
                    secret_key,
                    ciphertext: required(&p.ciphertext, "ciphertext")?,
                    shared_secret,
                }
            }
            Kind::Dsa => {
                forbidden(&p.ciphertext, "ciphertext")?;
                forbidden(&p.shared_secret, "shared_secret")?;
                Sizes::Dsa {
                    public_key,
                    secret_key,
                    signature: required(&p.signature, "signature")?,
                }
            }
        };

        let mut timings = BTreeMap::new();
        for (config, t) in p.timing {
            let line_at = t.span().start;
            let t = t.into_inner();
            let mut row = ConfigTimings::default();
            let pairs = [
                (Op::KeyGen, t.keygen),
                (Op::Encapsulate, t.encapsulate),
                (Op::Decapsulate, t.decapsulate),
                (Op::Sign, t.sign),
                (Op::Verify, t.verify),
            ];
            for (op, pair) in pairs {
                let Some(pair) = pair else { continue };
                if !op.valid_for(kind) {
                    return Err(idx.err(line_at, format!("op `{op}` is not valid for {}", kind.as_str())));
                }
                let ms = mean_std(pair)
                    .ok_or_else(|| idx.err(line_at, format!("{op} timing must be finite and non-negative")))?;
                row.ops.insert(op, ms);
            }
            let reference = |pair: Option<[f64; 2]>, what: &str| -> Result<Option<MeanStd>, ProfileError> {
                pair.map(|p| mean_std(p).ok_or_else(|| idx.err(line_at, format!("{what} must be finite and non-negative"))))
                    .transpose()
            };
            row.overhead = reference(t.overhead, "overhead")?;
            row.nominal = reference(t.nominal, "nominal")?;
            if let Some(r) = t.success_rate {
                if !(0.0..=1.0).contains(&r) {
                    return Err(idx.err(line_at, "success_rate must lie in [0, 1]"));
                }
                row.success_rate = Some(r);
            }
            timings.insert(config, row);
        }

        let mut cycles = BTreeMap::new();
        if let Some(c) = p.cycles {
            let line_at = c.span().start;
            for (op, n) in c.into_inner() {
                let op = Op::parse(&op)
                    .filter(|o| o.valid_for(kind))
                    .ok_or_else(|| idx.err(line_at, format!("op `{op}` is not valid for {}", kind.as_str())))?;
                cycles.insert(op, n);
            }
        }

        out.push(AlgorithmProfile {
            name,
            kind,
            security_level: level as u8,
            sizes,
            source: p.source,
            timings,
            cycles,
        });
    }
    Ok(out)
}

pub fn load_profiles_file(path: &Path) -> Result<Vec<AlgorithmProfile>, ProfileError> {
    let src = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_profiles(&src)
}

pub fn default_profiles() -> Vec<AlgorithmProfile> {
    load_profiles(DEFAULT_PROFILES).expect("bundled profiles parse")
}

/// Case-insensitive lookup by name.
pub fn find_profile<'a>(profiles: &'a [AlgorithmProfile], name: &str) -> Option<&'a AlgorithmProfile> {
    profiles.iter().find(|p| p.name.eq_ignore_ascii_case(name.trim()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"
[[profile]]
name = "Toy"
kind = "KEM"
level = 1
public_key = 10
secret_key = 20
ciphertext = 30
shared_secret = 32

[profile.timing.high]
keygen = [1.0, 0.5]
"#;

    fn err_line(src: &str) -> usize {
        load_profiles(src).unwrap_err().line().unwrap()
    }

    #[test]
    fn parses_minimal() {
        let ps = load_profiles(ONE).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].kind, Kind::Kem);
        assert_eq!(ps[0].sizes.second_artifact(), 30);
        assert_eq!(ps[0].op_timing("high", Op::KeyGen).unwrap().mean_ms, 1.0);
        assert!(!ps[0].has_timings("high"));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(load_profiles("").is_err());
        assert!(load_profiles("# nothing\n").is_err());
    }

    #[test]
    fn syntax_error_cites_line() {
        let src = "[[profile]]\nname = \"x\"\nkind = \nlevel = 1\n";
        assert_eq!(err_line(src), 3);
    }

    #[test]
    fn missing_field_cites_profile_line() {
        let src = ONE.replace("ciphertext = 30\n", "");
        let e = load_profiles(&src).unwrap_err();
        assert_eq!(e.line(), Some(2));
        assert!(e.to_string().contains("ciphertext"), "{e}");
    }

    #[test]
    fn unknown_kind_rejected() {
        let src = ONE.replace("\"KEM\"", "\"PKE\"");
        let e = load_profiles(&src).unwrap_err();
        assert_eq!(e.line(), Some(4));
        assert!(e.to_string().contains("PKE"));
    }

    #[test]
    fn duplicate_name_rejected() {
        let src = format!("{ONE}{}", ONE.replace("\"Toy\"", "\"toy\""));
        let e = load_profiles(&src).unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        assert_eq!(e.line(), Some(15));
    }

    #[test]
    fn wrong_kind_op_rejected() {
        let src = ONE.replace("keygen = [1.0, 0.5]", "sign = [1.0, 0.5]");
        assert!(load_profiles(&src).unwrap_err().to_string().contains("sign"));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(load_profiles(&ONE.replace("level = 1", "level = 4")).is_err());
        assert!(load_profiles(&ONE.replace("public_key = 10", "public_key = 0")).is_err());
        assert!(load_profiles(&ONE.replace("[1.0, 0.5]", "[-1.0, 0.5]")).is_err());
        assert!(load_profiles(&ONE.replace("shared_secret = 32", "shared_secret = 32\nsignature = 5")).is_err());
    }

    #[test]
    fn bundled_profiles_cover_campaign_set() {
        let ps = default_profiles();
        assert_eq!(ps.len(), 18);
        let expect = [
            ("Kyber512", Kind::Kem, 1),
            ("Kyber768", Kind::Kem, 3),
            ("Kyber1024", Kind::Kem, 5),
            ("BIKE-L1", Kind::Kem, 1),
            ("BIKE-L3", Kind::Kem, 3),
            ("BIKE-L5", Kind::Kem, 5),
            ("hqc-128", Kind::Kem, 1),
            ("hqc-192", Kind::Kem, 3),
            ("hqc-256", Kind::Kem, 5),
            ("Dilithium2", Kind::Dsa, 2),
            ("Dilithium3", Kind::Dsa, 3),
            ("Dilithium5", Kind::Dsa, 5),
            ("Falcon-512", Kind::Dsa, 1),
            ("Falcon-1024", Kind::Dsa, 5),
            ("SPHINCS+-SHA2-128f-simple", Kind::Dsa, 1),
            ("SPHINCS+-SHAKE-128f-simple", Kind::Dsa, 1),
            ("SPHINCS+-SHA2-192f-simple", Kind::Dsa, 3),
            ("SPHINCS+-SHAKE-192f-simple", Kind::Dsa, 3),
        ];
        for (name, kind, level) in expect {
            let p = find_profile(&ps, name).unwrap_or_else(|| panic!("{name}"));
            assert_eq!((p.kind, p.security_level), (kind, level), "{name}");
            for cfg in ["high", "mid", "low"] {
                assert!(p.has_timings(cfg), "{name} {cfg}");
            }
        }
        assert!(find_profile(&ps, "SPHINCS+-SHAKE-192f-simple").is_some());
    }

    #[test]
    fn reference_sizes() {
        let ps = default_profiles();
        let kyber = find_profile(&ps, "kyber512").unwrap();
        assert_eq!(kyber.sizes.public_key(), 800);
        assert_eq!(kyber.sizes.second_artifact(), 768);
        let dil = find_profile(&ps, "Dilithium2").unwrap();
        assert_eq!((dil.sizes.public_key(), dil.sizes.second_artifact()), (1312, 2420));
        let f = find_profile(&ps, "Falcon-1024").unwrap();
        assert_eq!(f.security_level, 5);
        assert_eq!(f.op_timing("low", Op::KeyGen).unwrap().mean_ms, 361.655);
    }

    #[test]
    fn extra_profiles_parse() {
        let ps = load_profiles(EXTRA_PROFILES).unwrap();
        let mce = find_profile(&ps, "Classic-McEliece-348864").unwrap();
        assert_eq!(mce.sizes.public_key(), 261_120);
        assert!(mce.timings.is_empty());
    }
}
