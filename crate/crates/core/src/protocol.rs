//! KEM handshake and signed-message flows between two simulated nodes.
//!
//! Alice (the initiator) and Bob share one bus. Each session draws Bob's
//! listen-start offset first, as `u * start_jitter` with `u` uniform in
//! `[0, 1)`, so for a fixed seed a larger jitter can only delay Bob.
//!
//! KEM: Alice generates a key pair and sends the public key; Bob
//! encapsulates and returns the ciphertext; Alice decapsulates. DSA: Alice
//! generates a key pair, sends the public key, then signs a random message
//! and sends message and signature as one transport message; Bob verifies.
//!
//! A receiver's timeout is armed when it starts waiting for a message and is
//! cancelled by that message's first frame. Alice waits for the ciphertext
//! only once her public key has left the wire; in the DSA flow she never
//! waits. Frames that reach a node before it listens are dropped by it.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::bus::{Bus, BusError, BusHandler, Filter, NodeId, RunOutcome, TimerId, TimerKind};
use crate::crypto::{BackendError, CryptoBackend, KeyPair, Kind, Op, OpClock, TimingError};
use crate::frame::{BitRate, CanFrame, CanId, StuffingModel};
use crate::time::{SimDuration, SimTime};
use crate::transport::{segment, transmission_bit_cost, Feed, ReassemblyState, TransportError};

/// Sessions that have not finished after this much simulated time are
/// reported as stalled.
pub const SESSION_CAP: SimDuration = SimDuration::from_secs(3600);

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("alice_id and bob_id must differ (both {0})")]
    SameIds(CanId),
    #[error("receiver timeout must be positive")]
    ZeroTimeout,
    #[error("{algorithm} is a {actual} profile, the session needs {wanted}")]
    WrongKind { algorithm: String, wanted: Kind, actual: Kind },
    #[error("session is for `{config}` but the compute clock holds `{clock}`")]
    ProfileMismatch { config: String, clock: String },
    #[error("session still running after {0}")]
    Stalled(SimDuration),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub algorithm: String,
    pub receiver_timeout: SimDuration,
    /// Bob starts listening `u * start_jitter` after the session starts.
    pub start_jitter: SimDuration,
    pub alice_id: CanId,
    pub bob_id: CanId,
    /// Length of the signed message in the DSA flow.
    pub message_length: usize,
}

impl SessionConfig {
    pub fn new(algorithm: impl Into<String>) -> Self {
        SessionConfig {
            algorithm: algorithm.into(),
            receiver_timeout: SimDuration::from_secs(2),
            start_jitter: SimDuration::ZERO,
            alice_id: CanId::new(0x010).expect("valid id"),
            bob_id: CanId::new(0x011).expect("valid id"),
            message_length: 32,
        }
    }

    /// Moves the protocol to the two lowest-priority identifiers.
    pub fn inverted_priority(mut self) -> Self {
        self.alice_id = CanId::new(0x7FE).expect("valid id");
        self.bob_id = CanId::new(0x7FF).expect("valid id");
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.alice_id == self.bob_id {
            return Err(ProtocolError::SameIds(self.alice_id));
        }
        if self.receiver_timeout == SimDuration::ZERO {
            return Err(ProtocolError::ZeroTimeout);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureReason {
    None,
    Timeout,
    CryptoMismatch,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::Timeout => "timeout",
            FailureReason::CryptoMismatch => "crypto_mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionResult {
    pub kind: Kind,
    pub success: bool,
    pub failure_reason: FailureReason,
    pub keygen: Option<SimDuration>,
    /// Encapsulation or signing.
    pub op2: Option<SimDuration>,
    /// Decapsulation or verification.
    pub op3: Option<SimDuration>,
    /// From Alice's keygen start to the end of the last operation, or to the
    /// timeout that ended the session.
    pub wall_clock_total: SimDuration,
    /// CAN data bytes put on the wire by Alice and Bob.
    pub bytes_on_wire: u64,
}

impl SessionResult {
    pub fn op_durations(&self) -> [Option<SimDuration>; 3] {
        [self.keygen, self.op2, self.op3]
    }
}

/// Wall-clock overhead of a successful KEM session.
pub fn kem_overhead(result: &SessionResult) -> Option<SimDuration> {
    (result.success && result.kind == Kind::Kem).then_some(result.wall_clock_total)
}

/// Sum of the three sampled operation times of a successful session.
pub fn crypto_only_overhead(result: &SessionResult) -> Option<SimDuration> {
    if !result.success {
        return None;
    }
    let [a, b, c] = result.op_durations();
    Some(a? + b? + c?)
}

/// Total time minus `nominal` for a successful DSA session.
pub fn dsa_overhead(result: &SessionResult, nominal: SimDuration) -> Option<SimDuration> {
    (result.success && result.kind == Kind::Dsa).then(|| result.wall_clock_total.saturating_sub(nominal))
}

/// Unloaded wire time of a bare `len`-byte transport message.
pub fn nominal_time(len: usize, rate: BitRate, stuffing: StuffingModel) -> Result<SimDuration, TransportError> {
    Ok(rate.duration_of(transmission_bit_cost(len as u64, stuffing)?))
}

/// Overhead as reported in results: wall clock for KEMs, wall clock minus
/// the nominal message time for DSAs.
pub fn overhead(result: &SessionResult, nominal: SimDuration) -> Option<SimDuration> {
    match result.kind {
        Kind::Kem => kem_overhead(result),
        Kind::Dsa => dsa_overhead(result, nominal),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoints {
    pub alice: NodeId,
    pub bob: NodeId,
}

/// Attaches Alice and Bob, each accepting only the other's identifier.
pub fn attach_endpoints(bus: &mut Bus, cfg: &SessionConfig) -> Endpoints {
    Endpoints {
        alice: bus.attach_node(Filter::Exact(cfg.bob_id)),
        bob: bus.attach_node(Filter::Exact(cfg.alice_id)),
    }
}

pub fn run_kem_session<R: Rng>(
    bus: &mut Bus,
    ends: Endpoints,
    cfg: &SessionConfig,
    backend: &mut dyn CryptoBackend,
    clock: &mut OpClock<'_, R>,
) -> Result<SessionResult, ProtocolError> {
    run_session(Kind::Kem, bus, ends, cfg, backend, clock)
}

pub fn run_dsa_session<R: Rng>(
    bus: &mut Bus,
    ends: Endpoints,
    cfg: &SessionConfig,
    backend: &mut dyn CryptoBackend,
    clock: &mut OpClock<'_, R>,
) -> Result<SessionResult, ProtocolError> {
    run_session(Kind::Dsa, bus, ends, cfg, backend, clock)
}

fn run_session<R: Rng>(
    kind: Kind,
    bus: &mut Bus,
    ends: Endpoints,
    cfg: &SessionConfig,
    backend: &mut dyn CryptoBackend,
    clock: &mut OpClock<'_, R>,
) -> Result<SessionResult, ProtocolError> {
    cfg.validate()?;
    let profile = clock.profile();
    if !profile.name.eq_ignore_ascii_case(&cfg.algorithm) {
        return Err(ProtocolError::ProfileMismatch {
            config: cfg.algorithm.clone(),
            clock: profile.name.clone(),
        });
    }
    if profile.kind != kind {
        return Err(ProtocolError::WrongKind {
            algorithm: profile.name.clone(),
            wanted: kind,
            actual: profile.kind,
        });
    }
    let t0 = bus.now();
    let u: f64 = clock.rng_mut().random();
    let listen_at = t0 + SimDuration((u * cfg.start_jitter.as_nanos() as f64) as u64);
    let mut flow = Flow {
        kind,
        ends,
        cfg,
        backend,
        clock,
        t0,
        wakes: HashMap::new(),
        alice_rx: Receiver::new(ends.alice),
        bob_rx: Receiver::new(ends.bob),
        alice_sending: 0,
        alice_phase: AlicePhase::KeyGen,
        keypair: None,
        bob_pk: None,
        bob_secret: None,
        ops: [None; 3],
        bytes: 0,
        outcome: None,
        error: None,
    };
    flow.start(bus, listen_at)?;
    let cap = t0 + SESSION_CAP;
    let outcome = bus.run_until_with(cap, &mut flow)?;
    if let Some(e) = flow.error {
        return Err(e);
    }
    let (reason, end) = match (outcome, flow.outcome) {
        (RunOutcome::Finished, Some(done)) => done,
        _ => return Err(ProtocolError::Stalled(SESSION_CAP)),
    };
    Ok(SessionResult {
        kind,
        success: reason == FailureReason::None,
        failure_reason: reason,
        keygen: flow.ops[0],
        op2: flow.ops[1],
        op3: flow.ops[2],
        wall_clock_total: end.since(t0),
        bytes_on_wire: flow.bytes,
    })
}

struct Receiver {
    node: NodeId,
    listening: bool,
    timeout: Option<TimerId>,
    reassembly: ReassemblyState,
}

impl Receiver {
    fn new(node: NodeId) -> Self {
        Receiver {
            node,
            listening: false,
            timeout: None,
            reassembly: ReassemblyState::new(),
        }
    }

    fn wait(&mut self, bus: &mut Bus, timeout: SimDuration) {
        self.listening = true;
        self.timeout = Some(bus.schedule_timer(self.node, bus.now() + timeout, TimerKind::Timeout));
    }

    fn receive(&mut self, bus: &mut Bus, frame: &CanFrame) -> Option<Vec<u8>> {
        if !self.listening {
            return None;
        }
        match self.reassembly.feed(frame) {
            Ok(feed) => {
                if let Some(t) = self.timeout.take() {
                    bus.cancel_timer(t);
                }
                match feed {
                    Feed::Complete(payload) => Some(payload),
                    Feed::Incomplete => None,
                }
            }
            Err(e) => {
                log::debug!("node {} dropped frame: {e}", self.node);
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AlicePhase {
    KeyGen,
    SendingKey,
    Signing,
    SendingSignature,
    Waiting,
}

enum Wake {
    BobListens,
    KeyGen,
    Encapsulate(Vec<u8>),
    Decapsulate(Vec<u8>),
    Sign(Vec<u8>),
    Verify(Vec<u8>),
}

struct Flow<'a, 'p, R: Rng> {
    kind: Kind,
    ends: Endpoints,
    cfg: &'a SessionConfig,
    backend: &'a mut dyn CryptoBackend,
    clock: &'a mut OpClock<'p, R>,
    t0: SimTime,
    wakes: HashMap<TimerId, Wake>,
    alice_rx: Receiver,
    bob_rx: Receiver,
    alice_sending: usize,
    alice_phase: AlicePhase,
    keypair: Option<KeyPair>,
    bob_pk: Option<Vec<u8>>,
    bob_secret: Option<Vec<u8>>,
    ops: [Option<SimDuration>; 3],
    bytes: u64,
    outcome: Option<(FailureReason, SimTime)>,
    error: Option<ProtocolError>,
}

impl<R: Rng> Flow<'_, '_, R> {
    fn start(&mut self, bus: &mut Bus, listen_at: SimTime) -> Result<(), ProtocolError> {
        if listen_at <= self.t0 {
            self.bob_rx.wait(bus, self.cfg.receiver_timeout);
        } else {
            self.wake_at(bus, self.ends.bob, listen_at, Wake::BobListens);
        }
        let d = self.compute(0, Op::KeyGen)?;
        self.wake_at(bus, self.ends.alice, self.t0 + d, Wake::KeyGen);
        Ok(())
    }

    fn compute(&mut self, slot: usize, op: Op) -> Result<SimDuration, ProtocolError> {
        let d = self.clock.sample(op)?;
        self.ops[slot] = Some(d);
        Ok(d)
    }

    fn wake_at(&mut self, bus: &mut Bus, node: NodeId, at: SimTime, what: Wake) {
        let id = bus.schedule_timer(node, at, TimerKind::Wake);
        self.wakes.insert(id, what);
    }

    fn send(&mut self, bus: &mut Bus, node: NodeId, id: CanId, payload: &[u8]) -> Result<usize, ProtocolError> {
        let frames = segment(payload, id)?;
        let now = bus.now();
        for f in &frames {
            bus.queue_frame(node, *f, now);
        }
        Ok(frames.len())
    }

    fn finish(&mut self, bus: &Bus, reason: FailureReason) {
        self.outcome.get_or_insert((reason, bus.now()));
    }

    fn on_wake(&mut self, bus: &mut Bus, what: Wake) -> Result<(), ProtocolError> {
        let now = bus.now();
        match what {
            Wake::BobListens => self.bob_rx.wait(bus, self.cfg.receiver_timeout),
            Wake::KeyGen => {
                let kp = self.backend.keygen();
                self.alice_sending = self.send(bus, self.ends.alice, self.cfg.alice_id, &kp.public)?;
                self.keypair = Some(kp);
                self.alice_phase = AlicePhase::SendingKey;
            }
            Wake::Encapsulate(pk) => {
                let enc = self.backend.encapsulate(&pk)?;
                self.bob_secret = Some(enc.shared_secret);
                self.send(bus, self.ends.bob, self.cfg.bob_id, &enc.ciphertext)?;
            }
            Wake::Decapsulate(ct) => {
                let sk = &self.keypair.as_ref().expect("alice has keys").secret;
                let ss = self.backend.decapsulate(sk, &ct)?;
                let ok = self.bob_secret.as_deref() == Some(ss.as_slice());
                self.finish(bus, if ok { FailureReason::None } else { FailureReason::CryptoMismatch });
            }
            Wake::Sign(msg) => {
                let sk = &self.keypair.as_ref().expect("alice has keys").secret;
                let mut payload = msg;
                let sig = self.backend.sign(sk, &payload)?;
                payload.extend_from_slice(&sig);
                self.alice_sending = self.send(bus, self.ends.alice, self.cfg.alice_id, &payload)?;
                self.alice_phase = AlicePhase::SendingSignature;
            }
            Wake::Verify(payload) => {
                let pk = self.bob_pk.as_deref().expect("bob has the public key");
                let (msg, sig) = payload.split_at(self.cfg.message_length.min(payload.len()));
                let ok = self.backend.verify(pk, msg, sig)?;
                self.finish(bus, if ok { FailureReason::None } else { FailureReason::CryptoMismatch });
            }
        }
        debug_assert_eq!(now, bus.now());
        Ok(())
    }

    /// Alice's last public-key frame has left the wire.
    fn alice_key_sent(&mut self, bus: &mut Bus) -> Result<(), ProtocolError> {
        match self.kind {
            Kind::Kem => {
                self.alice_rx.wait(bus, self.cfg.receiver_timeout);
                self.alice_phase = AlicePhase::Waiting;
            }
            Kind::Dsa => {
                let msg = self.backend.random_bytes(self.cfg.message_length);
                let d = self.compute(1, Op::Sign)?;
                let at = bus.now() + d;
                self.wake_at(bus, self.ends.alice, at, Wake::Sign(msg));
                self.alice_phase = AlicePhase::Signing;
            }
        }
        Ok(())
    }

    fn bob_got(&mut self, bus: &mut Bus, payload: Vec<u8>) -> Result<(), ProtocolError> {
        match self.kind {
            Kind::Kem => {
                let d = self.compute(1, Op::Encapsulate)?;
                let at = bus.now() + d;
                self.wake_at(bus, self.ends.bob, at, Wake::Encapsulate(payload));
            }
            Kind::Dsa if self.bob_pk.is_none() => {
                self.bob_pk = Some(payload);
                self.bob_rx.wait(bus, self.cfg.receiver_timeout);
            }
            Kind::Dsa => {
                let d = self.compute(2, Op::Verify)?;
                let at = bus.now() + d;
                self.wake_at(bus, self.ends.bob, at, Wake::Verify(payload));
            }
        }
        Ok(())
    }

    fn alice_got(&mut self, bus: &mut Bus, ct: Vec<u8>) -> Result<(), ProtocolError> {
        let d = self.compute(2, Op::Decapsulate)?;
        let at = bus.now() + d;
        self.wake_at(bus, self.ends.alice, at, Wake::Decapsulate(ct));
        Ok(())
    }

    fn guard(&mut self, r: Result<(), ProtocolError>) {
        if let Err(e) = r {
            self.error.get_or_insert(e);
        }
    }
}

impl<R: Rng> BusHandler for Flow<'_, '_, R> {
    fn on_receive(&mut self, bus: &mut Bus, node: NodeId, frame: &CanFrame) {
        let r = if node == self.ends.bob {
            match self.bob_rx.receive(bus, frame) {
                Some(p) => self.bob_got(bus, p),
                None => Ok(()),
            }
        } else if node == self.ends.alice && self.kind == Kind::Kem {
            match self.alice_rx.receive(bus, frame) {
                Some(p) => self.alice_got(bus, p),
                None => Ok(()),
            }
        } else {
            Ok(())
        };
        self.guard(r);
    }

    fn on_transmitted(&mut self, bus: &mut Bus, node: NodeId, frame: &CanFrame) {
        if node == self.ends.bob {
            self.bytes += frame.dlc() as u64;
        }
        if node != self.ends.alice {
            return;
        }
        self.bytes += frame.dlc() as u64;
        self.alice_sending -= 1;
        if self.alice_sending == 0 && self.alice_phase == AlicePhase::SendingKey {
            let r = self.alice_key_sent(bus);
            self.guard(r);
        }
    }

    fn on_timer(&mut self, bus: &mut Bus, node: NodeId, timer: TimerId) {
        if let Some(what) = self.wakes.remove(&timer) {
            let r = self.on_wake(bus, what);
            self.guard(r);
        } else if (node == self.ends.alice && self.alice_rx.timeout == Some(timer))
            || (node == self.ends.bob && self.bob_rx.timeout == Some(timer))
        {
            self.finish(bus, FailureReason::Timeout);
        }
    }

    fn is_finished(&self) -> bool {
        self.outcome.is_some() || self.error.is_some()
    }
}

/// One line of the per-session CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub algorithm: String,
    pub config: String,
    pub seed: u64,
    pub success: bool,
    pub failure_reason: FailureReason,
    pub keygen_ms: Option<f64>,
    pub op2_ms: Option<f64>,
    pub op3_ms: Option<f64>,
    pub overhead_ms: Option<f64>,
    pub wall_ms: f64,
    pub bytes_on_wire: u64,
}

impl SessionRecord {
    pub const HEADER: [&'static str; 11] = [
        "algorithm",
        "config",
        "seed",
        "success",
        "failure_reason",
        "keygen_ms",
        "op2_ms",
        "op3_ms",
        "overhead_ms",
        "wall_ms",
        "bytes_on_wire",
    ];

    pub fn new(algorithm: &str, config: &str, seed: u64, result: &SessionResult, nominal: SimDuration) -> Self {
        let ms = |d: Option<SimDuration>| d.map(SimDuration::as_millis_f64);
        SessionRecord {
            algorithm: algorithm.to_string(),
            config: config.to_string(),
            seed,
            success: result.success,
            failure_reason: result.failure_reason,
            keygen_ms: ms(result.keygen),
            op2_ms: ms(result.op2),
            op3_ms: ms(result.op3),
            overhead_ms: ms(overhead(result, nominal)),
            wall_ms: result.wall_clock_total.as_millis_f64(),
            bytes_on_wire: result.bytes_on_wire,
        }
    }

    pub fn fields(&self) -> [String; 11] {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.algorithm.clone(),
            self.config.clone(),
            self.seed.to_string(),
            self.success.to_string(),
            self.failure_reason.as_str().to_string(),
            opt(self.keygen_ms),
            opt(self.op2_ms),
            opt(self.op3_ms),
            opt(self.overhead_ms),
            format!("{:.6}", self.wall_ms),
            self.bytes_on_wire.to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::TrafficGenConfig;
    use crate::crypto::{default_profiles, find_profile, AlgorithmProfile, ComputeTimeModel, Fault, MockBackend, Sizes};
    use crate::crypto::profile::{ConfigTimings, MeanStd};
    use crate::ecu::EcuConfig;
    use crate::transport::frame_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    struct Setup {
        stuffing: StuffingModel,
        load: Option<(f64, u16, u16)>,
        fault: Fault,
        cfg_fn: fn(SessionConfig) -> SessionConfig,
    }

    impl Default for Setup {
        fn default() -> Self {
            Setup {
                stuffing: StuffingModel::None,
                load: None,
                fault: Fault::None,
                cfg_fn: |c| c,
            }
        }
    }

    fn session(p: &AlgorithmProfile, ecu: &EcuConfig, jitter: SimDuration, seed: u64, s: &Setup) -> SessionResult {
        let mut bus = Bus::new(ecu.bit_rate, s.stuffing, seed);
        bus.set_recording(false);
        let mut cfg = (s.cfg_fn)(SessionConfig::new(&p.name));
        cfg.start_jitter = jitter;
        let ends = attach_endpoints(&mut bus, &cfg);
        if let Some((load, lo, hi)) = s.load {
            bus.attach_traffic_generator(TrafficGenConfig::new(load, lo, hi, 1).unwrap());
        }
        let mut backend = MockBackend::new(p, ChaCha8Rng::seed_from_u64(seed ^ 0xB)).with_fault(s.fault);
        let mut clock = OpClock::new(p, ecu, ComputeTimeModel::default(), ChaCha8Rng::seed_from_u64(seed));
        match p.kind {
            Kind::Kem => run_kem_session(&mut bus, ends, &cfg, &mut backend, &mut clock).unwrap(),
            Kind::Dsa => run_dsa_session(&mut bus, ends, &cfg, &mut backend, &mut clock).unwrap(),
        }
    }

    fn named(name: &str) -> AlgorithmProfile {
        find_profile(&default_profiles(), name).unwrap().clone()
    }

    fn instant(kind: Kind, sizes: Sizes) -> AlgorithmProfile {
        let zero = MeanStd {
            mean_ms: 0.0,
            std_ms: 0.0,
        };
        let timings = ["high", "mid", "low"]
            .into_iter()
            .map(|c| {
                let t = ConfigTimings {
                    ops: kind.ops().into_iter().map(|op| (op, zero)).collect(),
                    overhead: None,
                    nominal: None,
                    success_rate: None,
                };
                (c.to_string(), t)
            })
            .collect();
        AlgorithmProfile {
            name: "instant".into(),
            kind,
            security_level: 1,
            sizes,
            source: String::new(),
            timings,
            cycles: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_jitter_no_load_always_succeeds() {
        for p in default_profiles() {
            for ecu in EcuConfig::presets() {
                let r = session(&p, &ecu, SimDuration::ZERO, 3, &Setup::default());
                assert!(r.success, "{} {}: {:?}", p.name, ecu.name, r.failure_reason);
                assert_eq!(r.failure_reason, FailureReason::None);
                assert!(r.op_durations().iter().all(Option::is_some));
            }
        }
    }

    #[test]
    fn bob_listening_too_late_times_out() {
        let p = named("Kyber512");
        let r = session(&p, &EcuConfig::high(), SimDuration::from_secs(3600), 9, &Setup::default());
        assert!(!r.success);
        assert_eq!(r.failure_reason, FailureReason::Timeout);
        assert!(r.op2.is_none() && r.op3.is_none());
        assert!(r.wall_clock_total >= SimDuration::from_secs(2));
        assert!(kem_overhead(&r).is_none() && crypto_only_overhead(&r).is_none());
    }

    #[test]
    fn mismatched_key_pair_is_crypto_mismatch() {
        let p = named("Kyber768");
        let setup = Setup {
            fault: Fault::MismatchedKeyPair,
            ..Setup::default()
        };
        let r = session(&p, &EcuConfig::mid(), SimDuration::ZERO, 1, &setup);
        assert_eq!((r.success, r.failure_reason), (false, FailureReason::CryptoMismatch));
    }

    #[test]
    fn corrupt_signature_is_crypto_mismatch() {
        let p = named("Dilithium3");
        let setup = Setup {
            fault: Fault::CorruptSignature,
            ..Setup::default()
        };
        let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, 1, &setup);
        assert_eq!((r.success, r.failure_reason), (false, FailureReason::CryptoMismatch));
        assert!(r.op3.is_some());
    }

    #[test]
    fn degenerate_kem_costs_two_single_frames() {
        let p = instant(
            Kind::Kem,
            Sizes::Kem {
                public_key: 0,
                secret_key: 0,
                ciphertext: 0,
                shared_secret: 0,
            },
        );
        let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, 0, &Setup::default());
        assert!(r.success);
        assert_eq!(kem_overhead(&r), Some(SimDuration::from_micros(222)));
        assert_eq!(crypto_only_overhead(&r), Some(SimDuration::ZERO));
        assert_eq!(r.bytes_on_wire, 16);
    }

    #[test]
    fn degenerate_dsa_overhead_is_key_wire_time() {
        let p = instant(
            Kind::Dsa,
            Sizes::Dsa {
                public_key: 1,
                secret_key: 1,
                signature: 0,
            },
        );
        let ecu = EcuConfig::high();
        let r = session(&p, &ecu, SimDuration::ZERO, 0, &Setup::default());
        let nominal = nominal_time(32, ecu.bit_rate, StuffingModel::None).unwrap();
        assert_eq!(dsa_overhead(&r, nominal), Some(SimDuration::from_micros(111)));
    }

    #[test]
    fn nominal_for_32_bytes() {
        let n = nominal_time(32, BitRate::MBPS_1, StuffingModel::None).unwrap();
        assert_eq!(n, SimDuration::from_micros(666));
    }

    #[test]
    fn kyber512_high_crypto_only_near_table() {
        let p = named("Kyber512");
        let n = 1000;
        let total: f64 = (0..n)
            .map(|i| {
                let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, i, &Setup::default());
                crypto_only_overhead(&r).unwrap().as_millis_f64()
            })
            .sum();
        let mean = total / n as f64;
        assert!((mean - 0.138).abs() < 0.01, "{mean}");
    }

    #[test]
    fn kyber512_wall_clock_is_wire_bound() {
        let p = named("Kyber512");
        let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, 4, &Setup::default());
        let frames = frame_count(800) + frame_count(768);
        assert_eq!(r.bytes_on_wire, 8 * frames);
        assert!(kem_overhead(&r).unwrap() >= SimDuration::from_millis(12));
    }

    #[test]
    fn dsa_byte_count_covers_key_message_and_signature() {
        let p = named("Dilithium2");
        let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, 4, &Setup::default());
        assert_eq!(r.bytes_on_wire, 8 * (frame_count(1312) + frame_count(32 + 2420)));
        let nominal = nominal_time(32, BitRate::MBPS_1, StuffingModel::None).unwrap();
        let ms = dsa_overhead(&r, nominal).unwrap().as_millis_f64();
        assert!((55.0..70.0).contains(&ms), "{ms}");
    }

    #[test]
    fn long_signature_at_low_rate_is_not_a_timeout() {
        let p = named("SPHINCS+-SHA2-128f-simple");
        let ecu = EcuConfig::low();
        let wire = nominal_time(32 + 17_088, ecu.bit_rate, StuffingModel::None).unwrap();
        assert!(wire > SimDuration::from_secs(2));
        let r = session(&p, &ecu, SimDuration::ZERO, 2, &Setup::default());
        assert!(r.success);
        assert!(r.wall_clock_total > wire);
    }

    #[test]
    fn friendly_background_load_does_not_hurt() {
        let load = Setup {
            load: Some((0.88, 0x100, 0x7FF)),
            ..Setup::default()
        };
        for name in ["Kyber512", "Falcon-512", "hqc-128"] {
            let p = named(name);
            for seed in 0..5 {
                let r = session(&p, &EcuConfig::mid(), SimDuration::ZERO, seed, &load);
                assert!(r.success, "{name}");
                let quiet = session(&p, &EcuConfig::mid(), SimDuration::ZERO, seed, &Setup::default());
                assert_eq!(r.op_durations(), quiet.op_durations());
                // At most one background frame in flight delays each protocol frame.
                let slack = SimDuration::from_micros(2 * 222 * (r.bytes_on_wire / 8));
                assert!(r.wall_clock_total <= quiet.wall_clock_total + slack);
            }
        }
    }

    #[test]
    fn inverted_priority_still_completes_but_slower() {
        let setup = Setup {
            load: Some((0.88, 0x100, 0x7FD)),
            cfg_fn: SessionConfig::inverted_priority,
            ..Setup::default()
        };
        let p = named("Kyber512");
        let r = session(&p, &EcuConfig::high(), SimDuration::ZERO, 7, &setup);
        let quiet = session(&p, &EcuConfig::high(), SimDuration::ZERO, 7, &Setup::default());
        assert!(r.success);
        assert!(r.wall_clock_total.as_nanos() > 3 * quiet.wall_clock_total.as_nanos());
    }

    #[test]
    fn zero_compute_scales_with_bit_rate() {
        let p = instant(
            Kind::Kem,
            Sizes::Kem {
                public_key: 2000,
                secret_key: 10,
                ciphertext: 3000,
                shared_secret: 32,
            },
        );
        let hi = session(&p, &EcuConfig::high(), SimDuration::ZERO, 0, &Setup::default());
        let lo = session(&p, &EcuConfig::low(), SimDuration::ZERO, 0, &Setup::default());
        let ratio = lo.wall_clock_total.as_nanos() as f64 / hi.wall_clock_total.as_nanos() as f64;
        assert!((ratio - 8.0).abs() < 0.08, "{ratio}");
    }

    #[test]
    fn success_monotone_in_jitter_per_seed() {
        let p = named("Kyber512");
        let js = [0u64, 100, 500, 1000, 3000].map(SimDuration::from_millis);
        let mut rates = Vec::new();
        for j in js {
            let ok: Vec<bool> = (0..200)
                .map(|s| session(&p, &EcuConfig::high(), j, s, &Setup::default()).success)
                .collect();
            rates.push(ok);
        }
        for w in rates.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(a >= b);
            }
        }
        assert!(rates[0].iter().all(|&x| x));
    }

    #[test]
    fn rejects_bad_configs() {
        let p = named("Kyber512");
        let ecu = EcuConfig::high();
        let mut bus = Bus::new(ecu.bit_rate, StuffingModel::None, 0);
        let mut backend = MockBackend::new(&p, ChaCha8Rng::seed_from_u64(0));
        let mut clock = OpClock::new(&p, &ecu, ComputeTimeModel::default(), ChaCha8Rng::seed_from_u64(0));
        let mut cfg = SessionConfig::new("Kyber512");
        let ends = attach_endpoints(&mut bus, &cfg);
        assert!(matches!(
            run_dsa_session(&mut bus, ends, &cfg, &mut backend, &mut clock),
            Err(ProtocolError::WrongKind { .. })
        ));
        cfg.bob_id = cfg.alice_id;
        assert!(matches!(cfg.validate(), Err(ProtocolError::SameIds(_))));
        let mut cfg = SessionConfig::new("Kyber512");
        cfg.receiver_timeout = SimDuration::ZERO;
        assert!(cfg.validate().is_err());
        let other = SessionConfig::new("Kyber768");
        assert!(matches!(
            run_kem_session(&mut bus, ends, &other, &mut backend, &mut clock),
            Err(ProtocolError::ProfileMismatch { .. })
        ));
    }

    #[test]
    fn record_fields() {
        let p = named("Falcon-512");
        let r = session(&p, &EcuConfig::high(), SimDuration::from_secs(3600), 9, &Setup::default());
        let rec = SessionRecord::new("Falcon-512", "high", 9, &r, SimDuration::ZERO);
        let f = rec.fields();
        assert_eq!(f[3], "false");
        assert_eq!(f[4], "timeout");
        assert_eq!(f[7], "");
        assert_eq!(f[8], "");
        assert!(!f[5].is_empty());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn success_only_with_ground_truth(seed in 0u64..1_000_000, jitter_us in 0u64..400, faulty: bool, dsa: bool) {
            let p = named(if dsa { "Falcon-512" } else { "Kyber512" });
            let fault = match (faulty, dsa) {
                (false, _) => Fault::None,
                (true, false) => Fault::MismatchedKeyPair,
                (true, true) => Fault::CorruptSignature,
            };
            let setup = Setup { fault, ..Setup::default() };
            let r = session(&p, &EcuConfig::high(), SimDuration::from_micros(jitter_us), seed, &setup);
            proptest::prop_assert_eq!(r.success, r.failure_reason == FailureReason::None);
            if faulty {
                proptest::prop_assert!(!r.success);
            }
        }
    }
}
