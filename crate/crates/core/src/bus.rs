//! Single shared CAN bus driven by a deterministic discrete-event loop.
//!
//! Events are ordered by `(time, node, per-node sequence)`. At every instant
//! the engine first drains all events scheduled for that instant, then, if
//! the bus is idle, arbitrates among the head frames of every node's
//! outbound FIFO. Frames are delivered to every other node whose filter
//! accepts the identifier at the frame's `tx_end` time.
//!
//! Protocol logic plugs in through [`BusHandler`]; callbacks receive the bus
//! itself so they can queue frames and arm timers.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{frame_duration, BitRate, CanFrame, CanId, StuffingModel, MAX_DLC, MAX_STANDARD_ID};
use crate::seed::mix64;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("cannot run backwards from {now} to {requested}")]
    TimeReversed { now: SimTime, requested: SimTime },
    #[error("empty utilization window [{0}, {1})")]
    EmptyWindow(SimTime, SimTime),
    #[error("target load {0} outside [0, 1]")]
    InvalidLoad(f64),
    #[error("identifier range {low:#x}..={high:#x} is invalid")]
    InvalidIdRange { low: u16, high: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Acceptance predicate on inbound identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    AcceptAll,
    RejectAll,
    Exact(CanId),
    /// Inclusive identifier range.
    Range(CanId, CanId),
    /// Accept when `frame_id & mask == id & mask`.
    Mask { id: CanId, mask: u16 },
}

impl Filter {
    pub fn accepts(&self, id: CanId) -> bool {
        match *self {
            Filter::AcceptAll => true,
            Filter::RejectAll => false,
            Filter::Exact(want) => id == want,
            Filter::Range(lo, hi) => lo <= id && id <= hi,
            Filter::Mask { id: want, mask } => id.raw() & mask == want.raw() & mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    TxQueued,
    TxStart,
    TxEnd,
    RxDeliver,
    TimeoutFired,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TxQueued => "tx_queued",
            EventKind::TxStart => "tx_start",
            EventKind::TxEnd => "tx_end",
            EventKind::RxDeliver => "rx_deliver",
            EventKind::TimeoutFired => "timeout_fired",
        }
    }
}

/// One entry of the recorded event trace. `frame` is absent only for
/// `TimeoutFired`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusEvent {
    pub time: SimTime,
    pub kind: EventKind,
    pub node: NodeId,
    pub frame: Option<CanFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Receiver timeout; recorded in the trace as `timeout_fired`.
    Timeout,
    /// Internal wake-up (e.g. end of a computation); not traced.
    Wake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimerId(u64);

/// Callbacks invoked by the engine. All methods default to no-ops.
pub trait BusHandler {
    fn on_receive(&mut self, _bus: &mut Bus, _node: NodeId, _frame: &CanFrame) {}
    fn on_transmitted(&mut self, _bus: &mut Bus, _node: NodeId, _frame: &CanFrame) {}
    fn on_timer(&mut self, _bus: &mut Bus, _node: NodeId, _timer: TimerId) {}
    /// Checked between events; returning true stops the run loop.
    fn is_finished(&self) -> bool {
        false
    }
}

impl BusHandler for () {}

/// Background traffic generator settings. Frames always carry 8 data bytes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficGenConfig {
    pub target_load: f64,
    pub id_low: u16,
    pub id_high: u16,
    pub seed: u64,
}

impl TrafficGenConfig {
    pub fn new(target_load: f64, id_low: u16, id_high: u16, seed: u64) -> Result<Self, BusError> {
        if !(0.0..=1.0).contains(&target_load) {
            return Err(BusError::InvalidLoad(target_load));
        }
        if id_low > id_high || id_high > MAX_STANDARD_ID {
            return Err(BusError::InvalidIdRange { low: id_low, high: id_high });
        }
        Ok(TrafficGenConfig {
            target_load,
            id_low,
            id_high,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Simulation time reached the requested end.
    Reached,
    /// The handler reported completion.
    Finished,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Enqueue(CanFrame),
    TxEnd,
    Timer(TimerId, TimerKind),
    Generate(usize),
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: SimTime,
    node: NodeId,
    seq: u64,
    action: Action,
}

impl Scheduled {
    fn key(&self) -> (SimTime, NodeId, u64) {
        (self.time, self.node, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so BinaryHeap pops the earliest key first.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Debug)]
struct NodeState {
    filter: Filter,
    fifo: VecDeque<CanFrame>,
    next_seq: u64,
}

#[derive(Debug, Clone, Copy)]
struct Transmission {
    node: NodeId,
    frame: CanFrame,
    end: SimTime,
}

#[derive(Debug)]
struct Generator {
    node: NodeId,
    cfg: TrafficGenConfig,
    rng: ChaCha8Rng,
    origin: SimTime,
    period_ns: f64,
    emitted: u64,
}

pub struct Bus {
    rate: BitRate,
    stuffing: StuffingModel,
    seed: u64,
    now: SimTime,
    nodes: Vec<NodeState>,
    heap: BinaryHeap<Scheduled>,
    current: Option<Transmission>,
    cancelled: HashSet<TimerId>,
    next_timer: u64,
    generators: Vec<Generator>,
    record: bool,
    trace: Vec<BusEvent>,
    busy_ns: u64,
}

impl Bus {
    pub fn new(rate: BitRate, stuffing: StuffingModel, seed: u64) -> Self {
        Bus {
            rate,
            stuffing,
            seed,
            now: SimTime::ZERO,
            nodes: Vec::new(),
            heap: BinaryHeap::new(),
            current: None,
            cancelled: HashSet::new(),
            next_timer: 0,
            generators: Vec::new(),
            record: true,
            trace: Vec::new(),
            busy_ns: 0,
        }
    }

    /// Turns trace recording on or off. Recording is on by default.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn bit_rate(&self) -> BitRate {
        self.rate
    }

    pub fn stuffing(&self) -> StuffingModel {
        self.stuffing
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame_time(&self, frame: &CanFrame) -> SimDuration {
        frame_duration(frame, self.rate, self.stuffing)
    }

    /// Fraction of elapsed simulated time the bus has been transmitting.
    pub fn utilization(&self) -> f64 {
        if self.now == SimTime::ZERO {
            return 0.0;
        }
        let mut busy = self.busy_ns;
        if let Some(tx) = &self.current {
            let start = tx.end.as_nanos() - self.frame_time(&tx.frame).as_nanos();
            busy += self.now.as_nanos().saturating_sub(start);
        }
        busy as f64 / self.now.as_nanos() as f64
    }

    pub fn attach_node(&mut self, filter: Filter) -> NodeId {
        let id = NodeId(self.nodes.len() as u16);
        self.nodes.push(NodeState {
            filter,
            fifo: VecDeque::new(),
            next_seq: 0,
        });
        id
    }

    /// Frames waiting in `node`'s outbound FIFO, not counting one on the wire.
    pub fn pending(&self, node: NodeId) -> usize {
        self.nodes[node.0 as usize].fifo.len()
    }

    /// Makes `frame` contend for the bus no earlier than `earliest`.
    pub fn queue_frame(&mut self, node: NodeId, frame: CanFrame, earliest: SimTime) {
        if earliest <= self.now {
            self.enqueue_now(node, frame);
        } else {
            self.schedule(earliest, node, Action::Enqueue(frame));
        }
    }

    pub fn schedule_timer(&mut self, node: NodeId, at: SimTime, kind: TimerKind) -> TimerId {
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        self.schedule(at.max(self.now), node, Action::Timer(id, kind));
        id
    }

    pub fn cancel_timer(&mut self, timer: TimerId) {
        self.cancelled.insert(timer);
    }

    /// Adds a paced background source on its own node. Inter-frame gaps are
    /// `frame_time / target_load`; identifiers are uniform over the range.
    pub fn attach_traffic_generator(&mut self, cfg: TrafficGenConfig) -> NodeId {
        let node = self.attach_node(Filter::RejectAll);
        let index = self.generators.len();
        let rng = ChaCha8Rng::seed_from_u64(mix64(&[self.seed, cfg.seed, index as u64]));
        let template = CanFrame::new(CanId::new(0).expect("zero id"), &[0; MAX_DLC]).expect("8-byte frame");
        let frame_ns = self.frame_time(&template).as_nanos() as f64;
        let period_ns = if cfg.target_load > 0.0 {
            frame_ns / cfg.target_load
        } else {
            f64::INFINITY
        };
        self.generators.push(Generator {
            node,
            cfg,
            rng,
            origin: self.now,
            period_ns,
            emitted: 0,
        });
        if cfg.target_load > 0.0 {
            self.schedule(self.now, node, Action::Generate(index));
        }
        node
    }

    /// Drains and returns the events recorded so far.
    pub fn take_trace(&mut self) -> Vec<BusEvent> {
        std::mem::take(&mut self.trace)
    }

    pub fn trace(&self) -> &[BusEvent] {
        &self.trace
    }

    /// Processes every event up to and including `t_end` with no handler and
    /// returns the trace recorded since the last drain.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<Vec<BusEvent>, BusError> {
        self.run_until_with(t_end, &mut ())?;
        Ok(self.take_trace())
    }

    pub fn run_until_with<H: BusHandler + ?Sized>(
        &mut self,
        t_end: SimTime,
        handler: &mut H,
    ) -> Result<RunOutcome, BusError> {
        if t_end < self.now {
            return Err(BusError::TimeReversed {
                now: self.now,
                requested: t_end,
            });
        }
        loop {
            if handler.is_finished() {
                return Ok(RunOutcome::Finished);
            }
            if let Some(top) = self.heap.peek() {
                if top.time <= self.now {
                    let ev = self.heap.pop().expect("peeked");
                    self.dispatch(ev, handler);
                    continue;
                }
            }
            if self.current.is_none() && self.start_next_transmission() {
                continue;
            }
            match self.heap.peek() {
                Some(top) if top.time <= t_end => self.now = top.time,
                _ => {
                    self.now = t_end;
                    return Ok(RunOutcome::Reached);
                }
            }
        }
    }

    fn schedule(&mut self, time: SimTime, node: NodeId, action: Action) {
        let state = &mut self.nodes[node.0 as usize];
        let seq = state.next_seq;
        state.next_seq += 1;
        self.heap.push(Scheduled {
            time,
            node,
            seq,
            action,
        });
    }

    fn log(&mut self, kind: EventKind, node: NodeId, frame: Option<CanFrame>) {
        if self.record {
            self.trace.push(BusEvent {
                time: self.now,
                kind,
                node,
                frame,
            });
        }
    }

    fn enqueue_now(&mut self, node: NodeId, frame: CanFrame) {
        self.nodes[node.0 as usize].fifo.push_back(frame);
        self.log(EventKind::TxQueued, node, Some(frame));
    }

    fn dispatch<H: BusHandler + ?Sized>(&mut self, ev: Scheduled, handler: &mut H) {
        match ev.action {
            Action::Enqueue(frame) => self.enqueue_now(ev.node, frame),
            Action::TxEnd => self.finish_transmission(handler),
            Action::Timer(id, kind) => {
                if self.cancelled.remove(&id) {
                    return;
                }
                if kind == TimerKind::Timeout {
                    self.log(EventKind::TimeoutFired, ev.node, None);
                }
                handler.on_timer(self, ev.node, id);
            }
            Action::Generate(index) => self.generate(index),
        }
    }

    fn generate(&mut self, index: usize) {
        let g = &mut self.generators[index];
        let raw = g.rng.random_range(g.cfg.id_low..=g.cfg.id_high);
        let mut data = [0u8; MAX_DLC];
        g.rng.fill(&mut data[..]);
        let frame = CanFrame::new(CanId::new(raw as u32).expect("validated range"), &data)
            .expect("8-byte frame");
        g.emitted += 1;
        let offset = (g.emitted as f64 * g.period_ns).round() as u64;
        let next = SimTime(g.origin.as_nanos() + offset);
        let node = g.node;
        self.enqueue_now(node, frame);
        self.schedule(next, node, Action::Generate(index));
    }

    fn start_next_transmission(&mut self) -> bool {
        let heads: Vec<(NodeId, CanFrame)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.fifo.front().map(|f| (NodeId(i as u16), *f)))
            .collect();
        let Some(winner) = arbitrate(&heads) else {
            return false;
        };
        let (node, frame) = heads[winner];
        self.nodes[node.0 as usize].fifo.pop_front();
        let end = self.now + self.frame_time(&frame);
        self.current = Some(Transmission { node, frame, end });
        self.log(EventKind::TxStart, node, Some(frame));
        self.schedule(end, node, Action::TxEnd);
        true
    }

    fn finish_transmission<H: BusHandler + ?Sized>(&mut self, handler: &mut H) {
        let tx = self.current.take().expect("tx_end without transmission");
        self.busy_ns += self.frame_time(&tx.frame).as_nanos();
        self.log(EventKind::TxEnd, tx.node, Some(tx.frame));
        handler.on_transmitted(self, tx.node, &tx.frame);
        for i in 0..self.nodes.len() {
            let node = NodeId(i as u16);
            if node == tx.node || !self.nodes[i].filter.accepts(tx.frame.id()) {
                continue;
            }
            self.log(EventKind::RxDeliver, node, Some(tx.frame));
            handler.on_receive(self, node, &tx.frame);
        }
    }
}

/// Picks the pending entry that wins CAN arbitration: the lowest identifier,
/// with equal identifiers resolved toward the lowest node id.
pub fn arbitrate(pending: &[(NodeId, CanFrame)]) -> Option<usize> {
    let best = pending
        .iter()
        .enumerate()
        .min_by_key(|(_, (node, frame))| (frame.id(), *node))
        .map(|(i, _)| i)?;
    let id = pending[best].1.id();
    if pending.iter().filter(|(_, f)| f.id() == id).count() > 1 {
        log::warn!("identifier {id} contended by several nodes; resolved by node id");
    }
    Some(best)
}

/// Busy fraction of `[from, to)` computed from `tx_start`/`tx_end` pairs.
/// A transmission still in flight at the end of the trace counts as busy
/// up to the window end.
pub fn bus_utilization(trace: &[BusEvent], from: SimTime, to: SimTime) -> Result<f64, BusError> {
    if to <= from {
        return Err(BusError::EmptyWindow(from, to));
    }
    let mut busy = 0u64;
    let mut open: Option<SimTime> = None;
    let overlap = |s: SimTime, e: SimTime| e.min(to).as_nanos().saturating_sub(s.max(from).as_nanos());
    for ev in trace {
        match ev.kind {
            EventKind::TxStart => open = Some(ev.time),
            EventKind::TxEnd => {
                if let Some(start) = open.take() {
                    busy += overlap(start, ev.time);
                }
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        busy += overlap(start, to);
    }
    Ok(busy as f64 / (to.as_nanos() - from.as_nanos()) as f64)
}

/// Writes one tab-separated line per event:
/// `time_ns  kind  node_id  can_id  dlc  data`. Timeout lines carry `-` in
/// the frame columns.
pub fn write_trace<W: Write>(events: &[BusEvent], mut out: W) -> io::Result<()> {
    for ev in events {
        write!(out, "{}\t{}\t{}\t", ev.time.as_nanos(), ev.kind.as_str(), ev.node)?;
        match &ev.frame {
            Some(f) => {
                write!(out, "{:03x}\t{}\t", f.id().raw(), f.dlc())?;
                for b in f.data() {
                    write!(out, "{b:02x}")?;
                }
                writeln!(out)?;
            }
            None => writeln!(out, "-\t-\t-")?,
        }
    }
    Ok(())
}
