//! Segmentation of arbitrary-length payloads into 8-byte CAN frames.
//!
//! Wire layout (every frame is padded to 8 data bytes with `0x00`):
//!
//! ```text
//! first frame        0x10 | len[31:24] len[23:16] len[15:8] len[7:0] | p0 p1 p2
//! consecutive frame  seq  | p(3+7k) .. p(3+7k+6)
//! ```
//!
//! `seq` starts at 1 and wraps modulo 256. Messages are identified by the
//! sender's CAN identifier; one message per identifier is in flight at a
//! time. There is no flow control.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frame::{stuffed_bits_for_dlc, CanFrame, CanId, StuffingModel, MAX_DLC};

pub const FIRST_FRAME_MARKER: u8 = 0x10;
const FIRST_FRAME_PAYLOAD: usize = 3;
const CONSECUTIVE_PAYLOAD: usize = 7;
const PADDING: u8 = 0x00;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("payload of {0} bytes does not fit the 32-bit length field")]
    Oversize(u64),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ReassemblyError {
    #[error("sequence gap on {id}: expected {expected}, got {got}")]
    SequenceGap { id: CanId, expected: u8, got: u8 },
    #[error("consecutive frame on {0} without a first frame")]
    Orphan(CanId),
    #[error("first frame on {0} aborted a message in progress")]
    Restart(CanId),
}

/// Number of frames `segment` emits for a payload of `len` bytes.
pub fn frame_count(len: u64) -> u64 {
    if len <= FIRST_FRAME_PAYLOAD as u64 {
        1
    } else {
        1 + (len - FIRST_FRAME_PAYLOAD as u64).div_ceil(CONSECUTIVE_PAYLOAD as u64)
    }
}

fn check_len(len: u64) -> Result<u32, TransportError> {
    u32::try_from(len).map_err(|_| TransportError::Oversize(len))
}

pub fn segment(payload: &[u8], id: CanId) -> Result<Vec<CanFrame>, TransportError> {
    let len = check_len(payload.len() as u64)?;
    let mut frames = Vec::with_capacity(frame_count(len as u64) as usize);

    let mut buf = [PADDING; MAX_DLC];
    buf[0] = FIRST_FRAME_MARKER;
    buf[1..5].copy_from_slice(&len.to_be_bytes());
    let head = payload.len().min(FIRST_FRAME_PAYLOAD);
    buf[5..5 + head].copy_from_slice(&payload[..head]);
    frames.push(CanFrame::new(id, &buf).expect("8 bytes"));

    for (k, chunk) in payload[head..].chunks(CONSECUTIVE_PAYLOAD).enumerate() {
        let mut buf = [PADDING; MAX_DLC];
        buf[0] = ((k + 1) % 256) as u8;
        buf[1..1 + chunk.len()].copy_from_slice(chunk);
        frames.push(CanFrame::new(id, &buf).expect("8 bytes"));
    }
    Ok(frames)
}

/// On-wire bits for a payload of `len` bytes, summing every frame's stuffed
/// length. All frames are padded to 8 bytes.
pub fn transmission_bit_cost(len: u64, stuffing: StuffingModel) -> Result<u64, TransportError> {
    check_len(len)?;
    Ok(frame_count(len) * stuffed_bits_for_dlc(MAX_DLC as u8, stuffing) as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feed {
    Incomplete,
    Complete(Vec<u8>),
}

#[derive(Debug)]
struct Partial {
    expected: usize,
    next_seq: u8,
    buf: Vec<u8>,
}

/// Per-identifier reassembly buffers plus a log of every error observed.
#[derive(Debug, Default)]
pub struct ReassemblyState {
    partial: BTreeMap<CanId, Partial>,
    errors: Vec<ReassemblyError>,
}

impl ReassemblyState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every error seen so far, including restarts.
    pub fn errors(&self) -> &[ReassemblyError] {
        &self.errors
    }

    pub fn in_progress(&self, id: CanId) -> bool {
        self.partial.contains_key(&id)
    }

    /// Bytes received so far for the message in flight on `id`.
    pub fn received(&self, id: CanId) -> Option<(usize, usize)> {
        self.partial.get(&id).map(|p| (p.buf.len(), p.expected))
    }

    /// Consumes one frame.
    ///
    /// While a message is in progress, byte 0 is read as a sequence number.
    /// A mismatch aborts the message with `SequenceGap`; when the mismatched
    /// byte is the first-frame marker the frame additionally starts a new
    /// message and a `Restart` is logged. A restarting first frame that would
    /// complete on its own is discarded, since it cannot be told apart from a
    /// consecutive frame carrying sequence number 16.
    pub fn feed(&mut self, frame: &CanFrame) -> Result<Feed, ReassemblyError> {
        let id = frame.id();
        let data = frame.data();
        let Some(&tag) = data.first() else {
            return self.fail(ReassemblyError::Orphan(id));
        };

        if let Some(p) = self.partial.get_mut(&id) {
            if tag == p.next_seq {
                let want = (p.expected - p.buf.len()).min(CONSECUTIVE_PAYLOAD);
                let body = &data[1..];
                let take = want.min(body.len());
                p.buf.extend_from_slice(&body[..take]);
                p.next_seq = p.next_seq.wrapping_add(1);
                if p.buf.len() == p.expected {
                    let done = self.partial.remove(&id).expect("present");
                    return Ok(Feed::Complete(done.buf));
                }
                return Ok(Feed::Incomplete);
            }
            let gap = ReassemblyError::SequenceGap {
                id,
                expected: p.next_seq,
                got: tag,
            };
            self.partial.remove(&id);
            if tag != FIRST_FRAME_MARKER {
                return self.fail(gap);
            }
            self.errors.push(gap);
            self.errors.push(ReassemblyError::Restart(id));
            let _ = self.begin(id, data);
            return Err(gap);
        }

        if tag == FIRST_FRAME_MARKER {
            return self.begin(id, data);
        }
        self.fail(ReassemblyError::Orphan(id))
    }

    fn fail(&mut self, e: ReassemblyError) -> Result<Feed, ReassemblyError> {
        self.errors.push(e);
        Err(e)
    }

    fn begin(&mut self, id: CanId, data: &[u8]) -> Result<Feed, ReassemblyError> {
        if data.len() < 5 {
            return self.fail(ReassemblyError::Orphan(id));
        }
        let expected = u32::from_be_bytes(data[1..5].try_into().expect("4 bytes")) as usize;
        let head = expected.min(FIRST_FRAME_PAYLOAD).min(data.len() - 5);
        let mut buf = Vec::with_capacity(expected.min(1 << 16));
        buf.extend_from_slice(&data[5..5 + head]);
        if buf.len() == expected {
            return Ok(Feed::Complete(buf));
        }
        self.partial.insert(
            id,
            Partial {
                expected,
                next_seq: 1,
                buf,
            },
        );
        Ok(Feed::Incomplete)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::nominal_bit_length;
    use proptest::prelude::*;

    fn id() -> CanId {
        CanId::new(0x010).unwrap()
    }

    fn payload(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i * 31 + 7) as u8).collect()
    }

    fn reassemble(frames: &[CanFrame]) -> Result<Option<Vec<u8>>, ReassemblyError> {
        let mut st = ReassemblyState::new();
        let mut out = None;
        for f in frames {
            if let Feed::Complete(p) = st.feed(f)? {
                out = Some(p);
            }
        }
        Ok(out)
    }

    #[test]
    fn frame_counts() {
        assert_eq!(segment(&payload(800), id()).unwrap().len(), 115);
        assert_eq!(segment(&payload(3), id()).unwrap().len(), 1);
        assert_eq!(segment(&[], id()).unwrap().len(), 1);
        assert_eq!(frame_count(4), 2);
        assert_eq!(frame_count(10), 2);
        assert_eq!(frame_count(11), 3);
    }

    #[test]
    fn header_layout() {
        let frames = segment(&payload(20), id()).unwrap();
        let first = frames[0].data();
        assert_eq!(first[0], 0x10);
        assert_eq!(&first[1..5], &20u32.to_be_bytes());
        assert_eq!(&first[5..8], &payload(20)[..3]);
        assert_eq!(frames[1].data()[0], 1);
        assert_eq!(frames[2].data()[0], 2);
        // 20 - 3 - 7 = 10 bytes left: frame 2 full, frame 3 padded.
        assert_eq!(frames[3].data(), &[3, payload(20)[17], payload(20)[18], payload(20)[19], 0, 0, 0, 0]);
        assert!(frames.iter().all(|f| f.dlc() == 8 && f.id() == id()));
    }

    #[test]
    fn empty_message_header() {
        let frames = segment(&[], id()).unwrap();
        assert_eq!(frames[0].data(), &[0x10, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(reassemble(&frames).unwrap(), Some(vec![]));
    }

    #[test]
    fn sequence_wraps() {
        let frames = segment(&payload(3 + 7 * 300), id()).unwrap();
        assert_eq!(frames[255].data()[0], 255);
        assert_eq!(frames[256].data()[0], 0);
        assert_eq!(frames[257].data()[0], 1);
        assert_eq!(reassemble(&frames).unwrap(), Some(payload(3 + 7 * 300)));
    }

    #[test]
    fn round_trip_800() {
        let p = payload(800);
        assert_eq!(reassemble(&segment(&p, id()).unwrap()).unwrap(), Some(p));
    }

    #[test]
    fn dropped_middle_frame() {
        let mut frames = segment(&payload(12), id()).unwrap();
        assert_eq!(frames.len(), 3);
        frames.remove(1);
        assert_eq!(
            reassemble(&frames),
            Err(ReassemblyError::SequenceGap { id: id(), expected: 1, got: 2 })
        );
    }

    #[test]
    fn dropping_the_frame_before_seq_16_is_still_a_gap() {
        let mut frames = segment(&payload(200), id()).unwrap();
        frames.remove(15);
        assert_eq!(
            reassemble(&frames),
            Err(ReassemblyError::SequenceGap { id: id(), expected: 15, got: 16 })
        );
    }

    #[test]
    fn orphan_consecutive_frame() {
        let frames = segment(&payload(30), id()).unwrap();
        let mut st = ReassemblyState::new();
        assert_eq!(st.feed(&frames[1]), Err(ReassemblyError::Orphan(id())));
        assert_eq!(st.errors(), &[ReassemblyError::Orphan(id())]);
    }

    #[test]
    fn restart_mid_message() {
        let first = segment(&payload(30), id()).unwrap();
        let second = segment(&payload(40), id()).unwrap();
        let mut st = ReassemblyState::new();
        st.feed(&first[0]).unwrap();
        st.feed(&first[1]).unwrap();
        assert!(st.feed(&second[0]).is_err());
        assert!(st.errors().contains(&ReassemblyError::Restart(id())));
        let mut out = None;
        for f in &second[1..] {
            if let Feed::Complete(p) = st.feed(f).unwrap() {
                out = Some(p);
            }
        }
        assert_eq!(out, Some(payload(40)));
    }

    #[test]
    fn restart_with_tiny_message_is_discarded() {
        let first = segment(&payload(30), id()).unwrap();
        let tiny = segment(&[9, 8], id()).unwrap();
        let mut st = ReassemblyState::new();
        st.feed(&first[0]).unwrap();
        assert!(matches!(st.feed(&tiny[0]), Err(ReassemblyError::SequenceGap { got: 0x10, .. })));
        assert!(st.errors().contains(&ReassemblyError::Restart(id())));
        assert!(!st.in_progress(id()));
    }

    #[test]
    fn independent_ids() {
        let a = CanId::new(0x10).unwrap();
        let b = CanId::new(0x11).unwrap();
        let fa = segment(&payload(20), a).unwrap();
        let fb = segment(&payload(25), b).unwrap();
        let mut st = ReassemblyState::new();
        let mut done = Vec::new();
        let interleaved = fa.iter().zip(fb.iter()).flat_map(|(x, y)| [x, y]);
        for f in interleaved.chain(&fb[fa.len()..]) {
            if let Feed::Complete(p) = st.feed(f).unwrap() {
                done.push((f.id(), p));
            }
        }
        assert_eq!(done, vec![(a, payload(20)), (b, payload(25))]);
    }

    #[test]
    fn bit_costs() {
        let none = StuffingModel::None;
        assert_eq!(transmission_bit_cost(800, none).unwrap(), 12_765);
        assert_eq!(transmission_bit_cost(0, none).unwrap(), 111);
        let bits = transmission_bit_cost(3732, none).unwrap();
        assert_eq!(bits, (1 + 3729u64.div_ceil(7)) * 111);
        assert!(transmission_bit_cost(1 << 32, none).is_err());
    }

    #[test]
    fn bit_cost_matches_frames() {
        let m = StuffingModel::WorstCase;
        for n in [0usize, 1, 3, 4, 17, 100] {
            let frames = segment(&payload(n), id()).unwrap();
            let sum: u64 = frames.iter().map(|f| crate::frame::stuffed_bit_length(f, m) as u64).sum();
            assert_eq!(transmission_bit_cost(n as u64, m).unwrap(), sum);
            let nominal: u64 = frames.iter().map(|f| nominal_bit_length(f) as u64).sum();
            assert_eq!(transmission_bit_cost(n as u64, StuffingModel::None).unwrap(), nominal);
        }
    }

    proptest! {
        #[test]
        fn round_trip(p in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let frames = segment(&p, id()).unwrap();
            prop_assert_eq!(frames.len() as u64, frame_count(p.len() as u64));
            prop_assert_eq!(reassemble(&frames).unwrap(), Some(p));
        }

        #[test]
        fn interior_drop_detected(n in 11usize..3000, pick in any::<proptest::sample::Index>()) {
            let mut frames = segment(&payload(n), id()).unwrap();
            let interior = 1 + pick.index(frames.len() - 2);
            frames.remove(interior);
            let got = reassemble(&frames);
            let is_gap = matches!(got, Err(ReassemblyError::SequenceGap { .. }));
            prop_assert!(is_gap, "{:?}", got);
        }
    }
}
