//! XR frame generation and downlink queues.

use std::collections::VecDeque;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{TruncGaussParams, XrFlowConfig};

/// Draws from `N(mean, std)` conditioned on `[min, max]`.
///
/// Plain rejection; for the distributions used here the acceptance rate is
/// above 95%. Degenerate parameter sets whose mass inside the bounds is tiny
/// fall back to inverse-CDF sampling.
pub fn sample_trunc_gauss<R: Rng + ?Sized>(p: &TruncGaussParams, rng: &mut R) -> f64 {
    for _ in 0..256 {
        let z: f64 = rng.sample(StandardNormal);
        let x = p.mean + p.std * z;
        if x >= p.min && x <= p.max {
            return x;
        }
    }
    let n = Normal::new(p.mean, p.std).expect("validated std > 0");
    let lo = n.cdf(p.min);
    let hi = n.cdf(p.max);
    let u: f64 = rng.gen();
    n.inverse_cdf(lo + u * (hi - lo)).clamp(p.min, p.max)
}

/// One application video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct XrFrame {
    pub flow_id: u32,
    pub seq: u32,
    pub gen_time_ms: f64,
    pub arrival_time_ms: f64,
    pub size_bits: u64,
    pub deadline_ms: f64,
    pub remaining_bits: u64,
    pub completion_time_ms: Option<f64>,
}

/// Infinite, lazily evaluated frame sequence of one XR flow.
#[derive(Debug, Clone)]
pub struct XrSource<R> {
    flow: XrFlowConfig,
    flow_id: u32,
    next_seq: u32,
    rng: R,
}

impl<R: Rng> XrSource<R> {
    pub fn new(flow: XrFlowConfig, flow_id: u32, rng: R) -> Self {
        Self { flow, flow_id, next_seq: 0, rng }
    }

    pub fn gen_time_ms(&self, seq: u32) -> f64 {
        seq as f64 * 1000.0 / self.flow.fps
    }

    /// Generation time of the frame that [`Self::next_frame`] will return.
    pub fn peek_gen_time_ms(&self) -> f64 {
        self.gen_time_ms(self.next_seq)
    }

    pub fn next_frame(&mut self) -> XrFrame {
        let seq = self.next_seq;
        self.next_seq += 1;
        let gen = self.gen_time_ms(seq);
        let jitter = sample_trunc_gauss(&self.flow.jitter, &mut self.rng);
        let kbytes = sample_trunc_gauss(&self.flow.frame_size, &mut self.rng);
        let size_bits = (kbytes * 1000.0).round() as u64 * 8;
        let arrival = gen + jitter;
        XrFrame {
            flow_id: self.flow_id,
            seq,
            gen_time_ms: gen,
            arrival_time_ms: arrival,
            size_bits,
            deadline_ms: arrival + self.flow.pdb_ms,
            remaining_bits: size_bits,
            completion_time_ms: None,
        }
    }
}

/// All frames generated in `[0, horizon_ms)`, ordered by arrival time.
pub fn generate_frames<R: Rng>(flow: &XrFlowConfig, horizon_ms: f64, rng: R) -> Vec<XrFrame> {
    let mut src = XrSource::new(flow.clone(), 0, rng);
    let mut out = Vec::new();
    while src.peek_gen_time_ms() < horizon_ms {
        out.push(src.next_frame());
    }
    // Jitter spans less than one frame period, so generation order is arrival order.
    debug_assert!(out.windows(2).all(|w| w[0].arrival_time_ms <= w[1].arrival_time_ms));
    out
}

/// Long-run offered load of a flow.
pub fn offered_load_mbps(flow: &XrFlowConfig) -> f64 {
    flow.frame_size.mean * 1000.0 * 8.0 * flow.fps / 1e6
}

pub fn write_arrival_trace<W: Write>(frames: &[XrFrame], mut w: W) -> io::Result<()> {
    writeln!(w, "flow,seq,gen_time_ms,arrival_time_ms,size_bits")?;
    for f in frames {
        writeln!(w, "{},{},{:.4},{:.4},{}", f.flow_id, f.seq, f.gen_time_ms, f.arrival_time_ms, f.size_bits)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedFrame {
    pub seq: u32,
    pub size_bits: u64,
    /// First bit not yet handed to a transport block.
    pub next_bit: u64,
}

impl QueuedFrame {
    pub fn new(seq: u32, size_bits: u64) -> Self {
        Self { seq, size_bits, next_bit: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.size_bits - self.next_bit
    }
}

/// Bit range `[start_bit, start_bit + len)` of frame `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPiece {
    pub seq: u32,
    pub start_bit: u64,
    pub len: u64,
}

/// Payload handed to one transport block, in transmission order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segment {
    pub pieces: Vec<SegmentPiece>,
    /// Full-buffer payload that belongs to no frame.
    pub anonymous_bits: u64,
}

impl Segment {
    pub fn total_bits(&self) -> u64 {
        self.anonymous_bits + self.pieces.iter().map(|p| p.len).sum::<u64>()
    }

    pub fn is_empty(&self) -> bool {
        self.total_bits() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DlQueue {
    /// Always has data.
    FullBuffer,
    Frames(VecDeque<QueuedFrame>),
}

impl DlQueue {
    pub fn frames() -> Self {
        DlQueue::Frames(VecDeque::new())
    }

    pub fn is_full_buffer(&self) -> bool {
        matches!(self, DlQueue::FullBuffer)
    }

    pub fn push(&mut self, frame: QueuedFrame) {
        match self {
            DlQueue::Frames(q) => q.push_back(frame),
            DlQueue::FullBuffer => panic!("cannot enqueue frames on a full-buffer queue"),
        }
    }

    /// Pending bits; `None` for a full buffer.
    pub fn pending_bits(&self) -> Option<u64> {
        match self {
            DlQueue::FullBuffer => None,
            DlQueue::Frames(q) => Some(q.iter().map(QueuedFrame::remaining).sum()),
        }
    }

    pub fn has_data(&self) -> bool {
        self.pending_bits() != Some(0)
    }

    /// Removes up to `n_bits` from the head of the queue, crossing frame
    /// boundaries in FIFO order.
    pub fn dequeue_bits(&mut self, n_bits: u64) -> Segment {
        match self {
            DlQueue::FullBuffer => Segment { pieces: Vec::new(), anonymous_bits: n_bits },
            DlQueue::Frames(q) => {
                let mut seg = Segment::default();
                let mut left = n_bits;
                while left > 0 {
                    let Some(head) = q.front_mut() else { break };
                    let take = head.remaining().min(left);
                    seg.pieces.push(SegmentPiece { seq: head.seq, start_bit: head.next_bit, len: take });
                    head.next_bit += take;
                    left -= take;
                    if head.remaining() == 0 {
                        q.pop_front();
                    }
                }
                seg
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Subsystem};

    #[test]
    fn jitter_draws_respect_bounds_and_mean() {
        let p = TruncGaussParams::new(0.0, 2.0, -4.0, 4.0);
        let mut rng = substream(1, Subsystem::Traffic, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_trunc_gauss(&p, &mut rng);
            assert!((-4.0..=4.0).contains(&x));
            sum += x;
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn frame_size_mean() {
        let p = TruncGaussParams::new(62.5, 6.25, 31.25, 93.75);
        let mut rng = substream(2, Subsystem::Traffic, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_trunc_gauss(&p, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 62.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn degenerate_bounds_fall_back() {
        // 8 sigma away: rejection would practically never accept.
        let p = TruncGaussParams::new(0.0, 1.0, 8.0, 8.5);
        let mut rng = substream(3, Subsystem::Traffic, 0);
        for _ in 0..100 {
            let x = sample_trunc_gauss(&p, &mut rng);
            assert!((8.0..=8.5).contains(&x));
        }
    }

    #[test]
    fn frame_timing() {
        let flow = XrFlowConfig::sdr_30mbps();
        let frames = generate_frames(&flow, 6000.0, substream(4, Subsystem::Traffic, 0));
        assert_eq!(frames.len(), 360);
        assert_eq!(frames[0].gen_time_ms, 0.0);
        assert!((frames[1].gen_time_ms - 16.6667).abs() < 1e-3);
        assert!((frames[2].gen_time_ms - 33.3333).abs() < 1e-3);
        for f in &frames {
            let j = f.arrival_time_ms - f.gen_time_ms;
            assert!((-4.0..=4.0).contains(&j));
            assert_eq!(f.size_bits % 8, 0);
            assert!(f.size_bits >= 31_250 * 8 && f.size_bits <= 93_750 * 8);
            assert_eq!(f.deadline_ms, f.arrival_time_ms + flow.pdb_ms);
        }
    }

    #[test]
    fn offered_load_of_tabulated_flows() {
        assert!((offered_load_mbps(&XrFlowConfig::sdr_30mbps()) - 30.0).abs() < 1e-9);
        assert!((offered_load_mbps(&XrFlowConfig::sdr_45mbps()) - 45.0).abs() < 1e-9);
        let mut zero = XrFlowConfig::sdr_30mbps();
        zero.frame_size = TruncGaussParams::new(0.0, 1.0, 0.0, 1.0);
        assert_eq!(offered_load_mbps(&zero), 0.0);
    }

    #[test]
    fn measured_load_over_a_minute() {
        for flow in [XrFlowConfig::sdr_30mbps(), XrFlowConfig::sdr_45mbps()] {
            let frames = generate_frames(&flow, 60_000.0, substream(5, Subsystem::Traffic, 0));
            let mbps = frames.iter().map(|f| f.size_bits).sum::<u64>() as f64 / 60.0 / 1e6;
            assert!((mbps / flow.sdr_mbps - 1.0).abs() < 0.02, "{mbps}");
        }
    }

    #[test]
    fn dequeue_single_frame_partial() {
        let mut q = DlQueue::frames();
        q.push(QueuedFrame::new(0, 100));
        let seg = q.dequeue_bits(40);
        assert_eq!(seg.pieces, vec![SegmentPiece { seq: 0, start_bit: 0, len: 40 }]);
        assert_eq!(q.pending_bits(), Some(60));
    }

    #[test]
    fn dequeue_spans_frames() {
        let mut q = DlQueue::frames();
        q.push(QueuedFrame::new(0, 30));
        q.push(QueuedFrame::new(1, 50));
        let seg = q.dequeue_bits(60);
        assert_eq!(
            seg.pieces,
            vec![
                SegmentPiece { seq: 0, start_bit: 0, len: 30 },
                SegmentPiece { seq: 1, start_bit: 0, len: 30 },
            ]
        );
        assert_eq!(q.pending_bits(), Some(20));
        assert!(q.dequeue_bits(1000).total_bits() == 20);
        assert!(q.dequeue_bits(10).is_empty());
    }

    #[test]
    fn full_buffer_never_drains() {
        let mut q = DlQueue::FullBuffer;
        assert_eq!(q.dequeue_bits(1_000_000).total_bits(), 1_000_000);
        assert!(q.has_data());
        assert_eq!(q.pending_bits(), None);
    }
}
