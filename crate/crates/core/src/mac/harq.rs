//! CBG-based asynchronous HARQ with Chase combining.

use thiserror::Error;

use crate::traffic::{Segment, SegmentPiece};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbgStatus {
    /// Sent, outcome not yet known to the gNB.
    Pending,
    Acked,
    /// Failed and waiting for a retransmission.
    Failed,
    /// Failed on the last allowed transmission; payload discarded.
    Lost,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarqError {
    #[error("feedback carries {got} CBG outcomes, last transmission had {expected}")]
    OutcomeArity { expected: usize, got: usize },
}

/// What the scheduler has to do after a feedback report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedbackEvent {
    /// Every CBG decoded; the process can be released.
    Completed,
    /// These CBGs go back into the retransmission tier.
    Retransmit { failed: Vec<usize>, eligible_slot: u64 },
    /// Retransmissions exhausted; these CBGs are dropped.
    Exhausted { lost: Vec<usize> },
}

/// Number of CBGs for a TB of `tb_bits`.
pub fn cbg_count(tb_bits: u64, n_cbg_max: u32, cbg_max_bits: u32) -> usize {
    (tb_bits.div_ceil(cbg_max_bits as u64)).clamp(1, n_cbg_max as u64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    /// Unique within a run; used by traces.
    pub uid: u64,
    pub process_id: u8,
    pub ue_id: u32,
    pub payload: Segment,
    pub mcs: u8,
    pub tb_bits: u64,
    pub cbg_bits: Vec<u64>,
    pub status: Vec<CbgStatus>,
    pub acc_sinr_lin: Vec<f64>,
    pub tx_count: u32,
    pub max_retx: u32,
    pub next_eligible_slot: u64,
    last_tx_cbgs: Vec<usize>,
}

impl HarqProcess {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        uid: u64,
        process_id: u8,
        ue_id: u32,
        payload: Segment,
        mcs: u8,
        tb_bits: u64,
        n_cbg_max: u32,
        cbg_max_bits: u32,
        max_retx: u32,
    ) -> Self {
        let n = cbg_count(tb_bits, n_cbg_max, cbg_max_bits);
        let base = tb_bits / n as u64;
        let extra = (tb_bits % n as u64) as usize;
        let cbg_bits = (0..n).map(|i| base + u64::from(i < extra)).collect();
        Self {
            uid,
            process_id,
            ue_id,
            payload,
            mcs,
            tb_bits,
            cbg_bits,
            status: vec![CbgStatus::Pending; n],
            acc_sinr_lin: vec![0.0; n],
            tx_count: 0,
            max_retx,
            next_eligible_slot: 0,
            last_tx_cbgs: Vec::new(),
        }
    }

    pub fn n_cbg(&self) -> usize {
        self.cbg_bits.len()
    }

    pub fn failed_cbgs(&self) -> Vec<usize> {
        (0..self.n_cbg()).filter(|&i| self.status[i] == CbgStatus::Failed).collect()
    }

    pub fn failed_bits(&self) -> u64 {
        self.failed_cbgs().iter().map(|&i| self.cbg_bits[i]).sum()
    }

    pub fn awaits_retx(&self) -> bool {
        self.status.contains(&CbgStatus::Failed)
    }

    pub fn last_tx_cbgs(&self) -> &[usize] {
        &self.last_tx_cbgs
    }

    /// CBGs the next transmission must carry: all of them first, then only
    /// the failed ones.
    pub fn cbgs_for_next_tx(&self) -> Vec<usize> {
        if self.tx_count == 0 {
            (0..self.n_cbg()).collect()
        } else {
            self.failed_cbgs()
        }
    }

    /// Registers a (re)transmission of `cbgs` received at `sinr_lin` and
    /// returns the Chase-combined SINR of each, in the order given.
    pub fn transmit(&mut self, cbgs: &[usize], sinr_lin: f64) -> Vec<f64> {
        assert!(self.tx_count <= self.max_retx, "process {} exceeded its transmissions", self.uid);
        self.tx_count += 1;
        self.last_tx_cbgs = cbgs.to_vec();
        cbgs.iter()
            .map(|&i| {
                debug_assert!(self.status[i] != CbgStatus::Acked, "retransmitting an acked CBG");
                self.status[i] = CbgStatus::Pending;
                self.acc_sinr_lin[i] += sinr_lin;
                self.acc_sinr_lin[i]
            })
            .collect()
    }

    /// Applies per-CBG outcomes (`true` = decoded) of the latest
    /// transmission. Failed CBGs become eligible again at `eligible_slot`
    /// while retransmissions remain, otherwise they are lost.
    pub fn process_feedback(&mut self, outcome: &[bool], eligible_slot: u64) -> Result<FeedbackEvent, HarqError> {
        if outcome.len() != self.last_tx_cbgs.len() {
            return Err(HarqError::OutcomeArity { expected: self.last_tx_cbgs.len(), got: outcome.len() });
        }
        let can_retx = self.tx_count <= self.max_retx;
        let mut failed = Vec::new();
        for (&i, &ok) in self.last_tx_cbgs.iter().zip(outcome) {
            self.status[i] = if ok {
                CbgStatus::Acked
            } else if can_retx {
                failed.push(i);
                CbgStatus::Failed
            } else {
                failed.push(i);
                CbgStatus::Lost
            };
        }
        self.next_eligible_slot = eligible_slot;
        Ok(if failed.is_empty() {
            if self.status.contains(&CbgStatus::Lost) {
                FeedbackEvent::Exhausted { lost: Vec::new() }
            } else {
                FeedbackEvent::Completed
            }
        } else if can_retx {
            FeedbackEvent::Retransmit { failed, eligible_slot }
        } else {
            FeedbackEvent::Exhausted { lost: failed }
        })
    }

    pub fn cbg_start_bit(&self, cbg: usize) -> u64 {
        self.cbg_bits[..cbg].iter().sum()
    }

    /// Payload carried by one CBG: frame pieces plus anonymous bits.
    /// Bits beyond the payload are padding.
    pub fn cbg_payload(&self, cbg: usize) -> (Vec<SegmentPiece>, u64) {
        let lo = self.cbg_start_bit(cbg);
        let hi = lo + self.cbg_bits[cbg];
        let mut pieces = Vec::new();
        let mut at = 0u64;
        for p in &self.payload.pieces {
            let (s, e) = (at, at + p.len);
            let (a, b) = (s.max(lo), e.min(hi));
            if a < b {
                pieces.push(SegmentPiece { seq: p.seq, start_bit: p.start_bit + (a - s), len: b - a });
            }
            at = e;
        }
        let (s, e) = (at, at + self.payload.anonymous_bits);
        let anon = e.min(hi).saturating_sub(s.max(lo));
        (pieces, anon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn process(tb_bits: u64) -> HarqProcess {
        HarqProcess::new(1, 0, 7, Segment { pieces: vec![], anonymous_bits: tb_bits }, 10, tb_bits, 8, 8448, 3)
    }

    #[test]
    fn cbg_split() {
        assert_eq!(cbg_count(100, 8, 8448), 1);
        assert_eq!(cbg_count(8449, 8, 8448), 2);
        assert_eq!(cbg_count(1_000_000, 8, 8448), 8);
        let p = process(100_003);
        assert_eq!(p.n_cbg(), 8);
        assert_eq!(p.cbg_bits.iter().sum::<u64>(), 100_003);
        assert!(p.cbg_bits.iter().max().unwrap() - p.cbg_bits.iter().min().unwrap() <= 1);
    }

    #[test]
    fn all_acked_completes() {
        let mut p = process(80_000);
        let cbgs = p.cbgs_for_next_tx();
        p.transmit(&cbgs, 10.0);
        assert_eq!(p.process_feedback(&[true; 8], 5).unwrap(), FeedbackEvent::Completed);
        assert!(p.status.iter().all(|&s| s == CbgStatus::Acked));
    }

    #[test]
    fn only_failed_cbgs_are_resent() {
        let mut p = process(80_000);
        let cbgs = p.cbgs_for_next_tx();
        p.transmit(&cbgs, 2.0);
        let out = [true, false, true, true, true, true, false, true];
        assert_eq!(p.process_feedback(&out, 5).unwrap(), FeedbackEvent::Retransmit { failed: vec![1, 6], eligible_slot: 5 });
        assert_eq!(p.cbgs_for_next_tx(), vec![1, 6]);
        assert_eq!(p.failed_bits(), p.cbg_bits[1] + p.cbg_bits[6]);
        let comb = p.transmit(&[1, 6], 3.0);
        assert_eq!(comb, vec![5.0, 5.0]);
        assert_eq!(p.acc_sinr_lin[0], 2.0);
    }

    #[test]
    fn fourth_failure_discards() {
        let mut p = process(8_000);
        for tx in 0..4 {
            let cbgs = p.cbgs_for_next_tx();
            p.transmit(&cbgs, 0.1);
            let ev = p.process_feedback(&[false], 5).unwrap();
            if tx < 3 {
                assert!(matches!(ev, FeedbackEvent::Retransmit { .. }));
            } else {
                assert_eq!(ev, FeedbackEvent::Exhausted { lost: vec![0] });
            }
        }
        assert_eq!(p.tx_count, 4);
        assert_eq!(p.status, vec![CbgStatus::Lost]);
    }

    #[test]
    fn arity_mismatch() {
        let mut p = process(80_000);
        let cbgs = p.cbgs_for_next_tx();
        p.transmit(&cbgs, 1.0);
        assert_eq!(p.process_feedback(&[true; 3], 5), Err(HarqError::OutcomeArity { expected: 8, got: 3 }));
    }

    #[test]
    fn cbg_payload_mapping() {
        let payload = Segment {
            pieces: vec![
                SegmentPiece { seq: 4, start_bit: 100, len: 30 },
                SegmentPiece { seq: 5, start_bit: 0, len: 50 },
            ],
            anonymous_bits: 0,
        };
        // 100-bit TB in 2 CBGs of 50: padding in the tail of the second.
        let p = HarqProcess::new(1, 0, 0, payload, 3, 100, 2, 50, 3);
        let (a, _) = p.cbg_payload(0);
        assert_eq!(a, vec![SegmentPiece { seq: 4, start_bit: 100, len: 30 }, SegmentPiece { seq: 5, start_bit: 0, len: 20 }]);
        let (b, anon) = p.cbg_payload(1);
        assert_eq!(b, vec![SegmentPiece { seq: 5, start_bit: 20, len: 30 }]);
        assert_eq!(anon, 0);
    }
}
