//! TDD frame structure and feedback timing.

use crate::config::ScenarioConfig;

/// Symbol within an uplink slot where the short PUCCH carrying HARQ-ACK and
/// CSI starts. The PUCCH lasts one symbol.
pub const PUCCH_START_SYMBOL: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Downlink,
    Special,
    Uplink,
}

impl SlotKind {
    pub fn carries_dl_data(self) -> bool {
        !matches!(self, SlotKind::Uplink)
    }

    pub fn letter(self) -> char {
        match self {
            SlotKind::Downlink => 'D',
            SlotKind::Special => 'S',
            SlotKind::Uplink => 'U',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotFormat {
    pub kind: SlotKind,
    /// Downlink data symbols after the PDCCH.
    pub data_symbols: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackTiming {
    /// Uplink slot carrying the report.
    pub ack_slot: u64,
    /// First downlink slot in which the gNB can act on it.
    pub eligible_slot: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TddFrame {
    pattern: Vec<SlotKind>,
    symbols_per_slot: u32,
    pdcch_symbols: u32,
    special_dl_symbols: u32,
    ue_rx_proc_symbols: f64,
    gnb_tx_proc_symbols: f64,
}

impl TddFrame {
    pub fn new(
        pattern: &str,
        symbols_per_slot: u32,
        pdcch_symbols: u32,
        special_dl_symbols: u32,
        ue_rx_proc_symbols: f64,
        gnb_tx_proc_symbols: f64,
    ) -> Self {
        let pattern: Vec<SlotKind> = pattern
            .chars()
            .map(|c| match c {
                'D' => SlotKind::Downlink,
                'S' => SlotKind::Special,
                'U' => SlotKind::Uplink,
                other => panic!("invalid slot letter {other:?}"),
            })
            .collect();
        assert!(pattern.contains(&SlotKind::Uplink), "pattern needs an uplink slot");
        Self { pattern, symbols_per_slot, pdcch_symbols, special_dl_symbols, ue_rx_proc_symbols, gnb_tx_proc_symbols }
    }

    pub fn from_config(c: &ScenarioConfig) -> Self {
        Self::new(
            &c.tdd_pattern,
            c.symbols_per_slot,
            c.pdcch_symbols,
            c.special_slot_dl_symbols,
            c.ue_rx_proc_symbols,
            c.gnb_tx_proc_symbols,
        )
    }

    pub fn period(&self) -> u64 {
        self.pattern.len() as u64
    }

    pub fn symbols_per_slot(&self) -> u32 {
        self.symbols_per_slot
    }

    pub fn kind(&self, slot: u64) -> SlotKind {
        self.pattern[(slot % self.period()) as usize]
    }

    pub fn slot_format(&self, slot: u64) -> SlotFormat {
        let kind = self.kind(slot);
        let data_symbols = match kind {
            SlotKind::Downlink => self.symbols_per_slot - self.pdcch_symbols,
            SlotKind::Special => self.special_dl_symbols - self.pdcch_symbols,
            SlotKind::Uplink => 0,
        };
        SlotFormat { kind, data_symbols }
    }

    /// Schedulable data symbols in one pattern period.
    pub fn data_symbols_per_period(&self) -> u32 {
        (0..self.period()).map(|s| self.slot_format(s).data_symbols).sum()
    }

    /// Absolute symbol time at which the downlink part of `slot` ends.
    pub fn dl_end_symbol(&self, slot: u64) -> f64 {
        let start = (slot * self.symbols_per_slot as u64) as f64;
        match self.kind(slot) {
            SlotKind::Downlink => start + self.symbols_per_slot as f64,
            SlotKind::Special => start + self.special_dl_symbols as f64,
            SlotKind::Uplink => start,
        }
    }

    /// Symbol time at which the UE has decoded a transmission sent in `slot`.
    pub fn decode_done_symbol(&self, slot: u64) -> f64 {
        self.dl_end_symbol(slot) + self.ue_rx_proc_symbols
    }

    /// When the gNB learns the outcome of a transmission (or a CSI
    /// measurement) made in `tx_slot`.
    ///
    /// The UE reports on the first uplink PUCCH occasion starting after it
    /// finished decoding; the gNB then needs its own processing time and can
    /// act from the next downlink-capable slot boundary.
    pub fn feedback_timing(&self, tx_slot: u64) -> FeedbackTiming {
        let sps = self.symbols_per_slot as f64;
        let ready = self.decode_done_symbol(tx_slot);
        let mut u = tx_slot + 1;
        loop {
            if self.kind(u) == SlotKind::Uplink && u as f64 * sps + PUCCH_START_SYMBOL >= ready {
                break;
            }
            u += 1;
        }
        let gnb_ready = u as f64 * sps + PUCCH_START_SYMBOL + 1.0 + self.gnb_tx_proc_symbols;
        let mut s = u + 1;
        while !(self.kind(s).carries_dl_data() && s as f64 * sps >= gnb_ready) {
            s += 1;
        }
        FeedbackTiming { ack_slot: u, eligible_slot: s }
    }

    pub fn feedback_delay_slots(&self, tx_slot: u64) -> u64 {
        self.feedback_timing(tx_slot).eligible_slot - tx_slot
    }

    /// First slot in which data arriving at `time_symbols` can be sent,
    /// allowing for gNB transmit processing.
    pub fn first_tx_slot_after(&self, time_symbols: f64) -> u64 {
        let t = time_symbols + self.gnb_tx_proc_symbols;
        (t / self.symbols_per_slot as f64).ceil().max(0.0) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> TddFrame {
        TddFrame::new("DDDSU", 14, 1, 10, 6.0, 2.75)
    }

    #[test]
    fn slot_formats() {
        let f = frame();
        assert_eq!(f.slot_format(0), SlotFormat { kind: SlotKind::Downlink, data_symbols: 13 });
        assert_eq!(f.slot_format(3), SlotFormat { kind: SlotKind::Special, data_symbols: 9 });
        assert_eq!(f.slot_format(9), SlotFormat { kind: SlotKind::Uplink, data_symbols: 0 });
        assert_eq!(f.data_symbols_per_period(), 48);
    }

    #[test]
    fn feedback_walks() {
        let f = frame();
        for tx in [0, 1, 2, 3] {
            assert_eq!(f.feedback_timing(tx), FeedbackTiming { ack_slot: 4, eligible_slot: 5 }, "tx {tx}");
        }
        assert_eq!(f.feedback_timing(7), FeedbackTiming { ack_slot: 9, eligible_slot: 10 });
        assert_eq!(f.feedback_delay_slots(0), 5);
        assert_eq!(f.feedback_delay_slots(3), 2);
    }

    #[test]
    fn long_decode_pushes_to_next_uplink() {
        // 15 symbols of UE processing do not fit before the PUCCH of slot 4.
        let f = TddFrame::new("DDDSU", 14, 1, 10, 15.0, 2.75);
        assert_eq!(f.feedback_timing(3).ack_slot, 9);
        assert_eq!(f.feedback_timing(3).eligible_slot, 10);
    }

    #[test]
    fn arrival_processing() {
        let f = frame();
        assert_eq!(f.first_tx_slot_after(0.0), 1);
        assert_eq!(f.first_tx_slot_after(11.25), 1);
        assert_eq!(f.first_tx_slot_after(11.3), 2);
    }
}
