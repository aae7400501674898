//! Link abstraction: effective SINR, CQI, MCS selection with OLLA, TB sizing
//! and the BLEP curve used to draw CBG decoding outcomes.

use std::io::{self, Write};

use crate::mac::frame::TddFrame;

/// 28-entry 256QAM MCS table: (modulation order, code rate x 1024).
const MCS_256QAM: [(u8, f64); 28] = [
    (2, 120.0),
    (2, 193.0),
    (2, 308.0),
    (2, 449.0),
    (2, 602.0),
    (4, 378.0),
    (4, 434.0),
    (4, 490.0),
    (4, 553.0),
    (4, 616.0),
    (4, 658.0),
    (6, 466.0),
    (6, 517.0),
    (6, 567.0),
    (6, 616.0),
    (6, 666.0),
    (6, 719.0),
    (6, 772.0),
    (6, 822.0),
    (6, 873.0),
    (8, 682.5),
    (8, 711.0),
    (8, 754.0),
    (8, 797.0),
    (8, 841.0),
    (8, 885.0),
    (8, 916.5),
    (8, 948.0),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    pub index: u8,
    pub modulation_order: u8,
    pub code_rate: f64,
    /// Spectral efficiency in bits per resource element, rounded to 4 decimals.
    pub se_bits_per_re: f64,
    /// SINR at which a first transmission sees 10% BLEP.
    pub snr_10pct_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    /// Builds the table with 10%-BLEP thresholds placed `gap_db` above the
    /// Shannon bound of each entry's spectral efficiency.
    pub fn new(gap_db: f64) -> Self {
        let entries = MCS_256QAM
            .iter()
            .enumerate()
            .map(|(i, &(qm, r1024))| {
                let rate = r1024 / 1024.0;
                let se = (qm as f64 * rate * 1e4).round() / 1e4;
                let snr_10pct_db = lin_to_db(2f64.powf(se) - 1.0) + gap_db;
                McsEntry { index: i as u8, modulation_order: qm, code_rate: rate, se_bits_per_re: se, snr_10pct_db }
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, index: u8) -> &McsEntry {
        &self.entries[index as usize]
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn max_index(&self) -> u8 {
        (self.entries.len() - 1) as u8
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "index,modulation_order,code_rate,se_bits_per_re,snr_10pct_db")?;
        for e in &self.entries {
            writeln!(w, "{},{},{:.4},{:.4},{:.3}", e.index, e.modulation_order, e.code_rate, e.se_bits_per_re, e.snr_10pct_db)?;
        }
        Ok(())
    }
}

#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Capacity-domain effective SINR of a set of per-RBG SINRs (dB in, dB out).
pub fn effective_sinr_db(per_rbg_sinr_db: &[f64]) -> f64 {
    assert!(!per_rbg_sinr_db.is_empty(), "effective SINR of an empty allocation");
    let lin: Vec<f64> = per_rbg_sinr_db.iter().map(|&x| db_to_lin(x)).collect();
    lin_to_db(effective_sinr_lin(&lin))
}

/// Same as [`effective_sinr_db`] on linear values.
pub fn effective_sinr_lin(per_rbg_sinr: &[f64]) -> f64 {
    let mean_cap = per_rbg_sinr.iter().map(|&g| (1.0 + g).log2()).sum::<f64>() / per_rbg_sinr.len() as f64;
    2f64.powf(mean_cap) - 1.0
}

/// Chase combining: attempts add up in the linear SINR domain.
pub fn combine_chase(sinr_list_db: &[f64]) -> f64 {
    assert!(!sinr_list_db.is_empty(), "nothing to combine");
    lin_to_db(sinr_list_db.iter().map(|&x| db_to_lin(x)).sum())
}

/// Block error probability of a CBG decoded at `effective_sinr_db` (already
/// Chase-combined) with `mcs`. Anchored so that the entry's 10% threshold
/// maps to exactly 0.10.
pub fn blep(effective_sinr_db: f64, mcs: &McsEntry, _n_prior_tx: u32, slope: f64) -> f64 {
    let mid = mcs.snr_10pct_db - 9f64.ln() / slope;
    1.0 / (1.0 + (slope * (effective_sinr_db - mid)).exp())
}

/// Transport block size in bits for `n_prb` PRBs over `n_data_symbols`.
pub fn tb_size_bits(n_prb: u32, n_data_symbols: u32, mcs: &McsEntry) -> u64 {
    ((n_prb as u64 * 12 * n_data_symbols as u64) as f64 * mcs.se_bits_per_re).floor() as u64
}

/// [`tb_size_bits`] for `n_rbg` full-size RBGs.
pub fn tb_size_bits_rbg(n_rbg: u32, rbg_size_prb: u32, n_data_symbols: u32, mcs: &McsEntry) -> u64 {
    tb_size_bits(n_rbg * rbg_size_prb, n_data_symbols, mcs)
}

/// Wideband CQI report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqiReport {
    pub ue_id: u32,
    pub slot_measured: u64,
    pub slot_available: u64,
    pub wideband_sinr_db: f64,
}

/// Builds the report measured in `slot`. The value is floored to the
/// quantization step; it reaches the gNB over the next uplink opportunity.
pub fn make_cqi(ue_id: u32, slot: u64, measured_sinr_db: f64, quant_db: f64, frame: &TddFrame) -> CqiReport {
    let q = (measured_sinr_db / quant_db).floor() * quant_db;
    CqiReport {
        ue_id,
        slot_measured: slot,
        slot_available: frame.feedback_timing(slot).eligible_slot,
        wideband_sinr_db: q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OllaState {
    pub offset_db: f64,
    pub step_down_db: f64,
    pub step_up_db: f64,
    pub limit_db: f64,
}

impl OllaState {
    /// `step_up / step_down = (1 - target) / target`, so the long-run
    /// first-transmission CBG error rate settles at `target`.
    pub fn new(step_down_db: f64, target_error_rate: f64, limit_db: f64) -> Self {
        let step_up_db = step_down_db * (1.0 - target_error_rate) / target_error_rate;
        Self { offset_db: 0.0, step_down_db, step_up_db, limit_db }
    }

    /// One step per CBG of a first transmission; `true` means decoded.
    pub fn update(&mut self, cbg_results: &[bool]) {
        for &ok in cbg_results {
            if ok {
                self.offset_db += self.step_down_db;
            } else {
                self.offset_db -= self.step_up_db;
            }
            self.offset_db = self.offset_db.clamp(-self.limit_db, self.limit_db);
        }
    }
}

/// Highest MCS whose 10% threshold is at or below the OLLA-corrected CQI.
pub fn select_mcs<'a>(cqi_sinr_db: f64, olla: &OllaState, table: &'a McsTable) -> &'a McsEntry {
    let target = cqi_sinr_db + olla.offset_db;
    table.entries().iter().rev().find(|e| e.snr_10pct_db <= target + 1e-12).unwrap_or(&table.entries()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> McsTable {
        McsTable::new(2.0)
    }

    #[test]
    fn table_shape() {
        let t = table();
        assert_eq!(t.entries().len(), 28);
        assert_eq!(t.get(0).se_bits_per_re, 0.2344);
        assert_eq!(t.get(27).se_bits_per_re, 7.4063);
        assert!(t.entries().windows(2).all(|w| w[0].se_bits_per_re < w[1].se_bits_per_re));
        assert!(t.entries().windows(2).all(|w| w[0].snr_10pct_db < w[1].snr_10pct_db));
        assert!(t.entries().iter().all(|e| [2, 4, 6, 8].contains(&e.modulation_order)));
        // Shannon gap placement: se = log2(1 + snr/gap).
        for e in t.entries() {
            let se = (1.0 + db_to_lin(e.snr_10pct_db - 2.0)).log2();
            assert!((se - e.se_bits_per_re).abs() < 1e-9);
        }
    }

    #[test]
    fn effective_sinr_examples() {
        assert!((effective_sinr_db(&[7.0, 7.0, 7.0]) - 7.0).abs() < 1e-9);
        assert!(effective_sinr_db(&[0.0, 0.0]).abs() < 1e-9);
        // Independent evaluation: 2^((log2 11 + log2 1.1)/2) - 1 = sqrt(12.1) - 1.
        let expected = 10.0 * (12.1f64.sqrt() - 1.0).log10();
        let got = effective_sinr_db(&[10.0, -10.0]);
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 3.94).abs() < 0.01);
    }

    #[test]
    fn chase_examples() {
        assert!((combine_chase(&[0.0, 0.0]) - 3.0103).abs() < 1e-4);
        assert!((combine_chase(&[5.5]) - 5.5).abs() < 1e-12);
        assert!((combine_chase(&[10.0, 10.0, 10.0]) - 14.7712).abs() < 1e-4);
    }

    #[test]
    fn blep_anchor_and_limits() {
        let t = table();
        for e in t.entries() {
            assert!((blep(e.snr_10pct_db, e, 0, 2.0) - 0.10).abs() < 1e-12);
            assert!((blep(e.snr_10pct_db, e, 2, 0.7) - 0.10).abs() < 1e-12);
        }
        let e = t.get(10);
        assert!(blep(200.0, e, 0, 2.0) < 1e-12);
        assert!(blep(-200.0, e, 0, 2.0) > 1.0 - 1e-12);
    }

    #[test]
    fn tb_sizes() {
        let t = table();
        assert_eq!(tb_size_bits_rbg(1, 16, 13, t.get(27)), 18486);
        let zero = McsEntry { se_bits_per_re: 0.0, ..*t.get(0) };
        assert_eq!(tb_size_bits(16, 13, &zero), 0);
        let per_cycle = tb_size_bits(273, 48, t.get(27));
        let mbps = per_cycle as f64 / 2.5e-3 / 1e6;
        assert!((mbps - 466.0).abs() < 1.0, "{mbps}");
    }

    #[test]
    fn mcs_selection_clamps_and_boundary() {
        let t = table();
        let olla = OllaState::new(0.1, 0.25, 10.0);
        assert_eq!(select_mcs(-30.0, &olla, &t).index, 0);
        assert_eq!(select_mcs(40.0, &olla, &t).index, 27);
        let k = 12;
        let thr = t.get(k).snr_10pct_db;
        let mut o = olla;
        o.offset_db = 1.0;
        assert_eq!(select_mcs(thr - 1.0, &o, &t).index, k);
        assert_eq!(select_mcs(thr - 1.0 - 1e-6, &o, &t).index, k - 1);
    }

    #[test]
    fn olla_steps() {
        let mut o = OllaState::new(0.1, 0.25, 10.0);
        assert!((o.step_up_db - 0.3).abs() < 1e-12);
        o.update(&[true; 8]);
        assert!((o.offset_db - 0.8).abs() < 1e-9);
        let mut o = OllaState::new(0.1, 0.25, 10.0);
        o.update(&[false, true, true, false, true, true, true, true]);
        assert!(o.offset_db.abs() < 1e-9);
        let mut o = OllaState::new(0.1, 0.25, 10.0);
        o.offset_db = 10.0;
        o.update(&[true; 8]);
        assert_eq!(o.offset_db, 10.0);
    }

    #[test]
    fn cqi_quantization_and_delay() {
        let frame = TddFrame::new("DDDSU", 14, 1, 10, 6.0, 2.75);
        let r = make_cqi(3, 0, 7.4, 1.0, &frame);
        assert_eq!(r.wideband_sinr_db, 7.0);
        assert_eq!(r.slot_available, 5);
        assert!(r.slot_available > 4);
        assert_eq!(make_cqi(3, 0, -0.2, 1.0, &frame).wideband_sinr_db, -1.0);
    }

    proptest! {
        #[test]
        fn effective_sinr_within_input_range(v in prop::collection::vec(-20.0f64..40.0, 1..20)) {
            let e = effective_sinr_db(&v);
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
        }

        #[test]
        fn chase_never_loses(v in prop::collection::vec(-20.0f64..40.0, 1..5)) {
            let c = combine_chase(&v);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= hi - 1e-9);
        }

        #[test]
        fn blep_strictly_decreasing(a in -20.0f64..30.0, d in 0.01f64..5.0, m in 0u8..28) {
            let t = McsTable::new(2.0);
            let e = t.get(m);
            prop_assert!(blep(a + d, e, 0, 2.0) < blep(a, e, 0, 2.0) || blep(a, e, 0, 2.0) < 1e-300 || blep(a + d, e, 0, 2.0) > 1.0 - 1e-12);
        }

        #[test]
        fn mcs_monotone_in_cqi(a in -30.0f64..40.0, d in 0.0f64..10.0, off in -10.0f64..10.0) {
            let t = McsTable::new(2.0);
            let mut o = OllaState::new(0.1, 0.25, 10.0);
            o.offset_db = off;
            prop_assert!(select_mcs(a + d, &o, &t).index >= select_mcs(a, &o, &t).index);
        }
    }
}
