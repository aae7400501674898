//! Per-cell downlink scheduler.
//!
//! Three strict tiers: pending HARQ retransmissions, then first transmissions
//! of XR and eMBB data. The latter two share the remaining RBGs through an
//! interleaved weighted round robin with per-UE credits that persist across
//! slots, so with weights 20:1 XR is served almost strictly first while
//! leftover RBGs still go to eMBB.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::phy::{tb_size_bits, McsEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Xr,
    Embb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    Retx = 1,
    XrNew = 2,
    EmbbNew = 3,
}

impl Tier {
    fn for_class(c: TrafficClass) -> Self {
        match c {
            TrafficClass::Xr => Tier::XrNew,
            TrafficClass::Embb => Tier::EmbbNew,
        }
    }
}

/// PRBs per RBG; the last RBG absorbs the remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbgLayout {
    prbs: Vec<u32>,
}

impl RbgLayout {
    /// 273 PRBs in groups of 16 give 16 RBGs of 16 and a last one of 17.
    pub fn new(n_prb: u32, rbg_size_prb: u32) -> Self {
        let full = n_prb / rbg_size_prb;
        let rem = n_prb % rbg_size_prb;
        let mut prbs = vec![rbg_size_prb; full as usize];
        match (rem, prbs.last_mut()) {
            (0, _) => {}
            (r, Some(last)) if r < rbg_size_prb / 2 => *last += r,
            (r, _) => prbs.push(r),
        }
        Self { prbs }
    }

    pub fn n_rbg(&self) -> usize {
        self.prbs.len()
    }

    pub fn prbs(&self, rbg: u16) -> u32 {
        self.prbs[rbg as usize]
    }

    pub fn total_prbs(&self) -> u32 {
        self.prbs.iter().sum()
    }
}

/// A UE with first-transmission data waiting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewDataCandidate {
    /// Cell-local UE index (also its WRR slot).
    pub ue: u32,
    pub class: TrafficClass,
    /// `None` for a full buffer.
    pub pending_bits: Option<u64>,
    pub mcs: McsEntry,
}

/// A HARQ process whose failed CBGs may be retransmitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetxCandidate {
    pub ue: u32,
    pub process_uid: u64,
    pub mcs: McsEntry,
    pub failed_bits: u64,
    pub eligible_slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantKind {
    New { tb_bits: u64 },
    Retx { process_uid: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub ue: u32,
    pub tier: Tier,
    pub rbgs: Vec<u16>,
    pub n_prb: u32,
    pub mcs: u8,
    pub kind: GrantKind,
}

/// Retransmission that got nothing this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeferredRetx {
    pub process_uid: u64,
    /// RBGs it would have needed from the front of the free list; `None`
    /// when even the whole free list was too small.
    pub required_rbgs: Option<usize>,
    /// Its UE already got a retransmission grant this slot.
    pub ue_busy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchedulingDecision {
    pub slot: u64,
    pub grants: Vec<Grant>,
    pub deferred_retx: Vec<DeferredRetx>,
    /// Free RBGs once tier 1 was served.
    pub free_after_retx: usize,
}

impl SchedulingDecision {
    pub fn granted_prbs(&self) -> u32 {
        self.grants.iter().map(|g| g.n_prb).sum()
    }

    pub fn used_rbgs(&self) -> impl Iterator<Item = u16> + '_ {
        self.grants.iter().flat_map(|g| g.rbgs.iter().copied())
    }

    /// Tier-1 candidates that lower tiers overtook although they would have
    /// fit into the RBGs left after tier 1.
    pub fn tier_violations(&self) -> usize {
        if !self.grants.iter().any(|g| g.tier != Tier::Retx) {
            return 0;
        }
        self.deferred_retx
            .iter()
            .filter(|d| !d.ue_busy && d.required_rbgs.is_some_and(|k| k <= self.free_after_retx))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityEntry {
    pub tier: Tier,
    pub ue: u32,
    pub process_uid: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrrState {
    pub weights: Vec<u32>,
    pub credits: Vec<u32>,
    pub cursor: usize,
}

impl WrrState {
    pub fn new(weights: Vec<u32>) -> Self {
        assert!(weights.iter().all(|&w| w >= 1), "WRR weights must be >= 1");
        Self { credits: weights.clone(), weights, cursor: 0 }
    }

    fn refresh(&mut self) {
        self.credits.copy_from_slice(&self.weights);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellScheduler {
    pub wrr: WrrState,
    retx_rotation: u32,
}

/// Smallest number of RBGs from the front of `free` whose TB covers `bits`
/// on top of `base_prb` already granted.
fn rbgs_needed(free: &[u16], layout: &RbgLayout, base_prb: u32, symbols: u32, mcs: &McsEntry, bits: u64) -> Option<usize> {
    let mut prb = base_prb;
    if tb_size_bits(prb, symbols, mcs) >= bits {
        return Some(0);
    }
    for (k, &r) in free.iter().enumerate() {
        prb += layout.prbs(r);
        if tb_size_bits(prb, symbols, mcs) >= bits {
            return Some(k + 1);
        }
    }
    None
}

impl CellScheduler {
    /// `weights[i]` is the WRR weight of cell-local UE `i`.
    pub fn new(weights: Vec<u32>) -> Self {
        Self { wrr: WrrState::new(weights), retx_rotation: 0 }
    }

    fn n_ues(&self) -> u32 {
        self.wrr.weights.len() as u32
    }

    fn retx_order<'a>(&self, retx: &'a [RetxCandidate]) -> Vec<&'a RetxCandidate> {
        let n = self.n_ues().max(1);
        let rot = self.retx_rotation % n;
        let mut order: Vec<&RetxCandidate> = retx.iter().collect();
        order.sort_by_key(|r| (r.eligible_slot, (r.ue + n - rot) % n, r.process_uid));
        order
    }

    /// Candidates in the order they are considered: tier 1 round robin,
    /// then the WRR walk over backlogged XR and eMBB UEs from the cursor.
    pub fn build_priority_list(&self, retx: &[RetxCandidate], new_data: &[NewDataCandidate]) -> Vec<PriorityEntry> {
        let mut out: Vec<PriorityEntry> = self
            .retx_order(retx)
            .into_iter()
            .map(|r| PriorityEntry { tier: Tier::Retx, ue: r.ue, process_uid: Some(r.process_uid) })
            .collect();
        let n = self.n_ues();
        for step in 0..n {
            let ue = (self.wrr.cursor as u32 + step) % n;
            if let Some(c) = new_data.iter().find(|c| c.ue == ue) {
                out.push(PriorityEntry { tier: Tier::for_class(c.class), ue, process_uid: None });
            }
        }
        out
    }

    /// Grants RBGs for one D/S slot with `data_symbols` PDSCH symbols.
    /// RBGs are handed out in index order, cyclically from `start_rbg`.
    pub fn allocate(
        &mut self,
        slot: u64,
        data_symbols: u32,
        layout: &RbgLayout,
        start_rbg: u16,
        retx: &[RetxCandidate],
        new_data: &[NewDataCandidate],
    ) -> SchedulingDecision {
        assert!(data_symbols > 0, "allocate called on a slot without downlink data");
        let nr = layout.n_rbg() as u16;
        let mut free: Vec<u16> = (0..nr).map(|i| (i + start_rbg) % nr).collect();
        let mut decision = SchedulingDecision { slot, ..Default::default() };
        let mut retx_served: HashSet<u32> = HashSet::new();

        for r in self.retx_order(retx) {
            if retx_served.contains(&r.ue) {
                decision.deferred_retx.push(DeferredRetx { process_uid: r.process_uid, required_rbgs: None, ue_busy: true });
                continue;
            }
            match rbgs_needed(&free, layout, 0, data_symbols, &r.mcs, r.failed_bits) {
                Some(k) if k > 0 => {
                    let rbgs: Vec<u16> = free.drain(..k).collect();
                    let n_prb = rbgs.iter().map(|&x| layout.prbs(x)).sum();
                    decision.grants.push(Grant {
                        ue: r.ue,
                        tier: Tier::Retx,
                        rbgs,
                        n_prb,
                        mcs: r.mcs.index,
                        kind: GrantKind::Retx { process_uid: r.process_uid },
                    });
                    retx_served.insert(r.ue);
                }
                need => decision.deferred_retx.push(DeferredRetx {
                    process_uid: r.process_uid,
                    required_rbgs: need.filter(|&k| k > 0),
                    ue_busy: false,
                }),
            }
        }
        self.retx_rotation = self.retx_rotation.wrapping_add(1);
        decision.free_after_retx = free.len();

        // WRR over first transmissions.
        let n = self.n_ues() as usize;
        let mut cand: Vec<Option<&NewDataCandidate>> = vec![None; n];
        // A UE with a retransmission in this slot may still get a new TB on
        // another HARQ process, which keeps full-buffer cells work-conserving.
        for c in new_data {
            cand[c.ue as usize] = Some(c);
        }
        let mut granted: Vec<Vec<u16>> = vec![Vec::new(); n];
        let mut granted_prb = vec![0u32; n];
        let need_of = |ue: usize, free: &[u16], granted_prb: &[u32]| -> Option<usize> {
            let c = cand[ue]?;
            match c.pending_bits {
                None => Some(usize::MAX),
                Some(bits) => match rbgs_needed(free, layout, granted_prb[ue], data_symbols, &c.mcs, bits) {
                    Some(0) => None,
                    Some(k) => Some(k),
                    None => Some(free.len()),
                },
            }
        };

        while !free.is_empty() && n > 0 {
            let mut pick = None;
            let mut any_active = false;
            for step in 0..n {
                let ue = (self.wrr.cursor + step) % n;
                if let Some(need) = need_of(ue, &free, &granted_prb) {
                    any_active = true;
                    if self.wrr.credits[ue] > 0 {
                        pick = Some((ue, need));
                        break;
                    }
                }
            }
            let Some((ue, need)) = pick else {
                if any_active {
                    self.wrr.refresh();
                    continue;
                }
                break;
            };
            let k = (self.wrr.credits[ue] as usize).min(need).min(free.len());
            for r in free.drain(..k) {
                granted_prb[ue] += layout.prbs(r);
                granted[ue].push(r);
            }
            self.wrr.credits[ue] -= k as u32;
            let done = need_of(ue, &free, &granted_prb).is_none();
            if self.wrr.credits[ue] == 0 || done {
                self.wrr.cursor = (ue + 1) % n;
            } else {
                self.wrr.cursor = ue;
            }
        }

        for ue in 0..n {
            if granted[ue].is_empty() {
                continue;
            }
            let c = cand[ue].expect("granted UE is a candidate");
            let mut rbgs = std::mem::take(&mut granted[ue]);
            rbgs.sort_unstable();
            decision.grants.push(Grant {
                ue: ue as u32,
                tier: Tier::for_class(c.class),
                rbgs,
                n_prb: granted_prb[ue],
                mcs: c.mcs.index,
                kind: GrantKind::New { tb_bits: tb_size_bits(granted_prb[ue], data_symbols, &c.mcs) },
            });
        }
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::McsTable;

    fn layout() -> RbgLayout {
        RbgLayout::new(273, 16)
    }

    fn mcs(i: u8) -> McsEntry {
        *McsTable::new(2.0).get(i)
    }

    fn embb(ue: u32) -> NewDataCandidate {
        NewDataCandidate { ue, class: TrafficClass::Embb, pending_bits: None, mcs: mcs(15) }
    }

    fn xr(ue: u32, bits: Option<u64>) -> NewDataCandidate {
        NewDataCandidate { ue, class: TrafficClass::Xr, pending_bits: bits, mcs: mcs(15) }
    }

    fn rbg_count(d: &SchedulingDecision, ue: u32) -> usize {
        d.grants.iter().filter(|g| g.ue == ue).map(|g| g.rbgs.len()).sum()
    }

    #[test]
    fn rbg_layout_of_100mhz() {
        let l = layout();
        assert_eq!(l.n_rbg(), 17);
        assert_eq!(l.prbs(15), 16);
        assert_eq!(l.prbs(16), 17);
        assert_eq!(l.total_prbs(), 273);
        assert_eq!(RbgLayout::new(40, 16).n_rbg(), 3);
    }

    #[test]
    fn single_embb_takes_everything() {
        let mut s = CellScheduler::new(vec![1]);
        let d = s.allocate(0, 13, &layout(), 0, &[], &[embb(0)]);
        assert_eq!(d.grants.len(), 1);
        assert_eq!(d.grants[0].rbgs.len(), 17);
        assert_eq!(d.granted_prbs(), 273);
    }

    #[test]
    fn nothing_queued_nothing_granted() {
        let mut s = CellScheduler::new(vec![20, 1]);
        let d = s.allocate(0, 13, &layout(), 0, &[], &[]);
        assert!(d.grants.is_empty());
        assert_eq!(d.granted_prbs(), 0);
    }

    #[test]
    fn fig2_weights_on_six_rbgs() {
        let six = RbgLayout::new(96, 16);
        let mut s = CellScheduler::new(vec![5, 1]);
        let d = s.allocate(0, 13, &six, 0, &[], &[xr(0, None), embb(1)]);
        assert_eq!(rbg_count(&d, 0), 5);
        assert_eq!(rbg_count(&d, 1), 1);
    }

    #[test]
    fn xr_frame_needing_three_rbgs() {
        let m = mcs(15);
        // Exactly fills three 16-PRB RBGs.
        let bits = tb_size_bits(48, 13, &m);
        let mut s = CellScheduler::new(vec![20, 1]);
        let d = s.allocate(0, 13, &layout(), 0, &[], &[xr(0, Some(bits)), embb(1)]);
        assert_eq!(rbg_count(&d, 0), 3);
        assert_eq!(rbg_count(&d, 1), 14);
        let g = d.grants.iter().find(|g| g.ue == 0).unwrap();
        assert_eq!(g.rbgs, vec![0, 1, 2]);
        assert!(matches!(g.kind, GrantKind::New { tb_bits } if tb_bits >= bits));
    }

    #[test]
    fn empty_xr_leaves_all_to_embb() {
        let mut s = CellScheduler::new(vec![20, 20, 1]);
        let d = s.allocate(0, 13, &layout(), 0, &[], &[embb(2)]);
        assert_eq!(rbg_count(&d, 2), 17);
    }

    #[test]
    fn retransmission_goes_first() {
        let mut s = CellScheduler::new(vec![20, 1]);
        let r = RetxCandidate { ue: 0, process_uid: 9, mcs: mcs(15), failed_bits: 10_000, eligible_slot: 0 };
        let list = s.build_priority_list(&[r], &[xr(0, Some(1)), embb(1)]);
        assert_eq!(list[0], PriorityEntry { tier: Tier::Retx, ue: 0, process_uid: Some(9) });
        assert_eq!(list[1].tier, Tier::XrNew);
        assert_eq!(list[2].tier, Tier::EmbbNew);
        let d = s.allocate(0, 13, &layout(), 0, &[r], &[embb(1)]);
        assert_eq!(d.grants[0].tier, Tier::Retx);
        assert_eq!(d.grants[0].rbgs[0], 0);
        assert_eq!(rbg_count(&d, 1), 17 - d.grants[0].rbgs.len());
        assert_eq!(d.tier_violations(), 0);
    }

    #[test]
    fn oversized_retx_does_not_block_lower_tiers() {
        let mut s = CellScheduler::new(vec![20, 1]);
        let big = RetxCandidate { ue: 0, process_uid: 1, mcs: mcs(0), failed_bits: 1_000_000, eligible_slot: 0 };
        let d = s.allocate(0, 13, &layout(), 0, &[big], &[embb(1)]);
        assert_eq!(d.deferred_retx.len(), 1);
        assert_eq!(d.deferred_retx[0].required_rbgs, None);
        assert_eq!(rbg_count(&d, 1), 17);
        assert_eq!(d.tier_violations(), 0);
    }

    #[test]
    fn wrr_share_converges_to_weights() {
        let mut s = CellScheduler::new(vec![20, 1]);
        let (mut a, mut b) = (0usize, 0usize);
        for slot in 0..10_000 {
            let d = s.allocate(slot, 13, &layout(), 0, &[], &[xr(0, None), embb(1)]);
            a += rbg_count(&d, 0);
            b += rbg_count(&d, 1);
            assert_eq!(a + b, 17 * (slot as usize + 1));
        }
        let ratio = a as f64 / b as f64;
        assert!((ratio / 20.0 - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn one_retx_per_ue_per_slot() {
        let mut s = CellScheduler::new(vec![20, 1]);
        let r1 = RetxCandidate { ue: 0, process_uid: 1, mcs: mcs(15), failed_bits: 1000, eligible_slot: 0 };
        let r2 = RetxCandidate { process_uid: 2, ..r1 };
        let d = s.allocate(0, 13, &layout(), 0, &[r1, r2], &[xr(0, Some(5000)), embb(1)]);
        assert_eq!(d.grants.iter().filter(|g| g.ue == 0 && g.tier == Tier::Retx).count(), 1);
        assert!(d.deferred_retx[0].ue_busy);
        assert_eq!(d.tier_violations(), 0);
    }

    #[test]
    fn rbgs_are_exclusive() {
        let mut s = CellScheduler::new(vec![20, 20, 20, 1]);
        for slot in 0..200 {
            let r = RetxCandidate { ue: (slot % 3) as u32, process_uid: slot, mcs: mcs(5), failed_bits: 3000, eligible_slot: 0 };
            let d = s.allocate(slot, 9, &layout(), 0, &[r], &[xr(0, Some(40_000)), xr(1, Some(300_000)), xr(2, None), embb(3)]);
            let mut seen = HashSet::new();
            for r in d.used_rbgs() {
                assert!(seen.insert(r));
            }
            assert_eq!(seen.len(), 17);
        }
    }
}
