//! Slot-by-slot simulation loop.
//!
//! Every downlink-capable slot runs in two phases: all cells schedule from
//! their own state, then every grant is received against the interference
//! pattern of that slot. Feedback (HARQ-ACK, CQI, OLLA updates) reaches the
//! gNB at the slot given by the TDD feedback timing.
//!
//! The simulated span is `warmup + measurement + drain`. KPIs cover the
//! measurement window; frames generated inside it are followed to completion
//! through the drain tail. Frames are never dropped on deadline, so a single
//! run serves every PDB.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, XrFlowConfig};
use crate::deployment::{generate_layout, ActivityMap, Channel, LayoutError};
use crate::kpi::{frame_latency_ms, FrameRecord, PointSummary, UeStats};
use crate::mac::{
    CbgStatus, CellScheduler, FeedbackEvent, GrantKind, HarqProcess, NewDataCandidate, RbgLayout, RetxCandidate,
    SchedulingDecision, SlotKind, TddFrame, Tier, TrafficClass,
};
use crate::phy::{blep, effective_sinr_lin, lin_to_db, make_cqi, select_mcs, tb_size_bits, CqiReport, McsTable, OllaState};
use crate::rng::{substream, SimRng, Subsystem};
use crate::traffic::{generate_frames, DlQueue, QueuedFrame, SegmentPiece};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep a per-grant trace for auditing.
    pub trace: bool,
}

/// One grant as transmitted and received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrantTrace {
    pub slot: u64,
    pub cell: u32,
    pub ue: u32,
    pub tier: u8,
    pub rbg_start: u16,
    pub rbg_count: u16,
    pub n_prb: u32,
    pub mcs: u8,
    pub retx: bool,
    pub process_uid: u64,
    /// Transmission number of the process, 1 for the first.
    pub tx_index: u32,
    pub cbgs: Vec<usize>,
    /// CBGs the process had marked failed before this grant.
    pub failed_before: Vec<usize>,
    pub attempt_sinr_lin: f64,
    /// Accumulated SINR of each CBG in `cbgs` after this attempt.
    pub combined_sinr_lin: Vec<f64>,
    pub decoded: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarqSummary {
    pub first_tx_cbgs: u64,
    pub first_tx_cbg_failures: u64,
    pub retx_grants: u64,
    pub exhausted_processes: u64,
    pub max_tx_count: u32,
    /// Slots in which a lower tier overtook a retransmission that fit.
    pub tier_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub granted_prb_slots: u64,
    pub available_prb_slots: u64,
    pub embb_acked_bits: u64,
    pub xr_acked_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub window_ms: f64,
    pub frames: Vec<FrameRecord>,
    pub ues: Vec<UeStats>,
    pub cells: Vec<CellStats>,
    pub harq: HarqSummary,
    #[serde(skip)]
    pub trace: Option<Vec<GrantTrace>>,
}

impl RunResult {
    pub fn prb_utilization(&self) -> f64 {
        let g: u64 = self.cells.iter().map(|c| c.granted_prb_slots).sum();
        let a: u64 = self.cells.iter().map(|c| c.available_prb_slots).sum();
        if a == 0 {
            0.0
        } else {
            g as f64 / a as f64
        }
    }

    /// Mean over cells of the eMBB cell throughput.
    pub fn embb_cell_throughput_mbps(&self) -> f64 {
        let bits: u64 = self.cells.iter().map(|c| c.embb_acked_bits).sum();
        bits as f64 / self.cells.len().max(1) as f64 / self.window_ms / 1e3
    }
}

/// Throughput ceiling of one cell at the highest MCS with every PRB granted.
pub fn peak_phy_throughput_mbps(c: &ScenarioConfig) -> f64 {
    let frame = TddFrame::from_config(c);
    let table = McsTable::new(c.link_adaptation.mcs_gap_db);
    let top = table.get(table.max_index());
    let bits: u64 = (0..frame.period())
        .map(|s| frame.slot_format(s).data_symbols)
        .filter(|&n| n > 0)
        .map(|n| tb_size_bits(c.n_prb, n, top))
        .sum();
    bits as f64 / (frame.period() as f64 * c.slot_duration_ms()) / 1e3
}

struct FrameState {
    gen_ms: f64,
    arrival_ms: f64,
    size_bits: u64,
    ready_slot: u64,
    delivered_bits: u64,
    lost: bool,
    completion_ms: Option<f64>,
}

struct UeState {
    id: u32,
    class: TrafficClass,
    cell: usize,
    queue: DlQueue,
    frames: Vec<FrameState>,
    next_frame: usize,
    olla: OllaState,
    cqi_db: f64,
    pending_cqi: VecDeque<CqiReport>,
    pending_olla: VecDeque<(u64, Vec<bool>)>,
    procs: Vec<Option<HarqProcess>>,
    proc_free_at: Vec<u64>,
    err_rng: SimRng,
    cqi_phase: u64,
    acked_bits: u64,
    sinr_db: Vec<f32>,
}

impl UeState {
    fn free_process(&self, slot: u64) -> Option<usize> {
        (0..self.procs.len()).find(|&i| self.procs[i].is_none() && self.proc_free_at[i] <= slot)
    }
}

/// Frames of one XR flow with a random start phase within the frame period.
fn xr_frames(flow: &XrFlowConfig, horizon_ms: f64, mut rng: SimRng) -> Vec<(f64, f64, u64)> {
    let period = 1000.0 / flow.fps;
    let phase = rng.gen::<f64>() * period;
    generate_frames(flow, (horizon_ms - phase).max(0.0), rng)
        .into_iter()
        .map(|f| (f.gen_time_ms + phase, f.arrival_time_ms + phase, f.size_bits))
        .collect()
}

pub fn run(c: &ScenarioConfig, seed: u64) -> Result<RunResult, LayoutError> {
    run_with(c, seed, RunOptions::default())
}

pub fn run_with(c: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunResult, LayoutError> {
    let dep = generate_layout(c, seed)?;
    let mut channel = Channel::new(c, &dep, seed);
    let frame = TddFrame::from_config(c);
    let layout = RbgLayout::new(c.n_prb, c.scheduler.rbg_size_prb);
    let n_rbg = layout.n_rbg();
    let table = McsTable::new(c.link_adaptation.mcs_gap_db);
    let n_cells = dep.cells.len();
    let slot_ms = c.slot_duration_ms();
    let symbol_ms = c.symbol_duration_ms();
    let warmup = c.warmup_slots as u64;
    let meas = c.measurement_slots();
    let drain = (c.drain_ms / slot_ms).ceil() as u64;
    let total_slots = warmup + meas + drain;
    let window = (warmup as f64 * slot_ms, (warmup + meas) as f64 * slot_ms);
    let cqi_period = c.cqi_period_slots();
    let target = c.harq.target_cbg_error_rate();
    let la = &c.link_adaptation;

    let mut ues: Vec<UeState> = dep
        .ues
        .iter()
        .map(|u| {
            let key = u.stream_key();
            let (queue, frames) = match u.class {
                TrafficClass::Embb => (DlQueue::FullBuffer, Vec::new()),
                TrafficClass::Xr => {
                    let raw = xr_frames(&c.xr_flow, total_slots as f64 * slot_ms, substream(seed, Subsystem::Traffic, key));
                    let frames = raw
                        .into_iter()
                        .map(|(gen_ms, arrival_ms, size_bits)| FrameState {
                            gen_ms,
                            arrival_ms,
                            size_bits,
                            ready_slot: frame.first_tx_slot_after(arrival_ms / symbol_ms),
                            delivered_bits: 0,
                            lost: false,
                            completion_ms: None,
                        })
                        .collect();
                    (DlQueue::frames(), frames)
                }
            };
            // Until the first report arrives, assume every neighbour is active.
            let s = channel.link_snr_lin(u.id as usize, u.serving_cell);
            let i: f64 = (0..n_cells).filter(|&k| k != u.serving_cell).map(|k| channel.link_snr_lin(u.id as usize, k)).sum();
            let n_proc = c.scheduler.harq_processes as usize;
            UeState {
                id: u.id,
                class: u.class,
                cell: u.serving_cell,
                queue,
                frames,
                next_frame: 0,
                olla: OllaState::new(la.olla_step_down_db, target, la.olla_offset_limit_db),
                cqi_db: lin_to_db(s / (i + 1.0)),
                pending_cqi: VecDeque::new(),
                pending_olla: VecDeque::new(),
                procs: vec![None; n_proc],
                proc_free_at: vec![0; n_proc],
                err_rng: substream(seed, Subsystem::Errors, key),
                cqi_phase: substream(seed, Subsystem::CqiPhase, key).gen_range(0..cqi_period),
                acked_bits: 0,
                sinr_db: Vec::new(),
            }
        })
        .collect();

    let cell_ues: Vec<Vec<usize>> = (0..n_cells).map(|k| dep.ues_of_cell(k).map(|u| u.id as usize).collect()).collect();
    let mut schedulers: Vec<CellScheduler> = cell_ues
        .iter()
        .map(|list| {
            CellScheduler::new(
                list.iter()
                    .map(|&u| match ues[u].class {
                        TrafficClass::Xr => c.scheduler.w_xr,
                        TrafficClass::Embb => c.scheduler.w_embb,
                    })
                    .collect(),
            )
        })
        .collect();

    let mut start_rngs: Vec<SimRng> = (0..n_cells as u64).map(|k| substream(seed, Subsystem::Scheduler, k)).collect();
    let mut cells = vec![CellStats::default(); n_cells];
    let mut harq = HarqSummary::default();
    let mut trace = opts.trace.then(Vec::new);
    let mut next_uid = 0u64;
    let mut activity = ActivityMap::new(n_cells, n_rbg);
    let mut sinr_buf = vec![0.0f64; n_rbg];
    let mut decisions: Vec<SchedulingDecision> = Vec::with_capacity(n_cells);

    for slot in 0..total_slots {
        let fmt = frame.slot_format(slot);
        let in_window = slot >= warmup && slot < warmup + meas;

        for ue in ues.iter_mut() {
            while ue.pending_cqi.front().is_some_and(|r| r.slot_available <= slot) {
                ue.cqi_db = ue.pending_cqi.pop_front().unwrap().wideband_sinr_db;
            }
            while ue.pending_olla.front().is_some_and(|r| r.0 <= slot) {
                let (_, res) = ue.pending_olla.pop_front().unwrap();
                ue.olla.update(&res);
            }
            while ue.next_frame < ue.frames.len() && ue.frames[ue.next_frame].ready_slot <= slot {
                let seq = ue.next_frame;
                ue.queue.push(QueuedFrame::new(seq as u32, ue.frames[seq].size_bits));
                ue.next_frame += 1;
            }
        }

        if fmt.data_symbols == 0 {
            continue;
        }

        // Phase 1: every cell schedules from its own state.
        decisions.clear();
        for (cell, list) in cell_ues.iter().enumerate() {
            let mut retx = Vec::new();
            let mut new_data = Vec::new();
            for (local, &u) in list.iter().enumerate() {
                let ue = &ues[u];
                for p in ue.procs.iter().flatten() {
                    if p.awaits_retx() && p.next_eligible_slot <= slot {
                        retx.push(RetxCandidate {
                            ue: local as u32,
                            process_uid: p.uid,
                            mcs: *table.get(p.mcs),
                            failed_bits: p.failed_bits(),
                            eligible_slot: p.next_eligible_slot,
                        });
                    }
                }
                if ue.queue.has_data() && ue.free_process(slot).is_some() {
                    new_data.push(NewDataCandidate {
                        ue: local as u32,
                        class: ue.class,
                        pending_bits: ue.queue.pending_bits(),
                        mcs: *select_mcs(ue.cqi_db, &ue.olla, &table),
                    });
                }
            }
            let start = if c.scheduler.rotate_rbg_start { start_rngs[cell].gen_range(0..n_rbg as u16) } else { 0 };
            decisions.push(schedulers[cell].allocate(slot, fmt.data_symbols, &layout, start, &retx, &new_data));
        }
        activity.clear();
        for (cell, d) in decisions.iter().enumerate() {
            for r in d.used_rbgs() {
                activity.set(cell, r as usize, true);
            }
        }

        // Phase 2: receptions against this slot's interference.
        let timing = frame.feedback_timing(slot);
        let done_ms = frame.decode_done_symbol(slot) * symbol_ms;
        for (cell, d) in decisions.iter().enumerate() {
            for g in &d.grants {
                let u = cell_ues[cell][g.ue as usize];
                let sinrs = &mut sinr_buf[..g.rbgs.len()];
                for (k, &r) in g.rbgs.iter().enumerate() {
                    sinrs[k] = channel.sinr_lin(u, r as usize, slot, &activity);
                }
                let eff = effective_sinr_lin(sinrs);
                let ue = &mut ues[u];
                let pi = match g.kind {
                    GrantKind::New { tb_bits } => {
                        let pi = ue.free_process(slot).expect("scheduler granted a UE without a free HARQ process");
                        let payload = ue.queue.dequeue_bits(tb_bits);
                        ue.procs[pi] = Some(HarqProcess::new(
                            next_uid,
                            pi as u8,
                            ue.id,
                            payload,
                            g.mcs,
                            tb_bits,
                            c.harq.n_cbg_per_tb,
                            c.harq.cbg_max_bits,
                            c.harq.max_retx,
                        ));
                        next_uid += 1;
                        pi
                    }
                    GrantKind::Retx { process_uid } => {
                        harq.retx_grants += 1;
                        ue.procs.iter().position(|p| p.as_ref().is_some_and(|p| p.uid == process_uid)).expect("retx of unknown process")
                    }
                };
                let p = ue.procs[pi].as_mut().unwrap();
                let failed_before = p.failed_cbgs();
                let cbgs = p.cbgs_for_next_tx();
                let prior = p.tx_count;
                let combined = p.transmit(&cbgs, eff);
                let mcs = table.get(p.mcs);
                let decoded: Vec<bool> = combined
                    .iter()
                    .map(|&s| ue.err_rng.gen::<f64>() >= blep(lin_to_db(s), mcs, prior, c.calibration.blep_slope))
                    .collect();
                harq.max_tx_count = harq.max_tx_count.max(p.tx_count);
                if prior == 0 {
                    ue.pending_olla.push_back((timing.eligible_slot, decoded.clone()));
                    if in_window {
                        harq.first_tx_cbgs += decoded.len() as u64;
                        harq.first_tx_cbg_failures += decoded.iter().filter(|&&ok| !ok).count() as u64;
                    }
                }
                if in_window {
                    ue.sinr_db.push(lin_to_db(eff) as f32);
                }
                let event = p.process_feedback(&decoded, timing.eligible_slot).expect("outcome per transmitted CBG");

                let mut acked = 0u64;
                let mut pieces: Vec<(SegmentPiece, bool)> = Vec::new();
                for (&cbg, &ok) in cbgs.iter().zip(&decoded) {
                    let (ps, anon) = p.cbg_payload(cbg);
                    if ok {
                        acked += anon + ps.iter().map(|x| x.len).sum::<u64>();
                        pieces.extend(ps.into_iter().map(|x| (x, true)));
                    } else if p.status[cbg] == CbgStatus::Lost {
                        pieces.extend(ps.into_iter().map(|x| (x, false)));
                    }
                }
                if let Some(t) = trace.as_mut() {
                    t.push(GrantTrace {
                        slot,
                        cell: cell as u32,
                        ue: ue.id,
                        tier: g.tier as u8,
                        rbg_start: g.rbgs[0],
                        rbg_count: g.rbgs.len() as u16,
                        n_prb: g.n_prb,
                        mcs: g.mcs,
                        retx: g.tier == Tier::Retx,
                        process_uid: p.uid,
                        tx_index: p.tx_count,
                        cbgs: cbgs.clone(),
                        failed_before,
                        attempt_sinr_lin: eff,
                        combined_sinr_lin: combined,
                        decoded,
                    });
                }
                match event {
                    FeedbackEvent::Completed => {
                        ue.procs[pi] = None;
                        ue.proc_free_at[pi] = timing.eligible_slot;
                    }
                    FeedbackEvent::Exhausted { .. } => {
                        harq.exhausted_processes += 1;
                        ue.procs[pi] = None;
                        ue.proc_free_at[pi] = timing.eligible_slot;
                    }
                    FeedbackEvent::Retransmit { .. } => {}
                }
                for (piece, ok) in pieces {
                    let f = &mut ue.frames[piece.seq as usize];
                    if ok {
                        f.delivered_bits += piece.len;
                        if f.delivered_bits == f.size_bits && !f.lost {
                            f.completion_ms = Some(done_ms);
                        }
                    } else {
                        f.lost = true;
                        f.completion_ms = None;
                    }
                }
                if in_window {
                    ue.acked_bits += acked;
                    match ue.class {
                        TrafficClass::Embb => cells[cell].embb_acked_bits += acked,
                        TrafficClass::Xr => cells[cell].xr_acked_bits += acked,
                    }
                }
            }
            if in_window {
                cells[cell].granted_prb_slots += d.granted_prbs() as u64;
                cells[cell].available_prb_slots += layout.total_prbs() as u64;
                harq.tier_violations += d.tier_violations() as u64;
            }
        }

        // CQI: reference signals are always on, so every UE due to report
        // measures, scheduled or not. Sampling instants that fall on an
        // uplink slot are measured in the following downlink slot.
        let prev_uplink = slot > 0 && frame.kind(slot - 1) == SlotKind::Uplink;
        for (u, ue) in ues.iter_mut().enumerate() {
            let due = slot % cqi_period == ue.cqi_phase || (prev_uplink && (slot - 1) % cqi_period == ue.cqi_phase);
            if !due {
                continue;
            }
            for (r, s) in sinr_buf.iter_mut().enumerate() {
                *s = channel.sinr_lin(u, r, slot, &activity);
            }
            let measured = lin_to_db(effective_sinr_lin(&sinr_buf));
            ue.pending_cqi.push_back(make_cqi(ue.id, slot, measured, la.cqi_quant_db, &frame));
        }
    }

    let window_ms = window.1 - window.0;
    let mut records = Vec::new();
    let ue_stats = ues
        .into_iter()
        .map(|ue| {
            let mut latencies = Vec::new();
            for (seq, f) in ue.frames.iter().enumerate() {
                if f.gen_ms < window.0 || f.gen_ms >= window.1 {
                    continue;
                }
                let rec = FrameRecord {
                    ue_id: ue.id,
                    seq: seq as u32,
                    gen_time_ms: f.gen_ms,
                    arrival_time_ms: f.arrival_ms,
                    completion_time_ms: f.completion_ms,
                    size_bits: f.size_bits,
                };
                latencies.push(frame_latency_ms(&rec, c.xr_flow.latency_clock));
                records.push(rec);
            }
            UeStats {
                ue_id: ue.id,
                class: ue.class,
                cell: ue.cell as u32,
                latencies_ms: latencies,
                throughput_mbps: ue.acked_bits as f64 / window_ms / 1e3,
                sinr_db: ue.sinr_db,
            }
        })
        .collect();

    Ok(RunResult { seed, window_ms, frames: records, ues: ue_stats, cells, harq, trace })
}

/// Runs seeds `base_seed + 1 ..= base_seed + n_runs`, optionally in
/// parallel. Results come back in seed order either way.
pub fn run_campaign(c: &ScenarioConfig, n_runs: u32, base_seed: u64, parallel: bool) -> Result<Vec<RunResult>, LayoutError> {
    assert!(n_runs >= 1, "a campaign needs at least one run");
    let seeds: Vec<u64> = (1..=n_runs as u64).map(|i| base_seed + i).collect();
    if parallel {
        seeds.par_iter().map(|&s| run(c, s)).collect()
    } else {
        seeds.iter().map(|&s| run(c, s)).collect()
    }
}

/// One scenario of a load sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sdr_mbps: f64,
    pub embb: bool,
    pub n_xr_per_cell: u32,
}

impl SweepPoint {
    /// `base` with this point's XR load and eMBB presence. Enabling eMBB
    /// keeps the base eMBB count, or one per cell if the base has none.
    pub fn scenario(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut c = base.clone();
        c.xr_flow = c.xr_flow.with_sdr(self.sdr_mbps);
        c.n_xr_ue_per_cell = self.n_xr_per_cell;
        c.n_embb_ue_per_cell = if self.embb { base.n_embb_ue_per_cell.max(1) } else { 0 };
        c
    }
}

/// Runs `base.n_runs` seeds of `point` and summarizes them at each PDB.
pub fn run_point(
    base: &ScenarioConfig,
    point: SweepPoint,
    pdbs_ms: &[f64],
    base_seed: u64,
    parallel: bool,
) -> Result<PointSummary, LayoutError> {
    let runs = run_campaign(&point.scenario(base), base.n_runs, base_seed, parallel)?;
    Ok(PointSummary::from_runs(point.sdr_mbps, point.embb, point.n_xr_per_cell, pdbs_ms, &runs))
}
