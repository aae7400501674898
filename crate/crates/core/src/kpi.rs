//! KPIs: frame latency, satisfaction, XR capacity, utilization, throughput.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::config::LatencyClock;
use crate::mac::TrafficClass;

#[derive(Debug, Error, PartialEq)]
pub enum KpiError {
    #[error("percentile of an empty sample")]
    EmptySample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub ue_id: u32,
    pub seq: u32,
    pub gen_time_ms: f64,
    pub arrival_time_ms: f64,
    /// `None` when the frame was never fully delivered.
    pub completion_time_ms: Option<f64>,
    pub size_bits: u64,
}

/// Air-interface latency of a frame; infinite when undelivered.
pub fn frame_latency_ms(r: &FrameRecord, clock: LatencyClock) -> f64 {
    let start = match clock {
        LatencyClock::Arrival => r.arrival_time_ms,
        LatencyClock::Generation => r.gen_time_ms,
    };
    r.completion_time_ms.map_or(f64::INFINITY, |c| c - start)
}

/// Deadline is closed: a frame exactly at the PDB is on time.
pub fn on_time(latency_ms: f64, pdb_ms: f64) -> bool {
    latency_ms <= pdb_ms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeStats {
    pub ue_id: u32,
    pub class: TrafficClass,
    pub cell: u32,
    /// One entry per frame; infinite for undelivered frames.
    pub latencies_ms: Vec<f64>,
    pub throughput_mbps: f64,
    pub sinr_db: Vec<f32>,
}

impl UeStats {
    pub fn n_frames(&self) -> usize {
        self.latencies_ms.len()
    }

    pub fn n_on_time(&self, pdb_ms: f64) -> usize {
        self.latencies_ms.iter().filter(|&&l| on_time(l, pdb_ms)).count()
    }
}

/// At least 99% of frames within the PDB, in exact integer arithmetic.
pub fn satisfied_counts(n_on_time: usize, n_frames: usize) -> bool {
    assert!(n_frames >= 1, "satisfaction needs at least one frame");
    100 * n_on_time >= 99 * n_frames
}

pub fn is_satisfied(ue: &UeStats, pdb_ms: f64) -> bool {
    satisfied_counts(ue.n_on_time(pdb_ms), ue.n_frames())
}

/// `(satisfied, total)` over the XR UEs in `ues` that logged frames.
pub fn satisfied_users(ues: &[UeStats], pdb_ms: f64) -> (usize, usize) {
    let xr: Vec<&UeStats> = ues.iter().filter(|u| u.class == TrafficClass::Xr && u.n_frames() > 0).collect();
    (xr.iter().filter(|u| is_satisfied(u, pdb_ms)).count(), xr.len())
}

pub const CAPACITY_THRESHOLD: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    /// `(n_xr_per_cell, satisfied fraction)` in increasing `n`.
    pub fractions: Vec<(u32, f64)>,
    pub capacity: u32,
}

/// Largest load whose satisfied fraction reaches 90%; 0 if none does.
pub fn xr_capacity(fractions: &[(u32, f64)]) -> CapacityResult {
    let mut f = fractions.to_vec();
    f.sort_by_key(|p| p.0);
    let capacity = f.iter().filter(|p| p.1 >= CAPACITY_THRESHOLD - 1e-12).map(|p| p.0).max().unwrap_or(0);
    CapacityResult { fractions: f, capacity }
}

/// Relative capacity loss `1 - with / without`; `None` when `without` is 0.
pub fn capacity_loss(cap_without: u32, cap_with: u32) -> Option<f64> {
    (cap_without > 0).then(|| 1.0 - cap_with as f64 / cap_without as f64)
}

/// Nearest-rank percentile: the `ceil(p n)`-th smallest sample.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, KpiError> {
    if samples.is_empty() {
        return Err(KpiError::EmptySample);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s[nearest_rank(s.len(), p) - 1])
}

/// Same as [`percentile`] on an already sorted sample.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64, KpiError> {
    if sorted.is_empty() {
        return Err(KpiError::EmptySample);
    }
    Ok(sorted[nearest_rank(sorted.len(), p) - 1])
}

fn nearest_rank(n: usize, p: f64) -> usize {
    // Guard against 0.99 * 100 landing a hair above 99.
    ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Granted over available PRB-slots (downlink-capable slots only).
pub fn prb_utilization(granted_prb_slots: u64, available_prb_slots: u64) -> f64 {
    assert!(available_prb_slots > 0, "no downlink slot observed");
    granted_prb_slots as f64 / available_prb_slots as f64
}

pub fn embb_throughput_mbps(acked_bits: u64, window_ms: f64) -> f64 {
    assert!(window_ms > 0.0);
    acked_bits as f64 / window_ms / 1e3
}

/// Normal-approximation half width of a binomial proportion.
pub fn binomial_ci(n: u64, p_hat: f64, confidence: f64) -> f64 {
    assert!(n >= 1 && (0.0..=1.0).contains(&p_hat));
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + confidence / 2.0);
    z * (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Empirical CDF points `(value, F(value))`, one per sample.
pub fn ecdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Summary of one sweep point (one scenario, all its runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub sdr_mbps: f64,
    pub embb: bool,
    pub n_xr_per_cell: u32,
    pub runs: usize,
    /// `(pdb_ms, satisfied XR UEs, XR UEs)` pooled over runs.
    pub satisfaction: Vec<(f64, usize, usize)>,
    /// 99th-percentile XR frame latency over all frames of all runs.
    pub xr_latency_p99_ms: Option<f64>,
    pub prb_utilization_per_run: Vec<f64>,
    pub embb_cell_throughput_per_run_mbps: Vec<f64>,
    /// Per-UE eMBB throughput, all runs.
    pub embb_ue_throughput_mbps: Vec<f64>,
    /// XR post-detection SINR at the 0..=100 percentiles.
    pub xr_sinr_percentiles_db: Vec<f64>,
    pub first_tx_cbg_failure_rate: f64,
    pub max_tx_count: u32,
    pub tier_violations: u64,
}

impl PointSummary {
    pub fn from_runs(sdr_mbps: f64, embb: bool, n_xr_per_cell: u32, pdbs: &[f64], runs: &[crate::engine::RunResult]) -> Self {
        let all_ues: Vec<&UeStats> = runs.iter().flat_map(|r| r.ues.iter()).collect();
        let xr: Vec<&UeStats> = all_ues.iter().copied().filter(|u| u.class == TrafficClass::Xr && u.n_frames() > 0).collect();
        let satisfaction = pdbs
            .iter()
            .map(|&pdb| (pdb, xr.iter().filter(|u| is_satisfied(u, pdb)).count(), xr.len()))
            .collect();
        let mut lat: Vec<f64> = xr.iter().flat_map(|u| u.latencies_ms.iter().copied()).collect();
        lat.sort_by(f64::total_cmp);
        let mut sinr: Vec<f64> = xr.iter().flat_map(|u| u.sinr_db.iter().map(|&x| x as f64)).collect();
        sinr.sort_by(f64::total_cmp);
        let xr_sinr_percentiles_db = if sinr.is_empty() {
            Vec::new()
        } else {
            (0..=100).map(|i| percentile_sorted(&sinr, (i as f64 / 100.0).max(1e-9)).unwrap()).collect()
        };
        let cbgs: u64 = runs.iter().map(|r| r.harq.first_tx_cbgs).sum();
        let fails: u64 = runs.iter().map(|r| r.harq.first_tx_cbg_failures).sum();
        Self {
            sdr_mbps,
            embb,
            n_xr_per_cell,
            runs: runs.len(),
            satisfaction,
            xr_latency_p99_ms: percentile_sorted(&lat, 0.99).ok(),
            prb_utilization_per_run: runs.iter().map(|r| r.prb_utilization()).collect(),
            embb_cell_throughput_per_run_mbps: runs.iter().map(|r| r.embb_cell_throughput_mbps()).collect(),
            embb_ue_throughput_mbps: all_ues.iter().filter(|u| u.class == TrafficClass::Embb).map(|u| u.throughput_mbps).collect(),
            xr_sinr_percentiles_db,
            first_tx_cbg_failure_rate: if cbgs == 0 { 0.0 } else { fails as f64 / cbgs as f64 },
            max_tx_count: runs.iter().map(|r| r.harq.max_tx_count).max().unwrap_or(0),
            tier_violations: runs.iter().map(|r| r.harq.tier_violations).sum(),
        }
    }

    /// Satisfied-user fraction at `pdb_ms`; `None` without XR users or
    /// when the PDB was not evaluated.
    pub fn satisfied_fraction(&self, pdb_ms: f64) -> Option<f64> {
        self.satisfaction
            .iter()
            .find(|s| (s.0 - pdb_ms).abs() < 1e-9)
            .filter(|s| s.2 > 0)
            .map(|s| s.1 as f64 / s.2 as f64)
    }

    pub fn mean_prb_utilization(&self) -> f64 {
        mean_std(&self.prb_utilization_per_run).0
    }

    pub fn mean_embb_cell_throughput_mbps(&self) -> f64 {
        mean_std(&self.embb_cell_throughput_per_run_mbps).0
    }

    pub fn xr_sinr_median_db(&self) -> Option<f64> {
        self.xr_sinr_percentiles_db.get(50).copied()
    }
}
