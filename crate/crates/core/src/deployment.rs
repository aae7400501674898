//! Indoor-hotspot deployment and the per-RBG SINR model.
//!
//! Propagation is a single-slope LOS indoor model
//! `PL = 32.4 + 17.3 log10(d3D) + 20 log10(fGHz)` with log-normal shadowing
//! per link and a flat beamforming gain. Fast fading is a first-order
//! autoregressive process in dB per (UE, cell, RBG), evaluated lazily: a link
//! that is not looked at for `k` slots advances by the exact `k`-step
//! transition when it is next read.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::mac::{SchedulingDecision, TrafficClass};
use crate::rng::{substream, ue_stream_key, SimRng, Subsystem};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeDrop {
    pub id: u32,
    pub class: TrafficClass,
    /// Index among UEs of the same class; keys the UE's random streams.
    pub class_index: u32,
    pub position: Position,
    pub serving_cell: usize,
    /// Index among the UEs of the serving cell.
    pub local_index: u32,
    /// Path gain towards every cell, shadowing and beamforming included.
    pub gain_db: Vec<f64>,
}

impl UeDrop {
    pub fn stream_key(&self) -> u64 {
        ue_stream_key(self.class == TrafficClass::Xr, self.class_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub cells: Vec<Position>,
    /// Sorted by serving cell, XR before eMBB within a cell.
    pub ues: Vec<UeDrop>,
}

impl Deployment {
    pub fn ues_of_cell(&self, cell: usize) -> impl Iterator<Item = &UeDrop> {
        self.ues.iter().filter(move |u| u.serving_cell == cell)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "kind,id,x_m,y_m,serving_cell")?;
        for (i, c) in self.cells.iter().enumerate() {
            writeln!(w, "cell,{i},{:.3},{:.3},{i}", c.x, c.y)?;
        }
        for u in &self.ues {
            let kind = match u.class {
                TrafficClass::Xr => "xr",
                TrafficClass::Embb => "embb",
            };
            writeln!(w, "{kind},{},{:.3},{:.3},{}", u.id, u.position.x, u.position.y, u.serving_cell)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("could not place {class:?} UE #{index} in a cell with free quota after {attempts} drops")]
    DropDidNotConverge { class: TrafficClass, index: u32, attempts: u32 },
}

/// Grid of `cells_x` x `cells_y` sites at `isd_m` spacing, centred in the hall.
pub fn cell_positions(c: &ScenarioConfig) -> Vec<Position> {
    let l = &c.layout;
    let x0 = l.hall_length_m / 2.0 - (l.cells_x as f64 - 1.0) * l.isd_m / 2.0;
    let y0 = l.hall_width_m / 2.0 - (l.cells_y as f64 - 1.0) * l.isd_m / 2.0;
    let mut out = Vec::with_capacity(l.n_cells());
    for j in 0..l.cells_y {
        for i in 0..l.cells_x {
            out.push(Position { x: x0 + i as f64 * l.isd_m, y: y0 + j as f64 * l.isd_m, z: l.gnb_height_m });
        }
    }
    out
}

/// Link gain in dB between a gNB and a UE (negative of the loss).
pub fn path_gain_db(cell: &Position, ue: &Position, shadowing_db: f64, carrier_ghz: f64, beamforming_gain_db: f64) -> f64 {
    let d = cell.distance(ue).max(1.0);
    -(32.4 + 17.3 * d.log10() + 20.0 * carrier_ghz.log10()) - shadowing_db + beamforming_gain_db
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Drops UEs uniformly over the hall. Each UE is redropped until its
/// strongest cell still has quota for its class, so every cell ends up with
/// exactly `n_xr_ue_per_cell` XR and `n_embb_ue_per_cell` eMBB UEs.
pub fn generate_layout(c: &ScenarioConfig, seed: u64) -> Result<Deployment, LayoutError> {
    let cells = cell_positions(c);
    let n_cells = cells.len();
    let l = &c.layout;
    let mut drops: Vec<UeDrop> = Vec::new();
    for (class, quota) in [(TrafficClass::Xr, c.n_xr_ue_per_cell), (TrafficClass::Embb, c.n_embb_ue_per_cell)] {
        let key = (class == TrafficClass::Xr) as u64;
        let mut pos_rng = substream(seed, Subsystem::Drop, key);
        let mut sh_rng = substream(seed, Subsystem::Shadowing, key);
        let mut left = vec![quota; n_cells];
        for index in 0..quota * n_cells as u32 {
            let mut attempts = 0;
            loop {
                if attempts == l.max_drop_attempts {
                    return Err(LayoutError::DropDidNotConverge { class, index, attempts });
                }
                attempts += 1;
                let p = Position {
                    x: pos_rng.gen::<f64>() * l.hall_length_m,
                    y: pos_rng.gen::<f64>() * l.hall_width_m,
                    z: l.ue_height_m,
                };
                let gain_db: Vec<f64> = cells
                    .iter()
                    .map(|cp| {
                        let sh: f64 = sh_rng.sample::<f64, _>(StandardNormal) * c.calibration.shadowing_std_db;
                        path_gain_db(cp, &p, sh, c.carrier_ghz, c.calibration.beamforming_gain_db)
                    })
                    .collect();
                let best = argmax(&gain_db);
                if left[best] > 0 {
                    left[best] -= 1;
                    drops.push(UeDrop {
                        id: 0,
                        class,
                        class_index: index,
                        position: p,
                        serving_cell: best,
                        local_index: 0,
                        gain_db,
                    });
                    break;
                }
            }
        }
    }
    drops.sort_by_key(|u| (u.serving_cell, u.class, u.class_index));
    let mut per_cell = vec![0u32; n_cells];
    for (i, u) in drops.iter_mut().enumerate() {
        u.id = i as u32;
        u.local_index = per_cell[u.serving_cell];
        per_cell[u.serving_cell] += 1;
    }
    Ok(Deployment { cells, ues: drops })
}

/// Which cells transmit on which RBGs in the current slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityMap {
    n_rbg: usize,
    active: Vec<bool>,
}

impl ActivityMap {
    pub fn new(n_cells: usize, n_rbg: usize) -> Self {
        Self { n_rbg, active: vec![false; n_cells * n_rbg] }
    }

    pub fn full(n_cells: usize, n_rbg: usize) -> Self {
        Self { n_rbg, active: vec![true; n_cells * n_rbg] }
    }

    pub fn n_cells(&self) -> usize {
        self.active.len() / self.n_rbg.max(1)
    }

    pub fn n_rbg(&self) -> usize {
        self.n_rbg
    }

    pub fn set(&mut self, cell: usize, rbg: usize, on: bool) {
        self.active[cell * self.n_rbg + rbg] = on;
    }

    #[inline]
    pub fn is_active(&self, cell: usize, rbg: usize) -> bool {
        self.active[cell * self.n_rbg + rbg]
    }

    pub fn clear(&mut self) {
        self.active.fill(false);
    }

    pub fn from_decisions(decisions: &[SchedulingDecision], n_rbg: usize) -> Self {
        let mut m = Self::new(decisions.len(), n_rbg);
        for (cell, d) in decisions.iter().enumerate() {
            for r in d.used_rbgs() {
                m.set(cell, r as usize, true);
            }
        }
        m
    }

    /// Fraction of (cell, RBG) pairs in use.
    pub fn load(&self) -> f64 {
        self.active.iter().filter(|&&a| a).count() as f64 / self.active.len().max(1) as f64
    }
}

/// Per-slot fading correlation for a given Doppler.
///
/// Coherence time is taken as `0.423 / f_D`; at 3 km/h and 4 GHz that is
/// about 38 ms, giving roughly 0.987 per 0.5 ms slot.
pub fn fading_correlation_per_slot(speed_kmh: f64, carrier_ghz: f64, slot_ms: f64) -> f64 {
    let doppler_hz = speed_kmh / 3.6 * carrier_ghz * 1e9 / SPEED_OF_LIGHT;
    if doppler_hz <= 0.0 {
        return 1.0;
    }
    let coherence_ms = 0.423 / doppler_hz * 1000.0;
    (-slot_ms / coherence_ms).exp()
}

const NEVER: u64 = u64::MAX;

/// Block fading per (UE, cell, RBG) in dB, zero mean, stationary std
/// `std_db`, lag-one correlation `rho` per slot.
#[derive(Debug, Clone)]
pub struct FadingField {
    n_cells: usize,
    n_rbg: usize,
    std_db: f64,
    rho: f64,
    value_db: Vec<f64>,
    value_lin: Vec<f64>,
    last_slot: Vec<u64>,
    rngs: Vec<SimRng>,
}

impl FadingField {
    /// `stream_keys[u]` selects the fading stream of UE `u`.
    pub fn new(seed: u64, stream_keys: &[u64], n_cells: usize, n_rbg: usize, std_db: f64, rho: f64) -> Self {
        let n = stream_keys.len() * n_cells * n_rbg;
        Self {
            n_cells,
            n_rbg,
            std_db,
            rho,
            value_db: vec![0.0; n],
            value_lin: vec![1.0; n],
            last_slot: vec![NEVER; n],
            rngs: stream_keys.iter().map(|&k| substream(seed, Subsystem::Fading, k)).collect(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[inline]
    fn advance(&mut self, ue: usize, cell: usize, rbg: usize, slot: u64) -> usize {
        let i = (ue * self.n_cells + cell) * self.n_rbg + rbg;
        let last = self.last_slot[i];
        if last == slot || self.std_db == 0.0 {
            return i;
        }
        let z: f64 = self.rngs[ue].sample(StandardNormal);
        let x = if last == NEVER || slot < last {
            self.std_db * z
        } else {
            let a = self.rho.powi((slot - last).min(i32::MAX as u64) as i32);
            a * self.value_db[i] + (1.0 - a * a).max(0.0).sqrt() * self.std_db * z
        };
        self.value_db[i] = x;
        self.value_lin[i] = 10f64.powf(x / 10.0);
        self.last_slot[i] = slot;
        i
    }

    pub fn fading_gain_db(&mut self, ue: usize, cell: usize, rbg: usize, slot: u64) -> f64 {
        let i = self.advance(ue, cell, rbg, slot);
        self.value_db[i]
    }

    #[inline]
    pub fn fading_gain_lin(&mut self, ue: usize, cell: usize, rbg: usize, slot: u64) -> f64 {
        let i = self.advance(ue, cell, rbg, slot);
        self.value_lin[i]
    }
}

/// Received SNR per PRB of every link plus the fading field: everything
/// needed to evaluate SINR for any activity pattern.
#[derive(Debug, Clone)]
pub struct Channel {
    n_cells: usize,
    serving: Vec<usize>,
    /// Linear received power over noise, per PRB, `[ue * n_cells + cell]`.
    snr_lin: Vec<f64>,
    pub fading: FadingField,
}

/// Thermal noise per PRB in dBm.
pub fn noise_per_prb_dbm(scs_khz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * (12.0 * scs_khz * 1e3).log10() + noise_figure_db
}

impl Channel {
    pub fn new(c: &ScenarioConfig, dep: &Deployment, seed: u64) -> Self {
        let n_cells = dep.cells.len();
        let tx_per_prb_dbm = c.tx_power_dbm - 10.0 * (c.n_prb as f64).log10();
        let noise_dbm = noise_per_prb_dbm(c.scs_khz, c.noise_figure_db);
        // The array gain follows the beam, which points at the served UE;
        // beams of other cells reach this UE with average (unit) gain.
        let bf = c.calibration.beamforming_gain_db;
        let snr_lin = dep
            .ues
            .iter()
            .flat_map(|u| {
                u.gain_db.iter().enumerate().map(move |(k, g)| {
                    let g = if k == u.serving_cell { *g } else { g - bf };
                    10f64.powf((tx_per_prb_dbm + g - noise_dbm) / 10.0)
                })
            })
            .collect();
        let keys: Vec<u64> = dep.ues.iter().map(UeDrop::stream_key).collect();
        let rho = fading_correlation_per_slot(c.ue_speed_kmh, c.carrier_ghz, c.slot_duration_ms());
        Self {
            n_cells,
            serving: dep.ues.iter().map(|u| u.serving_cell).collect(),
            snr_lin,
            fading: FadingField::new(seed, &keys, n_cells, c.n_rbg(), c.calibration.fading_std_db, rho),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Mean received SNR per PRB of a link, without fading. Only the
    /// serving link carries the beamforming gain.
    pub fn link_snr_lin(&self, ue: usize, cell: usize) -> f64 {
        self.snr_lin[ue * self.n_cells + cell]
    }

    /// Linear SINR of `ue` on `rbg` when the cells flagged in `activity`
    /// (other than the serving one) interfere.
    pub fn sinr_lin(&mut self, ue: usize, rbg: usize, slot: u64, activity: &ActivityMap) -> f64 {
        let serving = self.serving[ue];
        let base = ue * self.n_cells;
        let s = self.snr_lin[base + serving] * self.fading.fading_gain_lin(ue, serving, rbg, slot);
        let mut i = 0.0;
        for c in 0..self.n_cells {
            if c != serving && activity.is_active(c, rbg) {
                i += self.snr_lin[base + c] * self.fading.fading_gain_lin(ue, c, rbg, slot);
            }
        }
        s / (i + 1.0)
    }

    pub fn sinr_db(&mut self, ue: usize, rbg: usize, slot: u64, activity: &ActivityMap) -> f64 {
        10.0 * self.sinr_lin(ue, rbg, slot, activity).log10()
    }
}
