//! Scenario configuration.
//!
//! Every tunable of a simulation lives in [`ScenarioConfig`]. Defaults are the
//! indoor-hotspot evaluation settings; files and `--set` overrides only ever
//! patch individual fields of those defaults.
//!
//! ## File grammar
//!
//! A config file is UTF-8 text with one assignment per line:
//!
//! ```text
//! # comment
//! n_xr_ue_per_cell = 4
//! xr_flow.pdb_ms = 10
//! xr_flow.frame_size.mean = 93.75   # trailing comments are allowed
//! ```
//!
//! Keys are dotted paths into the structure (see [`ScenarioConfig::entries`]
//! for the full list). Values are parsed according to the type of the field
//! they target; string values may optionally be wrapped in double quotes.
//! Unknown keys, malformed lines and duplicate keys are rejected.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Truncated Gaussian `TN(mean, std, min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncGaussParams {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncGaussParams {
    pub const fn new(mean: f64, std: f64, min: f64, max: f64) -> Self {
        Self { mean, std, min, max }
    }

    fn check(&self, field: &str, out: &mut Vec<Violation>) {
        if !(self.std > 0.0) {
            out.push(Violation::new(format!("{field}.std"), "must be > 0"));
        }
        if !(self.min < self.max) {
            out.push(Violation::new(format!("{field}.min"), "must be < max"));
        }
        if !(self.min <= self.mean && self.mean <= self.max) {
            out.push(Violation::new(format!("{field}.mean"), "must lie within [min, max]"));
        }
    }
}

/// Which instant starts the latency clock of an XR frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyClock {
    /// Arrival at the gNB (after jitter).
    Arrival,
    /// Generation at the application server.
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XrFlowConfig {
    pub fps: f64,
    /// Labeled source data rate; must match the frame-size mean.
    pub sdr_mbps: f64,
    /// Frame size in kilobytes (1 kB = 1000 bytes).
    pub frame_size: TruncGaussParams,
    /// Arrival jitter in milliseconds.
    pub jitter: TruncGaussParams,
    pub pdb_ms: f64,
    pub latency_clock: LatencyClock,
}

impl XrFlowConfig {
    /// 30 Mbps flow: TN(62.5, 6.25, 31.25, 93.75) kB at 60 fps.
    pub fn sdr_30mbps() -> Self {
        Self {
            fps: 60.0,
            sdr_mbps: 30.0,
            frame_size: TruncGaussParams::new(62.5, 6.25, 31.25, 93.75),
            jitter: TruncGaussParams::new(0.0, 2.0, -4.0, 4.0),
            pdb_ms: 15.0,
            latency_clock: LatencyClock::Arrival,
        }
    }

    /// 45 Mbps flow: TN(93.75, 9.8, 46.875, 140.625) kB at 60 fps.
    pub fn sdr_45mbps() -> Self {
        Self {
            sdr_mbps: 45.0,
            frame_size: TruncGaussParams::new(93.75, 9.8, 46.875, 140.625),
            pdb_ms: 10.0,
            ..Self::sdr_30mbps()
        }
    }

    /// Flow for an arbitrary SDR. 30 and 45 Mbps return the tabulated
    /// parameters; other rates scale the 30 Mbps size distribution.
    /// Jitter, frame rate, PDB and latency clock are kept from `self`.
    pub fn with_sdr(&self, sdr_mbps: f64) -> Self {
        let sizes = if (sdr_mbps - 30.0).abs() < 1e-9 {
            Self::sdr_30mbps().frame_size
        } else if (sdr_mbps - 45.0).abs() < 1e-9 {
            Self::sdr_45mbps().frame_size
        } else {
            let base = Self::sdr_30mbps().frame_size;
            let k = sdr_mbps / 30.0 * 60.0 / self.fps;
            TruncGaussParams::new(base.mean * k, base.std * k, base.min * k, base.max * k)
        };
        Self { sdr_mbps, frame_size: sizes, ..self.clone() }
    }

    /// Mean offered load implied by the frame-size mean.
    pub fn mean_rate_mbps(&self) -> f64 {
        self.frame_size.mean * 8.0 * self.fps / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub w_xr: u32,
    pub w_embb: u32,
    pub rbg_size_prb: u32,
    /// HARQ processes per UE.
    pub harq_processes: u32,
    /// Start each slot's RBG walk at a random RBG instead of RBG 0, so
    /// lightly loaded cells do not all pile onto the same RBGs.
    pub rotate_rbg_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarqConfig {
    pub max_retx: u32,
    pub n_cbg_per_tb: u32,
    /// Target number of failed CBGs out of `n_cbg_per_tb` on first transmissions.
    pub target_failed_cbg: u32,
    /// Largest code block; TBs above this are split into more CBGs.
    pub cbg_max_bits: u32,
}

impl HarqConfig {
    pub fn target_cbg_error_rate(&self) -> f64 {
        self.target_failed_cbg as f64 / self.n_cbg_per_tb as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub hall_length_m: f64,
    pub hall_width_m: f64,
    pub cells_x: u32,
    pub cells_y: u32,
    pub isd_m: f64,
    pub gnb_height_m: f64,
    pub ue_height_m: f64,
    /// Redrop attempts per UE before the equal-count drop gives up.
    pub max_drop_attempts: u32,
}

impl LayoutConfig {
    pub fn n_cells(&self) -> usize {
        (self.cells_x * self.cells_y) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkAdaptationConfig {
    pub cqi_quant_db: f64,
    pub olla_step_down_db: f64,
    pub olla_offset_limit_db: f64,
    /// Shannon gap used to place the per-MCS 10% BLEP thresholds.
    pub mcs_gap_db: f64,
}

/// Knobs standing in for the calibrated channel and link-level tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub beamforming_gain_db: f64,
    pub shadowing_std_db: f64,
    pub fading_std_db: f64,
    /// Logistic BLEP slope per dB.
    pub blep_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub layout: LayoutConfig,
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub scs_khz: f64,
    pub n_prb: u32,
    pub tdd_pattern: String,
    pub symbols_per_slot: u32,
    pub pdcch_symbols: u32,
    pub special_slot_dl_symbols: u32,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub ue_speed_kmh: f64,
    pub gnb_tx_proc_symbols: f64,
    pub ue_rx_proc_symbols: f64,
    pub n_xr_ue_per_cell: u32,
    pub n_embb_ue_per_cell: u32,
    pub xr_flow: XrFlowConfig,
    pub scheduler: SchedulerConfig,
    pub harq: HarqConfig,
    pub cqi_period_ms: f64,
    pub link_adaptation: LinkAdaptationConfig,
    pub calibration: CalibrationConfig,
    pub sim_duration_s: f64,
    /// Slots simulated before KPI collection starts.
    pub warmup_slots: u32,
    /// Extra simulated time after the measurement window so that late frames
    /// of the window can still complete.
    pub drain_ms: f64,
    pub n_runs: u32,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        default_scenario()
    }
}

/// The evaluation defaults: 12-cell indoor hotspot, 4 GHz, 100 MHz TDD
/// DDDSU, 30 Mbps XR flows plus one full-buffer eMBB UE per cell.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        layout: LayoutConfig {
            hall_length_m: 120.0,
            hall_width_m: 50.0,
            cells_x: 6,
            cells_y: 2,
            isd_m: 20.0,
            gnb_height_m: 3.0,
            ue_height_m: 1.5,
            max_drop_attempts: 100_000,
        },
        carrier_ghz: 4.0,
        bandwidth_mhz: 100.0,
        scs_khz: 30.0,
        n_prb: 273,
        tdd_pattern: "DDDSU".to_string(),
        symbols_per_slot: 14,
        pdcch_symbols: 1,
        special_slot_dl_symbols: 10,
        tx_power_dbm: 31.0,
        noise_figure_db: 9.0,
        ue_speed_kmh: 3.0,
        gnb_tx_proc_symbols: 2.75,
        ue_rx_proc_symbols: 6.0,
        n_xr_ue_per_cell: 5,
        n_embb_ue_per_cell: 1,
        xr_flow: XrFlowConfig::sdr_30mbps(),
        scheduler: SchedulerConfig { w_xr: 20, w_embb: 1, rbg_size_prb: 16, harq_processes: 16, rotate_rbg_start: true },
        harq: HarqConfig { max_retx: 3, n_cbg_per_tb: 8, target_failed_cbg: 2, cbg_max_bits: 8448 },
        cqi_period_ms: 2.0,
        link_adaptation: LinkAdaptationConfig {
            cqi_quant_db: 1.0,
            olla_step_down_db: 0.1,
            olla_offset_limit_db: 10.0,
            mcs_gap_db: 2.0,
        },
        calibration: CalibrationConfig {
            beamforming_gain_db: 25.0,
            shadowing_std_db: 3.0,
            fading_std_db: 4.0,
            blep_slope: 2.0,
        },
        sim_duration_s: 6.0,
        warmup_slots: 1000,
        drain_ms: 40.0,
        n_runs: 5,
        rng_seed: 1,
    }
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("invalid configuration: {}", join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Checks every invariant; an empty list means the config is usable.
pub fn validate(config: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let c = config;

    let l = &c.layout;
    if !(l.hall_length_m > 0.0 && l.hall_width_m > 0.0) {
        out.push(Violation::new("layout.hall_length_m", "hall dimensions must be > 0"));
    }
    if l.cells_x == 0 || l.cells_y == 0 {
        out.push(Violation::new("layout.cells_x", "need at least one cell in each direction"));
    }
    if !(l.isd_m > 0.0) {
        out.push(Violation::new("layout.isd_m", "must be > 0"));
    } else {
        if (l.cells_x as f64 - 1.0) * l.isd_m > l.hall_length_m {
            out.push(Violation::new("layout.cells_x", "cell grid wider than the hall"));
        }
        if (l.cells_y as f64 - 1.0) * l.isd_m > l.hall_width_m {
            out.push(Violation::new("layout.cells_y", "cell grid deeper than the hall"));
        }
    }
    if !(l.gnb_height_m > 0.0 && l.ue_height_m > 0.0) {
        out.push(Violation::new("layout.gnb_height_m", "antenna heights must be > 0"));
    }
    if l.max_drop_attempts == 0 {
        out.push(Violation::new("layout.max_drop_attempts", "must be >= 1"));
    }

    if !(c.carrier_ghz > 0.0) {
        out.push(Violation::new("carrier_ghz", "must be > 0"));
    }
    if !(c.scs_khz > 0.0 && c.bandwidth_mhz > 0.0) {
        out.push(Violation::new("scs_khz", "bandwidth and SCS must be > 0"));
    } else {
        let occupied_mhz = c.n_prb as f64 * 12.0 * c.scs_khz / 1000.0;
        if occupied_mhz > c.bandwidth_mhz || occupied_mhz < 0.9 * c.bandwidth_mhz {
            out.push(Violation::new(
                "n_prb",
                format!("{} PRB occupy {occupied_mhz:.2} MHz, inconsistent with {} MHz", c.n_prb, c.bandwidth_mhz),
            ));
        }
    }
    if c.tdd_pattern.len() != 5 || !c.tdd_pattern.chars().all(|ch| matches!(ch, 'D' | 'S' | 'U')) {
        out.push(Violation::new("tdd_pattern", "must be 5 characters from {D, S, U}"));
    } else if !c.tdd_pattern.contains('U') || !c.tdd_pattern.contains('D') {
        out.push(Violation::new("tdd_pattern", "needs at least one D and one U slot"));
    }
    if c.symbols_per_slot != 14 {
        out.push(Violation::new("symbols_per_slot", "only 14-symbol slots are supported"));
    }
    if c.pdcch_symbols >= c.special_slot_dl_symbols {
        out.push(Violation::new("pdcch_symbols", "must be < special_slot_dl_symbols"));
    }
    if c.special_slot_dl_symbols > c.symbols_per_slot {
        out.push(Violation::new("special_slot_dl_symbols", "must be <= symbols_per_slot"));
    }
    if !(c.gnb_tx_proc_symbols >= 0.0 && c.ue_rx_proc_symbols >= 0.0) {
        out.push(Violation::new("ue_rx_proc_symbols", "processing delays must be >= 0"));
    }
    if !(c.ue_speed_kmh >= 0.0) {
        out.push(Violation::new("ue_speed_kmh", "must be >= 0"));
    }

    let f = &c.xr_flow;
    if !(f.fps > 0.0) {
        out.push(Violation::new("xr_flow.fps", "must be > 0"));
    }
    if !(f.pdb_ms > 0.0) {
        out.push(Violation::new("xr_flow.pdb_ms", "must be > 0"));
    }
    f.frame_size.check("xr_flow.frame_size", &mut out);
    f.jitter.check("xr_flow.jitter", &mut out);
    let implied = f.mean_rate_mbps();
    if !(f.sdr_mbps > 0.0) || (implied - f.sdr_mbps).abs() > 1e-3 * f.sdr_mbps {
        out.push(Violation::new(
            "xr_flow.sdr_mbps",
            format!("frame_size.mean*8*fps = {implied:.4} Mbps does not match sdr_mbps = {}", f.sdr_mbps),
        ));
    }
    if f.fps > 0.0 && (f.jitter.max - f.jitter.min) >= 1000.0 / f.fps {
        out.push(Violation::new("xr_flow.jitter", "jitter range must be shorter than the frame period"));
    }

    let s = &c.scheduler;
    if s.w_xr < 1 {
        out.push(Violation::new("scheduler.w_xr", "must be >= 1"));
    }
    if s.w_embb < 1 {
        out.push(Violation::new("scheduler.w_embb", "must be >= 1"));
    }
    if s.rbg_size_prb < 1 || s.rbg_size_prb > c.n_prb {
        out.push(Violation::new("scheduler.rbg_size_prb", "must be in [1, n_prb]"));
    }
    if s.harq_processes < 1 {
        out.push(Violation::new("scheduler.harq_processes", "must be >= 1"));
    }

    let h = &c.harq;
    if !(1..=8).contains(&h.n_cbg_per_tb) {
        out.push(Violation::new("harq.n_cbg_per_tb", "must be in [1, 8]"));
    }
    if h.target_failed_cbg < 1 || h.target_failed_cbg >= h.n_cbg_per_tb {
        out.push(Violation::new("harq.target_failed_cbg", "must be in [1, n_cbg_per_tb)"));
    }
    if h.cbg_max_bits < 1 {
        out.push(Violation::new("harq.cbg_max_bits", "must be >= 1"));
    }

    let slot_ms = 1.0 / (c.scs_khz / 15.0);
    if !(c.cqi_period_ms > 0.0) || c.scs_khz <= 0.0 || ((c.cqi_period_ms / slot_ms).round() * slot_ms - c.cqi_period_ms).abs() > 1e-9 {
        out.push(Violation::new("cqi_period_ms", "must be a positive multiple of the slot duration"));
    }

    let la = &c.link_adaptation;
    if !(la.cqi_quant_db > 0.0) {
        out.push(Violation::new("link_adaptation.cqi_quant_db", "must be > 0"));
    }
    if !(la.olla_step_down_db > 0.0) {
        out.push(Violation::new("link_adaptation.olla_step_down_db", "must be > 0"));
    }
    if !(la.olla_offset_limit_db > 0.0) {
        out.push(Violation::new("link_adaptation.olla_offset_limit_db", "must be > 0"));
    }
    if !la.mcs_gap_db.is_finite() {
        out.push(Violation::new("link_adaptation.mcs_gap_db", "must be finite"));
    }

    let cal = &c.calibration;
    if !cal.beamforming_gain_db.is_finite() {
        out.push(Violation::new("calibration.beamforming_gain_db", "must be finite"));
    }
    if !(cal.shadowing_std_db >= 0.0) {
        out.push(Violation::new("calibration.shadowing_std_db", "must be >= 0"));
    }
    if !(cal.fading_std_db >= 0.0) {
        out.push(Violation::new("calibration.fading_std_db", "must be >= 0"));
    }
    if !(cal.blep_slope > 0.0) {
        out.push(Violation::new("calibration.blep_slope", "must be > 0"));
    }

    if !(c.sim_duration_s > 0.0) {
        out.push(Violation::new("sim_duration_s", "must be > 0"));
    }
    if !(c.drain_ms >= 0.0) {
        out.push(Violation::new("drain_ms", "must be >= 0"));
    }
    if c.n_runs < 1 {
        out.push(Violation::new("n_runs", "must be >= 1"));
    }
    out
}

impl ScenarioConfig {
    /// Flattened `(dotted.key, value)` pairs in declaration order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &value, &mut out);
        out
    }

    /// Serializes into the config file grammar; every field is written.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Applies `key=value` overrides and validates the result.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, overrides: &[(K, V)]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for (k, v) in overrides {
            set_path(&mut tree, k.as_ref().trim(), v.as_ref())?;
        }
        let cfg: ScenarioConfig = serde_json::from_value(tree)
            .map_err(|e| ConfigError::InvalidValue { key: "<config>".into(), message: e.to_string() })?;
        let violations = validate(&cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Validation(violations))
        }
    }

    pub fn slot_duration_ms(&self) -> f64 {
        15.0 / self.scs_khz
    }

    pub fn symbol_duration_ms(&self) -> f64 {
        self.slot_duration_ms() / self.symbols_per_slot as f64
    }

    pub fn rbg_layout(&self) -> crate::mac::RbgLayout {
        crate::mac::RbgLayout::new(self.n_prb, self.scheduler.rbg_size_prb)
    }

    pub fn n_rbg(&self) -> usize {
        self.rbg_layout().n_rbg()
    }

    pub fn measurement_slots(&self) -> u64 {
        (self.sim_duration_s * 1000.0 / self.slot_duration_ms() - 1e-9).ceil() as u64
    }

    pub fn cqi_period_slots(&self) -> u64 {
        (self.cqi_period_ms / self.slot_duration_ms()).round().max(1.0) as u64
    }
}

/// Parses `key = value` text into ordered pairs. Does not look at the keys.
pub fn parse_assignments(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(ConfigError::Parse { line: line_no, message: format!("bad key `{k}`") });
        }
        if !seen.insert(k.to_string()) {
            return Err(ConfigError::Parse { line: line_no, message: format!("duplicate key `{k}`") });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses config text on top of [`default_scenario`].
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let pairs = parse_assignments(text)?;
    default_scenario().with_overrides(&pairs)
}

/// Loads a config file; the file overrides defaults field by field.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse { line: 0, message: format!("override `{s}` is not key=value") })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn set_path(tree: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        };
    }
    let invalid = |message: String| ConfigError::InvalidValue { key: key.to_string(), message };
    let raw = raw.trim();
    let new = match node {
        Value::Object(_) | Value::Array(_) | Value::Null => {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        Value::String(_) => Value::String(unquote(raw).to_string()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| invalid(format!("`{raw}` is not a boolean")))?),
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                if n.is_u64() {
                    let x: u64 = raw.parse().map_err(|_| invalid(format!("`{raw}` is not a non-negative integer")))?;
                    Value::from(x)
                } else {
                    let x: i64 = raw.parse().map_err(|_| invalid(format!("`{raw}` is not an integer")))?;
                    Value::from(x)
                }
            } else {
                let x: f64 = raw.parse().map_err(|_| invalid(format!("`{raw}` is not a number")))?;
                if !x.is_finite() {
                    return Err(invalid(format!("`{raw}` is not finite")));
                }
                Value::from(x)
            }
        }
    };
    *node = new;
    Ok(())
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(s)
}
