//! Command-line front end: single runs, load sweeps, capacity search and
//! figure-data export.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{default_scenario, load_config, parse_override, ConfigError, ScenarioConfig};
use crate::deployment::LayoutError;
use crate::engine::{run_campaign, run_point, RunResult, SweepPoint};
use crate::kpi::{
    binomial_ci, capacity_loss, ecdf, frame_latency_ms, is_satisfied, mean_std, percentile, xr_capacity, PointSummary,
};
use crate::mac::TrafficClass;
use crate::phy::McsTable;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid sweep plan: {0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: malformed result file: {message}")]
    BadInput { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) | CliError::Io { .. } | CliError::BadInput { .. } => EXIT_IO,
            CliError::Config(_) | CliError::Layout(_) | CliError::Plan(_) => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "xrsim", version, about = "Multi-cell 5G NR downlink simulator for XR and eMBB traffic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario for `--runs` seeds and write per-frame and per-UE results.
    Run(CommonArgs),
    /// Sweep XR load, SDR and eMBB presence; write one summary per point.
    Sweep(PlanArgs),
    /// Like `sweep`, then derive XR capacity and capacity loss per PDB.
    Capacity(PlanArgs),
    /// Turn a sweep or capacity result directory into figure data.
    Report(ReportArgs),
    /// Print the MCS table as CSV.
    DumpMcs(DumpMcsArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Base seed; run i uses seed + i. Defaults to `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runs per scenario. Defaults to `n_runs`.
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Execute independent runs on all cores. Results are identical either way.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// XR UEs per cell, `a..b` (inclusive) or a comma list.
    #[arg(long = "n-xr", default_value = "1..8")]
    pub n_xr: String,
    /// Delay budgets to evaluate, ms.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,30")]
    pub pdb: Vec<f64>,
    /// XR source data rates, Mbps.
    #[arg(long, value_delimiter = ',', default_value = "30,45")]
    pub sdr: Vec<f64>,
    /// eMBB presence: `on`, `off` or both.
    #[arg(long, value_delimiter = ',', default_value = "off,on")]
    pub embb: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `sweep` or `capacity`.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpMcsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(p) => cmd_sweep(p, false),
        Command::Capacity(p) => cmd_sweep(p, true),
        Command::Report(r) => cmd_report(&r.input, r.out.as_deref().unwrap_or(&r.input)),
        Command::DumpMcs(a) => cmd_dump_mcs(a),
    }
}

fn resolve_config(path: Option<&Path>, set: &[String]) -> Result<ScenarioConfig, CliError> {
    let base = match path {
        Some(p) => load_config(p)?,
        None => default_scenario(),
    };
    let overrides = set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(base.with_overrides(&overrides)?)
}

fn resolve_common(a: &CommonArgs) -> Result<(ScenarioConfig, u64), CliError> {
    let mut c = resolve_config(a.config.as_deref(), &a.set)?;
    if let Some(r) = a.runs {
        c = c.with_overrides(&[("n_runs", r.to_string())])?;
    }
    let seed = a.seed.unwrap_or(c.rng_seed);
    Ok((c, seed))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn class_name(c: TrafficClass) -> &'static str {
    match c {
        TrafficClass::Xr => "xr",
        TrafficClass::Embb => "embb",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn cmd_run(a: &CommonArgs) -> Result<(), CliError> {
    let (c, seed) = resolve_common(a)?;
    let runs = run_campaign(&c, c.n_runs, seed, a.parallel)?;
    create_dir(&a.out)?;
    write_run_outputs(&a.out, &c, seed, &runs)
}

/// Writes `config.cfg`, `frames.csv`, `ues.csv` and `summary.json`.
pub fn write_run_outputs(dir: &Path, c: &ScenarioConfig, base_seed: u64, runs: &[RunResult]) -> Result<(), CliError> {
    let pdb = c.xr_flow.pdb_ms;
    fs::write(dir.join("config.cfg"), c.to_config_string()).map_err(io_err(&dir.join("config.cfg")))?;

    write_file(&dir.join("frames.csv"), |w| {
        writeln!(w, "seed,ue_id,seq,gen_time_ms,arrival_time_ms,completion_time_ms,latency_ms,size_bits")?;
        for r in runs {
            for f in &r.frames {
                let lat = frame_latency_ms(f, c.xr_flow.latency_clock);
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    r.seed,
                    f.ue_id,
                    f.seq,
                    f.gen_time_ms,
                    f.arrival_time_ms,
                    fmt_opt(f.completion_time_ms),
                    fmt_opt(lat.is_finite().then_some(lat)),
                    f.size_bits
                )?;
            }
        }
        Ok(())
    })?;

    write_file(&dir.join("ues.csv"), |w| {
        writeln!(w, "seed,ue_id,class,cell,n_frames,n_on_time,satisfied,throughput_mbps,sinr_median_db")?;
        for r in runs {
            for u in &r.ues {
                let (on, sat) = if u.n_frames() > 0 {
                    (u.n_on_time(pdb).to_string(), is_satisfied(u, pdb).to_string())
                } else {
                    (String::new(), String::new())
                };
                let sinr: Vec<f64> = u.sinr_db.iter().map(|&x| x as f64).collect();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.seed,
                    u.ue_id,
                    class_name(u.class),
                    u.cell,
                    u.n_frames(),
                    on,
                    sat,
                    u.throughput_mbps,
                    fmt_opt(percentile(&sinr, 0.5).ok())
                )?;
            }
        }
        Ok(())
    })?;

    let point = PointSummary::from_runs(c.xr_flow.sdr_mbps, c.n_embb_ue_per_cell > 0, c.n_xr_ue_per_cell, &[pdb], runs);
    let per_run: Vec<_> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "seed": r.seed,
                "prb_utilization": r.prb_utilization(),
                "embb_cell_throughput_mbps": r.embb_cell_throughput_mbps(),
                "harq": r.harq,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "base_seed": base_seed,
        "window_ms": runs.first().map(|r| r.window_ms),
        "summary": point,
        "runs": per_run,
    });
    write_json(&dir.join("summary.json"), &summary)
}

/// Sweep axes; the simulated points are the product of SDR, eMBB and load.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub n_xr: Vec<u32>,
    pub pdbs_ms: Vec<f64>,
    pub sdrs_mbps: Vec<f64>,
    pub embb: Vec<bool>,
}

impl ExperimentPlan {
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &sdr_mbps in &self.sdrs_mbps {
            for &embb in &self.embb {
                for &n_xr_per_cell in &self.n_xr {
                    out.push(SweepPoint { sdr_mbps, embb, n_xr_per_cell });
                }
            }
        }
        out
    }

    fn from_args(p: &PlanArgs) -> Result<Self, CliError> {
        let embb = p
            .embb
            .iter()
            .map(|s| match s.trim() {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                other => Err(CliError::Plan(format!("--embb expects on/off, got `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let plan = Self { n_xr: parse_n_range(&p.n_xr)?, pdbs_ms: p.pdb.clone(), sdrs_mbps: p.sdr.clone(), embb };
        if plan.pdbs_ms.is_empty() || plan.sdrs_mbps.is_empty() || plan.embb.is_empty() {
            return Err(CliError::Plan("every sweep axis needs at least one value".into()));
        }
        if plan.pdbs_ms.iter().chain(&plan.sdrs_mbps).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::Plan("PDB and SDR values must be positive".into()));
        }
        Ok(plan)
    }
}

/// `"3..7"` (inclusive) or `"1,2,4"`.
pub fn parse_n_range(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::Plan(format!("bad XR load list `{s}`"));
    let mut v: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    v.sort_unstable();
    v.dedup();
    if v.is_empty() {
        return Err(bad());
    }
    Ok(v)
}

pub fn cmd_sweep(p: &PlanArgs, capacity: bool) -> Result<(), CliError> {
    let (c, seed) = resolve_common(&p.common)?;
    let plan = ExperimentPlan::from_args(p)?;
    if capacity && plan.n_xr.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(CliError::Plan("capacity search needs a contiguous XR load range".into()));
    }
    let points = plan.points();
    // Runs inside a point stay sequential; points are the parallel unit.
    let eval = |pt: &SweepPoint| run_point(&c, *pt, &plan.pdbs_ms, seed, false);
    let summaries: Vec<PointSummary> = if p.common.parallel {
        points.par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        points.iter().map(eval).collect::<Result<_, _>>()?
    };
    let dir = &p.common.out;
    create_dir(dir)?;
    fs::write(dir.join("config.cfg"), c.to_config_string()).map_err(io_err(&dir.join("config.cfg")))?;
    write_json(&dir.join("points.json"), &summaries)?;
    write_points_csv(&dir.join("points.csv"), &summaries)?;
    if capacity {
        write_capacity_csvs(dir, &summaries)?;
    }
    Ok(())
}

fn write_points_csv(path: &Path, pts: &[PointSummary]) -> Result<(), CliError> {
    write_file(path, |w| {
        writeln!(
            w,
            "sdr_mbps,embb,n_xr_per_cell,pdb_ms,satisfied_ues,xr_ues,satisfied_fraction,ci99_half_width,\
             xr_latency_p99_ms,prb_utilization,embb_cell_throughput_mbps,xr_sinr_median_db"
        )?;
        for p in pts {
            for &(pdb, sat, tot) in &p.satisfaction {
                let (frac, ci) = if tot > 0 {
                    let f = sat as f64 / tot as f64;
                    (Some(f), Some(binomial_ci(tot as u64, f, 0.99)))
                } else {
                    (None, None)
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    p.sdr_mbps,
                    p.embb,
                    p.n_xr_per_cell,
                    pdb,
                    sat,
                    tot,
                    fmt_opt(frac),
                    fmt_opt(ci),
                    fmt_opt(p.xr_latency_p99_ms),
                    p.mean_prb_utilization(),
                    p.mean_embb_cell_throughput_mbps(),
                    fmt_opt(p.xr_sinr_median_db())
                )?;
            }
        }
        Ok(())
    })
}

type GroupKey = (u64, bool);

fn group_by_scenario(pts: &[PointSummary]) -> BTreeMap<GroupKey, Vec<&PointSummary>> {
    let mut m: BTreeMap<GroupKey, Vec<&PointSummary>> = BTreeMap::new();
    for p in pts {
        m.entry((p.sdr_mbps.to_bits(), p.embb)).or_default().push(p);
    }
    for v in m.values_mut() {
        v.sort_by_key(|p| p.n_xr_per_cell);
    }
    m
}

fn pdbs_of(pts: &[PointSummary]) -> Vec<f64> {
    let mut v: Vec<f64> = pts.iter().flat_map(|p| p.satisfaction.iter().map(|s| s.0)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// XR capacity per `(sdr, embb, pdb)`.
pub fn capacities(pts: &[PointSummary]) -> Vec<(f64, bool, f64, u32)> {
    let mut out = Vec::new();
    for ((sdr_bits, embb), group) in group_by_scenario(pts) {
        for pdb in pdbs_of(pts) {
            let fr: Vec<(u32, f64)> =
                group.iter().filter_map(|p| p.satisfied_fraction(pdb).map(|f| (p.n_xr_per_cell, f))).collect();
            out.push((f64::from_bits(sdr_bits), embb, pdb, xr_capacity(&fr).capacity));
        }
    }
    out
}

fn write_capacity_csvs(dir: &Path, pts: &[PointSummary]) -> Result<(), CliError> {
    let caps = capacities(pts);
    write_file(&dir.join("capacity.csv"), |w| {
        writeln!(w, "sdr_mbps,embb,pdb_ms,capacity_ue_per_cell")?;
        for (sdr, embb, pdb, cap) in &caps {
            writeln!(w, "{sdr},{embb},{pdb},{cap}")?;
        }
        Ok(())
    })?;
    write_file(&dir.join("capacity_loss.csv"), |w| {
        writeln!(w, "sdr_mbps,pdb_ms,capacity_without_embb_ue_per_cell,capacity_with_embb_ue_per_cell,capacity_loss_pct")?;
        for (sdr, _, pdb, without) in caps.iter().filter(|c| !c.1) {
            if let Some((.., with)) = caps.iter().find(|c| c.0 == *sdr && c.1 && c.2 == *pdb) {
                let loss = capacity_loss(*without, *with).map(|l| l * 100.0);
                writeln!(w, "{sdr},{pdb},{without},{with},{}", fmt_opt(loss))?;
            }
        }
        Ok(())
    })
}

pub fn read_points(dir: &Path) -> Result<Vec<PointSummary>, CliError> {
    let path = dir.join("points.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::BadInput { path: path.display().to_string(), message: e.to_string() })
}

/// Writes one CSV per figure into `out` from the sweep in `input`.
pub fn cmd_report(input: &Path, out: &Path) -> Result<(), CliError> {
    let pts = read_points(input)?;
    create_dir(out)?;
    let groups = group_by_scenario(&pts);
    let caps = capacities(&pts);

    write_file(&out.join("fig3_capacity_vs_pdb.csv"), |w| {
        writeln!(w, "sdr_mbps,embb,pdb_ms,capacity_ue_per_cell")?;
        for (sdr, embb, pdb, cap) in &caps {
            writeln!(w, "{sdr},{embb},{pdb},{cap}")?;
        }
        Ok(())
    })?;
    write_capacity_csvs(out, &pts)?;
    fs::rename(out.join("capacity_loss.csv"), out.join("fig4_capacity_loss.csv"))
        .map_err(io_err(&out.join("fig4_capacity_loss.csv")))?;
    fs::remove_file(out.join("capacity.csv")).map_err(io_err(&out.join("capacity.csv")))?;

    write_file(&out.join("fig4_delay_p99.csv"), |w| {
        writeln!(w, "sdr_mbps,embb,n_xr_per_cell,xr_latency_p99_ms")?;
        for g in groups.values() {
            for p in g {
                writeln!(w, "{},{},{},{}", p.sdr_mbps, p.embb, p.n_xr_per_cell, fmt_opt(p.xr_latency_p99_ms))?;
            }
        }
        Ok(())
    })?;

    write_file(&out.join("fig5_prb_utilization.csv"), |w| {
        writeln!(w, "sdr_mbps,embb,n_xr_per_cell,prb_utilization_mean,prb_utilization_std")?;
        for g in groups.values() {
            for p in g {
                let (m, s) = mean_std(&p.prb_utilization_per_run);
                writeln!(w, "{},{},{},{m},{s}", p.sdr_mbps, p.embb, p.n_xr_per_cell)?;
            }
        }
        Ok(())
    })?;

    // SINR distributions of loads simulated both with and without eMBB.
    let pairs: Vec<(&PointSummary, &PointSummary)> = pts
        .iter()
        .filter(|p| !p.embb && !p.xr_sinr_percentiles_db.is_empty())
        .filter_map(|a| {
            pts.iter()
                .find(|b| b.embb && b.sdr_mbps == a.sdr_mbps && b.n_xr_per_cell == a.n_xr_per_cell)
                .filter(|b| !b.xr_sinr_percentiles_db.is_empty())
                .map(|b| (a, b))
        })
        .collect();
    write_file(&out.join("fig6_sinr_ecdf.csv"), |w| {
        writeln!(w, "sdr_mbps,n_xr_per_cell,cdf,sinr_xr_only_db,sinr_with_embb_db")?;
        for (a, b) in &pairs {
            for (i, (x, y)) in a.xr_sinr_percentiles_db.iter().zip(&b.xr_sinr_percentiles_db).enumerate() {
                writeln!(w, "{},{},{},{x},{y}", a.sdr_mbps, a.n_xr_per_cell, i as f64 / 100.0)?;
            }
        }
        Ok(())
    })?;
    write_file(&out.join("fig6_median_shift.csv"), |w| {
        writeln!(
            w,
            "sdr_mbps,n_xr_per_cell,median_sinr_xr_only_db,median_sinr_with_embb_db,median_shift_db,prb_utilization_xr_only"
        )?;
        for (a, b) in &pairs {
            let (ma, mb) = (a.xr_sinr_median_db().unwrap(), b.xr_sinr_median_db().unwrap());
            writeln!(w, "{},{},{ma},{mb},{},{}", a.sdr_mbps, a.n_xr_per_cell, ma - mb, a.mean_prb_utilization())?;
        }
        Ok(())
    })?;

    write_file(&out.join("fig7_embb_throughput.csv"), |w| {
        writeln!(
            w,
            "sdr_mbps,n_xr_per_cell,embb_cell_throughput_mean_mbps,embb_cell_throughput_std_mbps,\
             embb_cell_throughput_min_mbps,embb_cell_throughput_max_mbps"
        )?;
        for p in pts.iter().filter(|p| p.embb) {
            let v = &p.embb_cell_throughput_per_run_mbps;
            let (m, s) = mean_std(v);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            writeln!(w, "{},{},{m},{s},{lo},{hi}", p.sdr_mbps, p.n_xr_per_cell)?;
        }
        Ok(())
    })?;

    write_file(&out.join("fig8_embb_throughput_ecdf.csv"), |w| {
        writeln!(w, "sdr_mbps,n_xr_per_cell,embb_ue_throughput_mbps,cdf")?;
        for p in pts.iter().filter(|p| p.embb) {
            for (x, f) in ecdf(&p.embb_ue_throughput_mbps) {
                writeln!(w, "{},{},{x},{f}", p.sdr_mbps, p.n_xr_per_cell)?;
            }
        }
        Ok(())
    })
}

pub fn cmd_dump_mcs(a: &DumpMcsArgs) -> Result<(), CliError> {
    let c = resolve_config(a.config.as_deref(), &a.set)?;
    let table = McsTable::new(c.link_adaptation.mcs_gap_db);
    match &a.out {
        Some(p) => write_file(p, |w| table.write_csv(w)),
        None => {
            let stdout = io::stdout();
            table.write_csv(stdout.lock()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}
