use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SHORT: [&str; 6] = ["--set", "sim_duration_s=0.3", "--set", "warmup_slots=100", "--runs", "1"];

fn xrsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrsim")).args(args).output().unwrap()
}

fn presets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn unknown_override_exits_2_and_names_the_key() {
    let out = xrsim(&["run", "--set", "xr_flow.bogus=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xr_flow.bogus"));
}

#[test]
fn invalid_value_exits_2() {
    let out = xrsim(&["run", "--set", "n_prb=0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_3() {
    let out = xrsim(&["run", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn report_on_empty_dir_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xrsim(&["report", "--input", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn capacity_needs_contiguous_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xrsim(&["capacity", "--n-xr", "1,3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_mcs_prints_the_table() {
    let out = xrsim(&["dump-mcs"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 29);
    assert!(text.lines().last().unwrap().contains("7.4063"));
}

#[test]
fn every_preset_loads() {
    let mut n = 0;
    for entry in fs::read_dir(presets_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "cfg") {
            xrsim::config::load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn run_writes_results_and_parallel_matches_serial() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ["run", "--set", "sim_duration_s=0.3", "--set", "warmup_slots=100", "--runs", "2", "--seed", "5"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(xrsim(&[&base[..], &["--out", a.to_str().unwrap()]].concat()).status.success());
    assert!(xrsim(&[&base[..], &["--parallel", "--out", b.to_str().unwrap()]].concat()).status.success());
    for f in ["frames.csv", "ues.csv", "summary.json", "config.cfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(header(&a.join("frames.csv")).contains("latency_ms"));
    assert!(header(&a.join("ues.csv")).contains("throughput_mbps"));
    // The resolved config reloads to the same scenario.
    let cfg = xrsim::config::load_config(a.join("config.cfg")).unwrap();
    assert_eq!(cfg.sim_duration_s, 0.3);
}

#[test]
fn capacity_then_report_emits_figure_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cap");
    let d = dir.to_str().unwrap();
    let args = [&["capacity", "--n-xr", "1..2", "--sdr", "30,45", "--embb", "off,on", "--out", d][..], &SHORT[..]].concat();
    let out = xrsim(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["points.json", "points.csv", "capacity.csv", "capacity_loss.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(dir.join("capacity.csv")).unwrap().lines().count(), 1 + 2 * 2 * 5);

    let fig = tmp.path().join("fig");
    assert!(xrsim(&["report", "--input", d, "--out", fig.to_str().unwrap()]).status.success());
    let expect = [
        ("fig3_capacity_vs_pdb.csv", "capacity_ue_per_cell"),
        ("fig4_capacity_loss.csv", "capacity_loss_pct"),
        ("fig4_delay_p99.csv", "xr_latency_p99_ms"),
        ("fig5_prb_utilization.csv", "prb_utilization_mean"),
        ("fig6_sinr_ecdf.csv", "sinr_with_embb_db"),
        ("fig6_median_shift.csv", "median_shift_db"),
        ("fig7_embb_throughput.csv", "embb_cell_throughput_mean_mbps"),
        ("fig8_embb_throughput_ecdf.csv", "embb_ue_throughput_mbps"),
    ];
    for (f, col) in expect {
        let h = header(&fig.join(f));
        assert!(h.contains(col), "{f}: {h}");
    }
    // Two loads, two SDRs: one SINR pair each, 101 percentiles per pair.
    assert_eq!(fs::read_to_string(fig.join("fig6_sinr_ecdf.csv")).unwrap().lines().count(), 1 + 4 * 101);
    assert_eq!(fs::read_to_string(fig.join("fig6_median_shift.csv")).unwrap().lines().count(), 1 + 4);
}
