use std::path::Path;
use std::process::{Command, Output};

fn evcharge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evcharge")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_MATRIX: &str = "replications = 2\nroot_seed = 7\n\
    [[experiment]]\nid = 1\nevs = 6\nfcc = 2\nscc = 0\nstrategy = \"FCFS\"\n\
    [[experiment]]\nid = 2\nevs = 6\nfcc = 0\nscc = 2\nstrategy = \"SHRD\"\n";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn show_config_prints_defaults_and_applies_overrides() {
    let o = evcharge(&["show-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("es_cap_watts = 1000000.0"));
    assert!(text.contains("handshake_s = 32.0"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "handshake_s = 10.0\n");
    let o = evcharge(&["show-config", "--config", &cfg]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("handshake_s = 10.0"));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.toml", SMALL_MATRIX);
    let prices = write(dir.path(), "p.csv", "time_s,value\n0,0.2\n43200,0.4\n");
    let pv = write(dir.path(), "pv.csv", "time_s,value\n0,0\n28800,50000\n57600,0\n");
    let out = dir.path().join("out");
    let o = evcharge(&[
        "run", "--matrix", &matrix, "--out", out.to_str().unwrap(), "--prices", &prices, "--pv", &pv, "--traces",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["ttr.csv", "utilization.csv", "es_power_bins.csv", "summary.csv", "prices.csv", "pv.csv", "matrix.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let grants = std::fs::read_to_string(out.join("runs/exp1/rep0/grants.csv")).unwrap();
    assert!(grants.starts_with("request_id,column,ev,watts,t_req,t_grant_or_cancel,state"));

    let figs = dir.path().join("figs");
    let o = evcharge(&["report", "--in", out.to_str().unwrap(), "--out", figs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["ttr_cdf_fcc.svg", "ttr_cdf_scc.svg", "utilization.svg", "es_power_box_6ev.svg", "grid_pv_price.svg"] {
        assert!(figs.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn seed_override_changes_results_and_reruns_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write(dir.path(), "m.toml", SMALL_MATRIX);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = evcharge(&["run", "--matrix", &matrix, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("ttr.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "1"));
    assert_ne!(run("a", "1"), run("c", "2"));
}

#[test]
fn errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();

    let o = evcharge(&["run", "--matrix", "/no/such/matrix.toml", "--out", out]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[input]"));

    let o = evcharge(&["run", "--reps", "1", "--horizon", "100", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[config]"));

    let bad = write(dir.path(), "bad.toml", "no_such_field = 1\n");
    let o = evcharge(&["show-config", "--config", &bad]);
    assert_eq!(o.status.code(), Some(3));

    let o = evcharge(&["validate", "--dt", "7", "--evs", "2", "--exact"]);
    assert_eq!(o.status.code(), Some(3));

    let o = evcharge(&["report", "--in", "/no/such/dir", "--out", out]);
    assert_eq!(o.status.code(), Some(4));

    let o = evcharge(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_within_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = evcharge(&["validate", "--dt", "1", "--evs", "3", "--fcc", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("within bounds"));
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
