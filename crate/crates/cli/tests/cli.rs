use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn oirs(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oirs"));
    cmd.args(args).env_remove("OIRS_OUT_DIR");
    if let Some(dir) = out_dir {
        cmd.env("OIRS_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

const SMALL: [&str; 4] = ["--set", "scene.oirs.count=6", "--snr", "20:30:80"];

#[test]
fn help_exits_cleanly() {
    let o = oirs(&["--help"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("sweep-snr"));
}

#[test]
fn power_reference_budget() {
    let o = oirs(&["power", "--amax", "1.6,1.4,0.7,1.0", "--atotal", "4"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("A* = (1.15,1.15,0.7,1)"), "{}", stdout(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = oirs(&["sweep-snr", "--config", "/nonexistent/scene.json"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn malformed_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = oirs(&["sweep-snr", "--set", "lip.max_inner"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("key=value"));
}

#[test]
fn unknown_verb_is_rejected() {
    let o = oirs(&["plot"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_oracle_prints_the_bound() {
    let o = oirs(&["oracle", "--elements", "9", "--leds", "3", "--pds", "3"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(3*3+1)^9"), "{}", stderr(&o));
}

#[test]
fn chi_curve_plateau_and_units() {
    let dir = tempfile::tempdir().unwrap();
    let nats = dir.path().join("chi.csv");
    let bits = dir.path().join("chi_bits.csv");
    let n = nats.to_str().unwrap();
    let b = bits.to_str().unwrap();
    assert!(oirs(&["chi-curve", "--nt", "4", "--out", n], None).status.success());
    assert!(oirs(&["chi-curve", "--nt", "4", "--unit", "bits", "--out", b], None).status.success());
    let text = fs::read_to_string(&nats).unwrap();
    let alphas: Vec<f64> = column(&text, "alpha").iter().map(|s| s.parse().unwrap()).collect();
    let chis = column(&text, "chi_nats");
    assert_eq!(alphas.len(), 20);
    let plateau: Vec<&String> = alphas.iter().zip(&chis).filter(|(a, _)| **a >= 0.5).map(|(_, c)| c).collect();
    assert!(plateau.windows(2).all(|w| w[0] == w[1]));
    let in_bits = column(&fs::read_to_string(&bits).unwrap(), "chi_bits");
    for (x, y) in chis.iter().zip(&in_bits) {
        let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        assert!((x / std::f64::consts::LN_2 - y).abs() <= 1e-10 * x.abs().max(1.0));
    }
}

#[test]
fn sweep_is_reproducible_and_writes_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let mut args = vec!["sweep-snr", "--case", "II", "--alpha", "0.5", "--out", out.to_str().unwrap()];
        args.extend(SMALL);
        let o = oirs(&args, None);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().filter(|l| l.contains("dB")).count(), 5);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("scheme,case,alpha,snr_db,n_elements,capacity_lower_nats"));
    assert_eq!(text.lines().count(), 1 + 5 * 3);
    assert!(column(&text, "case").iter().all(|c| c == "II"));
    assert!(column(&text, "capacity_upper_nats").iter().all(|c| c.is_empty()));

    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.csv.config.json")).unwrap()).unwrap();
    assert_eq!(side["case"], "II");
    assert_eq!(side["scene"]["oirs"]["count"], 6);
    assert_eq!(side["snr_db"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scene.json");
    fs::write(&cfg, r#"{"scene": {"oirs": {"count": 4}}, "schemes": ["greedy", "no_oirs"], "snr_db": [30, 60]}"#).unwrap();
    let o = oirs(&["sweep-snr", "--config", cfg.to_str().unwrap(), "--unit", "bits"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep-snr.csv")).unwrap();
    assert!(text.lines().next().unwrap().contains("capacity_lower_bits"));
    assert_eq!(column(&text, "scheme"), ["greedy", "greedy", "no_oirs", "no_oirs"]);
    assert!(dir.path().join("sweep-snr.csv.config.json").is_file());
}

#[test]
fn element_sweep_grows() {
    let dir = tempfile::tempdir().unwrap();
    let o = oirs(
        &["sweep-n", "--counts", "0,8,16", "--set", "schemes=[\"proposed2\"]", "--at", "40"],
        Some(dir.path()),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep-n.csv")).unwrap();
    let caps: Vec<f64> = column(&text, "capacity_lower_nats").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(caps.len(), 3);
    assert!(caps.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn small_oracle_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = oirs(&["oracle", "--seeds", "5"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("/5 seeds"));
    let text = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    let gaps: Vec<f64> = column(&text, "ldao_gap_nats").iter().map(|s| s.parse().unwrap()).collect();
    assert!(gaps.iter().all(|g| *g >= -1e-9));
}

#[test]
fn simulate_prints_complexity_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = oirs(&["simulate", "--at", "40", "--set", "scene.oirs.count=6", "--timing"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("O(I2NNtNr)"));
    assert!(out.contains("O(I1(2Nr^2Nt+2Nt^2Nr+Nt^3+NNtNr))"));
}
