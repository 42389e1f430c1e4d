use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use oirs_vlc::align_opt::{init_nearest, ldao_optimize, lip_optimize, objective_f1};
use oirs_vlc::harness::{
    alpha_grid, chi_curve, chi_curve_csv, complexity_report, exhaustive_oracle, random_instance, records_to_csv,
    scene_channels, snr_grid, sweep_elements, sweep_snr, ExperimentConfig, ExperimentOutput, Unit, ORACLE_LIMIT,
};
use oirs_vlc::power_opt::allocate;
use oirs_vlc::{CapacityCase, NoiseModel, PowerBudget};

/// Environment variable naming the default output directory.
const OUT_DIR_VAR: &str = "OIRS_OUT_DIR";

#[derive(Parser)]
#[command(name = "oirs", version, about = "Optical-IRS MIMO VLC capacity experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// All schemes on the configured scene at one SNR, with a complexity table.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// SNR in dB (defaults to the first grid point).
        #[arg(long = "at", allow_negative_numbers = true)]
        at: Option<f64>,
    },
    /// All schemes over an SNR grid.
    SweepSnr {
        #[command(flatten)]
        common: Common,
    },
    /// All schemes over the configured element counts at one SNR.
    SweepN {
        #[command(flatten)]
        common: Common,
        /// SNR in dB.
        #[arg(long = "at", default_value_t = 40.0, allow_negative_numbers = true)]
        at: f64,
        /// Comma separated element counts (overrides the config).
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// chi(alpha) on an even grid of (0, 1].
    ChiCurve {
        #[command(flatten)]
        common: Common,
        /// Number of transmitters (defaults to the configured LED count).
        #[arg(long)]
        nt: Option<usize>,
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Compares the corner search and barrier solvers with exhaustive search
    /// on random small scenes.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 4)]
        elements: usize,
        #[arg(long, default_value_t = 2)]
        leds: usize,
        #[arg(long, default_value_t = 2)]
        pds: usize,
    },
    /// Optimal LED intensities for a peak and total budget.
    Power {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config. Missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file. Defaults to `<verb>.csv` in $OIRS_OUT_DIR or the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `--set lip.max_inner=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "nats")]
    unit: Unit,
    /// Capacity case: I, II or III.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Inclusive SNR grid `start:step:stop` in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// Comma separated per-LED peak intensities.
    #[arg(long, value_delimiter = ',')]
    amax: Option<Vec<f64>>,
    #[arg(long)]
    atotal: Option<f64>,
    /// Record solver wall times.
    #[arg(long)]
    timing: bool,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(msg.into())
}

fn parse_case(s: &str) -> anyhow::Result<CapacityCase> {
    match s.to_ascii_uppercase().as_str() {
        "I" | "1" => Ok(CapacityCase::CaseI),
        "II" | "2" => Ok(CapacityCase::CaseII),
        "III" | "3" => Ok(CapacityCase::CaseIII),
        _ => Err(usage(format!("unknown case `{s}`, expected I, II or III"))),
    }
}

fn parse_snr(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    match (parts.len(), nums) {
        (1, Ok(v)) => Ok(v),
        (3, Ok(v)) => snr_grid(v[0], v[1], v[2]).map_err(|e| usage(e.to_string())),
        _ => Err(usage(format!("malformed SNR grid `{s}`, expected start:step:stop"))),
    }
}

/// Sets `path` (dot separated) inside `root`. The value is read as JSON and
/// falls back to a plain string.
fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| usage(format!("malformed override `{assignment}`, expected key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = key.split('.').collect();
    for (depth, k) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(k.to_string(), value);
                    return Ok(());
                }
                map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = k.parse().map_err(|_| usage(format!("`{k}` in `{key}` is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| usage(format!("index {idx} in `{key}` is past the end ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(usage(format!("`{key}` does not name a config field"))),
        };
    }
    Ok(())
}

/// Overlays `patch` onto `base`, recursing into objects. An object whose
/// `layout` tag changes is replaced whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if p.get("layout").is_none_or(|t| b.get("layout") == Some(t)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn resolve_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    let file = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file {} not found", path.display())));
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    merge(&mut value, file);
    for assignment in &common.overrides {
        apply_override(&mut value, assignment)?;
    }
    let mut config: ExperimentConfig = serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))?;
    if let Some(case) = &common.case {
        config.case = parse_case(case)?;
    }
    if let Some(alpha) = common.alpha {
        config.alpha = alpha;
    }
    if let Some(snr) = &common.snr {
        config.snr_db = parse_snr(snr)?;
    }
    if let Some(amax) = &common.amax {
        config.power.a_max = amax.clone();
    }
    if let Some(total) = common.atotal {
        config.power.a_total = total;
    }
    config.timing |= common.timing;
    Ok(config)
}

fn output_path(common: &Common, verb: &str) -> PathBuf {
    match &common.out {
        Some(p) => p.clone(),
        None => {
            let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            dir.join(format!("{verb}.csv"))
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

fn write_outputs(out: &Path, csv: &str, config: &ExperimentConfig) -> anyhow::Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    let mut resolved = config.clone();
    resolved.output = Some(out.display().to_string());
    let json = serde_json::to_string_pretty(&resolved)?;
    let side = sidecar_path(out);
    fs::write(&side, json + "\n").with_context(|| format!("writing {}", side.display()))?;
    Ok(())
}

fn summarize(output: &ExperimentOutput, unit: Unit) {
    let mut seen = Vec::new();
    for r in output.records.iter().rev() {
        if seen.contains(&(r.scheme, r.n_elements)) {
            continue;
        }
        seen.push((r.scheme, r.n_elements));
    }
    seen.reverse();
    for (scheme, n) in seen {
        let Some(r) = output.records.iter().rev().find(|r| r.scheme == scheme && r.n_elements == n) else {
            continue;
        };
        let upper = r
            .capacity_upper
            .map(|u| format!("{:.4}", unit.convert(u)))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "{:<10} N={:<3} {:>5.1} dB  lower {:.4}  upper {}  asymptotic {:.4} {}  iterations {}{}",
            scheme.name(),
            n,
            r.snr_db,
            unit.convert(r.capacity_lower),
            upper,
            unit.convert(r.capacity_asymptotic),
            unit.suffix(),
            r.iterations,
            if r.warning { "  [iteration cap]" } else { "" }
        );
    }
}

fn finish(output: &ExperimentOutput, common: &Common, config: &ExperimentConfig, verb: &str) -> anyhow::Result<ExitCode> {
    let out = output_path(common, verb);
    write_outputs(&out, &records_to_csv(&output.records, common.unit), config)?;
    summarize(output, common.unit);
    println!("wrote {}", out.display());
    Ok(if output.has_warnings() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

/// Twelve significant digits without trailing zeros.
fn short(x: f64) -> String {
    let s = format!("{x:.11e}");
    let v: f64 = s.parse().unwrap_or(x);
    format!("{v}")
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.verb {
        Verb::Simulate { common, at } => {
            let mut config = resolve_config(&common)?;
            let snr = at.or_else(|| config.snr_db.first().copied()).ok_or_else(|| usage("empty SNR grid"))?;
            config.snr_db = vec![snr];
            let output = sweep_snr(&config).map_err(|e| usage(e.to_string()))?;
            let code = finish(&output, &common, &config, "simulate")?;
            print!("{}", complexity_report(&output.runs).to_table());
            Ok(code)
        }
        Verb::SweepSnr { common } => {
            let config = resolve_config(&common)?;
            let output = sweep_snr(&config).map_err(|e| usage(e.to_string()))?;
            finish(&output, &common, &config, "sweep-snr")
        }
        Verb::SweepN { common, at, counts } => {
            let mut config = resolve_config(&common)?;
            if let Some(c) = counts {
                config.element_counts = c;
            }
            config.snr_db = vec![at];
            let output = sweep_elements(&config, &config.element_counts, at).map_err(|e| usage(e.to_string()))?;
            finish(&output, &common, &config, "sweep-n")
        }
        Verb::ChiCurve { common, nt, points } => {
            let config = resolve_config(&common)?;
            if points == 0 {
                bail!(usage("--points must be positive"));
            }
            let n_t = nt.unwrap_or_else(|| config.power.n_leds());
            let curve = chi_curve(&alpha_grid(points), n_t).map_err(|e| usage(e.to_string()))?;
            let out = output_path(&common, "chi-curve");
            write_outputs(&out, &chi_curve_csv(&curve, common.unit), &config)?;
            let flat = curve.iter().filter(|(a, _)| *a >= 0.5).map(|(_, c)| *c).collect::<Vec<_>>();
            println!(
                "chi over {points} points for N_t = {n_t}: min {:.4} {u}, plateau {:.4} {u}",
                common.unit.convert(curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)),
                common.unit.convert(flat.first().copied().unwrap_or(f64::NAN)),
                u = common.unit.suffix()
            );
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Verb::Oracle {
            common,
            seeds,
            elements,
            leds,
            pds,
        } => {
            let config = resolve_config(&common)?;
            let candidates = ((leds * pds + 1) as f64).powi(elements as i32);
            if candidates > ORACLE_LIMIT {
                bail!(usage(format!(
                    "instance too large for exhaustive search: ({leds}*{pds}+1)^{elements} = {candidates:.3e} candidates exceeds {ORACLE_LIMIT:.0e}"
                )));
            }
            let mut csv = String::from("seed,oracle_f1_nats,ldao_f1_nats,lip_f1_nats,greedy_f1_nats,ldao_gap_nats\n");
            let mut hits = 0;
            let mut warnings = false;
            let started = Instant::now();
            for seed in config.seed..config.seed + seeds {
                let scene = random_instance(seed, elements, leds, pds, config.scene.room).map_err(|e| usage(e.to_string()))?;
                let set = scene_channels(&scene, &config.channel)?;
                let noise = NoiseModel::white(pds, 1.0)?;
                let (_, best) = exhaustive_oracle(&set.h1, &set.cascade, &noise)?;
                let init = init_nearest(&scene);
                let greedy = objective_f1(&set.h1, &set.cascade, &noise, &init)?;
                let ldao = ldao_optimize(&set.h1, &set.cascade, &noise, &init, &config.ldao)?;
                let lip = lip_optimize(&set.h1, &set.cascade, &noise, &init, &config.lip)?;
                warnings |= ldao.hit_cap || lip.hit_cap;
                let gap = best - ldao.objective;
                hits += usize::from(gap <= 1e-6);
                csv.push_str(&format!(
                    "{seed},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}\n",
                    best, ldao.objective, lip.objective, greedy, gap
                ));
            }
            let out = output_path(&common, "oracle");
            write_outputs(&out, &csv, &config)?;
            println!(
                "corner search matched exhaustive search on {hits}/{seeds} seeds ({candidates} candidates each, {:.2?})",
                started.elapsed()
            );
            println!("wrote {}", out.display());
            Ok(if warnings { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Verb::Power { common } => {
            let config = resolve_config(&common)?;
            let budget = PowerBudget::new(config.power.a_max.clone(), config.power.a_total).map_err(|e| usage(e.to_string()))?;
            let alloc = allocate(&budget).map_err(|e| usage(e.to_string()))?;
            let joined = alloc.power.iter().map(|&x| short(x)).collect::<Vec<_>>().join(",");
            println!("A* = ({joined})  branch {:?}  bisection steps {}", alloc.branch, alloc.iterations);
            if common.out.is_some() || std::env::var_os(OUT_DIR_VAR).is_some() {
                let mut csv = String::from("led,a_max,intensity\n");
                for (i, (cap, x)) in budget.a_max.iter().zip(&alloc.power).enumerate() {
                    csv.push_str(&format!("{i},{cap:.11e},{x:.11e}\n"));
                }
                let out = output_path(&common, "power");
                write_outputs(&out, &csv, &config)?;
                println!("wrote {}", out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn override_sets_nested_values() {
        let mut v = json!({"lip": {"max_inner": 5}});
        apply_override(&mut v, "lip.max_inner=200").unwrap();
        apply_override(&mut v, "ldao.relinearize=sweep").unwrap();
        assert_eq!(v["lip"]["max_inner"], json!(200));
        assert_eq!(v["ldao"]["relinearize"], json!("sweep"));
    }

    #[test]
    fn override_without_equals_is_rejected() {
        let mut v = json!({});
        assert!(apply_override(&mut v, "lip.max_inner").is_err());
    }

    #[test]
    fn snr_grid_syntax() {
        assert_eq!(parse_snr("20:5:80").unwrap().len(), 13);
        assert_eq!(parse_snr("40").unwrap(), vec![40.0]);
        assert!(parse_snr("20:80").is_err());
    }

    #[test]
    fn merge_keeps_defaults_and_swaps_tagged_variants() {
        let mut base = json!({"a": 1, "leds": {"layout": "grid", "count": 4}});
        merge(&mut base, json!({"b": 2, "leds": {"count": 9}}));
        assert_eq!(base, json!({"a": 1, "b": 2, "leds": {"layout": "grid", "count": 9}}));
        merge(&mut base, json!({"leds": {"layout": "explicit", "positions": []}}));
        assert_eq!(base["leds"], json!({"layout": "explicit", "positions": []}));
    }

    #[test]
    fn short_formatting() {
        assert_eq!(short(1.1500000000000001), "1.15");
        assert_eq!(short(1.0), "1");
    }

    #[test]
    fn sidecar_sits_next_to_output() {
        assert_eq!(sidecar_path(Path::new("a/fig3.csv")), PathBuf::from("a/fig3.csv.config.json"));
    }
}
