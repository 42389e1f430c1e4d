//! Browser bindings for the demo page. Every call returns a JSON string.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use oirs_vlc::harness::{alpha_grid, chi_curve, snr_grid, sweep_snr, ExperimentConfig, Scheme};
use oirs_vlc::power_opt::allocate;
use oirs_vlc::{CapacityCase, PowerBudget, SceneConfig};

/// Largest surface the page may request.
pub const MAX_ELEMENTS: usize = 64;

pub fn chi_json(n_t: usize, points: usize) -> Result<String, String> {
    if n_t == 0 || points == 0 || points > 10_000 {
        return Err("need N_t >= 1 and 1..=10000 points".into());
    }
    let curve = chi_curve(&alpha_grid(points), n_t).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = curve.iter().map(|(a, c)| json!([a, c])).collect();
    Ok(json!({ "n_t": n_t, "curve": rows }).to_string())
}

pub fn power_json(a_max: &[f64], a_total: f64) -> Result<String, String> {
    let budget = PowerBudget::new(a_max.to_vec(), a_total).map_err(|e| e.to_string())?;
    let alloc = allocate(&budget).map_err(|e| e.to_string())?;
    Ok(json!({
        "power": alloc.power,
        "branch": format!("{:?}", alloc.branch),
        "water_level": alloc.water_level,
        "iterations": alloc.iterations,
    })
    .to_string())
}

fn parse_case(case: &str) -> Result<CapacityCase, String> {
    match case {
        "I" => Ok(CapacityCase::CaseI),
        "II" => Ok(CapacityCase::CaseII),
        "III" => Ok(CapacityCase::CaseIII),
        _ => Err(format!("unknown case {case}")),
    }
}

/// Corner-search, greedy and no-surface capacities over an SNR grid on the
/// reference room with `n_elements` surface elements.
pub fn capacity_json(n_elements: usize, case: &str, alpha: f64, start: f64, step: f64, stop: f64) -> Result<String, String> {
    if n_elements > MAX_ELEMENTS {
        return Err(format!("at most {MAX_ELEMENTS} elements"));
    }
    let config = ExperimentConfig {
        scene: SceneConfig::default().with_element_count(n_elements),
        case: parse_case(case)?,
        alpha,
        snr_db: snr_grid(start, step, stop).map_err(|e| e.to_string())?,
        schemes: vec![Scheme::Proposed2, Scheme::Greedy, Scheme::NoOirs],
        ..ExperimentConfig::default()
    };
    let out = sweep_snr(&config).map_err(|e| e.to_string())?;
    let series: Vec<Value> = config
        .schemes
        .iter()
        .map(|&s| {
            let recs: Vec<_> = out.records.iter().filter(|r| r.scheme == s).collect();
            json!({
                "scheme": s.name(),
                "lower": recs.iter().map(|r| r.capacity_lower).collect::<Vec<_>>(),
                "upper": recs.iter().map(|r| r.capacity_upper).collect::<Vec<_>>(),
                "asymptotic": recs.iter().map(|r| r.capacity_asymptotic).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "snr_db": config.snr_db, "series": series }).to_string())
}

#[wasm_bindgen]
pub fn chi(n_t: usize, points: usize) -> Result<String, JsValue> {
    chi_json(n_t, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn power(a_max: Vec<f64>, a_total: f64) -> Result<String, JsValue> {
    power_json(&a_max, a_total).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn capacity(n_elements: usize, case: &str, alpha: f64, start: f64, step: f64, stop: f64) -> Result<String, JsValue> {
    capacity_json(n_elements, case, alpha, start, step, stop).map_err(|e| JsValue::from_str(&e))
}
