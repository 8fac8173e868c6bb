//! Frozen reference values computed by testdata/make_goldens.py.

use serde_json::Value;
use tandem_core::diffgen::{cosine_schedule, DEFAULT_COSINE_OFFSET};
use tandem_core::oracle::{band_gap_value, formation_energy_value, relax, OracleConfig};
use tandem_core::surrogate::khot;
use tandem_core::{CrystalStructure, ElementId};

fn goldens() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/testdata/v1/goldens.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn structure(v: &Value) -> CrystalStructure {
    serde_json::from_value(v.clone()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn fe2o3_energy_and_gap() {
    let g = goldens();
    let s = structure(&g["fe2o3_cell"]);
    let cfg = OracleConfig::default();
    assert!((formation_energy_value(&s, &cfg).unwrap() - num(&g["fe2o3_formation_energy"])).abs() < 1e-12);
    assert!((band_gap_value(&s, &cfg).unwrap() - num(&g["fe2o3_band_gap"])).abs() < 1e-12);
}

#[test]
fn relaxation_returns_to_the_grid_minimum() {
    let g = goldens();
    let mut cell = g["nacl_pair_cell"].clone();
    let start: Vec<f64> = g["nacl_pair_minimum_frac"].as_array().unwrap().iter().map(num).collect();
    cell["frac_coords"] = serde_json::json!([[0.0, 0.0, 0.0], [start[0] + 0.05, start[1], start[2]]]);
    let s = structure(&cell);
    let cfg = OracleConfig::default();
    let r = relax(&s, &cfg, 2000, 0.01, 1e-12).unwrap();
    let target = num(&g["nacl_pair_minimum_energy"]);
    assert!((r.final_energy() - target).abs() < 1e-3, "relaxed {} vs grid {target}", r.final_energy());
}

#[test]
fn khot_bits_match_the_element_table() {
    let g = goldens();
    for (symbol, key) in [("Fe", "fe_khot"), ("O", "o_khot")] {
        let expected: Vec<bool> = g[key].as_array().unwrap().iter().map(|b| b.as_u64() == Some(1)).collect();
        assert_eq!(khot(ElementId::from_symbol(symbol).unwrap()).to_vec(), expected, "{symbol}");
    }
}

#[test]
fn alpha_bar_midpoint() {
    let g = goldens();
    let sched = cosine_schedule(1000, DEFAULT_COSINE_OFFSET).unwrap();
    assert!((sched.alpha_bar(500) - num(&g["alpha_bar_mid_T1000"])).abs() < 1e-12);
    // no clipping is active before the midpoint, so the closed form agrees
    assert!((sched.alpha_bar(500) - num(&g["alpha_bar_closed_form_mid_T1000"])).abs() < 1e-12);
}
