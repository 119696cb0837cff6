use serde_json::Value;

use ivcate_wasm::{coverage_json, estimate_json, orthogonality_json, MAX_N};

#[test]
fn estimate_returns_report_and_points() {
    let v: Value = serde_json::from_str(&estimate_json("coverage", 5000, 1, "driv", "linear").unwrap()).unwrap();
    assert_eq!(v["truth"]["true_ate"].as_f64().unwrap(), 6.8);
    let points = v["points"].as_array().unwrap();
    assert!(!points.is_empty() && points.len() <= 400);
    assert!(points.iter().all(|p| p["estimate"].is_number()));
    assert!(v["report"]["ate"]["point"].is_number());
}

#[test]
fn estimate_rejects_bad_input() {
    assert!(estimate_json("coverage", 5000, 1, "driv", "forest").is_err());
    assert!(estimate_json("coverage", 5000, 1, "wald", "linear").is_err());
    assert!(estimate_json("marketing", 5000, 1, "driv", "linear").is_err());
    assert!(estimate_json("coverage", MAX_N + 1, 1, "driv", "linear").is_err());
}

#[test]
fn coverage_and_orthogonality_serialize() {
    let cov: Value = serde_json::from_str(&coverage_json(1000, 10, 3).unwrap()).unwrap();
    assert_eq!(cov.as_array().unwrap().len(), 2);
    let orth: Value = serde_json::from_str(&orthogonality_json(2000, 3).unwrap()).unwrap();
    assert_eq!(orth.as_array().unwrap().len(), 13);
    assert!(coverage_json(1000, 5, 3).is_err());
}
