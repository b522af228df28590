use censimpute_wasm::{compare_json, curves_json, impute_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn curves_are_consistent() {
    let out = parse(
        &curves_json(r#"{"model": {"family": "weibull", "shape": 2.0, "coefficients": [0.0]}, "x_max": 3.0, "points": 31}"#)
            .unwrap(),
    );
    let x = out["x"].as_array().unwrap();
    let s = out["survival"].as_array().unwrap();
    assert_eq!(x.len(), 31);
    assert_eq!(s[0].as_f64().unwrap(), 1.0);
    // S = exp(-x²) for unit rate
    let (xi, si) = (x[10].as_f64().unwrap(), s[10].as_f64().unwrap());
    assert!((si - (-xi * xi).exp()).abs() < 1e-14);
    assert!(s.windows(2).all(|w| w[1].as_f64() <= w[0].as_f64()));
}

#[test]
fn curves_reject_bad_requests() {
    assert!(curves_json("not json").is_err());
    assert!(curves_json(r#"{"model": {"family": "weibull", "shape": -1.0, "coefficients": [0.0]}, "x_max": 3.0}"#).is_err());
    assert!(curves_json(r#"{"model": {"family": "exponential", "coefficients": [0.0]}, "x_max": -1.0}"#).is_err());
}

#[test]
fn strategies_agree_in_the_demo() {
    let out = parse(
        &compare_json(r#"{"model": {"family": "lognormal", "shape": 1.0, "coefficients": [0.0]}, "w": 1.0}"#).unwrap(),
    );
    let results = out["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    for r in results {
        let v = r["value"].as_f64().unwrap();
        assert!((v - 2.7742859576700095).abs() < 1e-4, "{r}");
    }
}

#[test]
fn analytic_strategy_reports_missing_closed_form() {
    let out = parse(
        &compare_json(r#"{"model": {"family": "gaussian", "shape": 1.0, "coefficients": [0.0]}, "w": 1.0}"#).unwrap(),
    );
    let results = out["results"].as_array().unwrap();
    assert!(results[0]["error"].is_string());
    assert!((results[1]["value"].as_f64().unwrap() - 1.5251352761609812).abs() < 1e-6);
}

#[test]
fn interval_requests_stay_inside() {
    let out = parse(
        &compare_json(r#"{"model": {"family": "exponential", "coefficients": [0.0]}, "w": 0.0, "upper": 1.0}"#).unwrap(),
    );
    for r in out["results"].as_array().unwrap() {
        assert!((r["value"].as_f64().unwrap() - 0.41802329313067357).abs() < 1e-8);
    }
}

#[test]
fn impute_ranks_and_fits() {
    let mut csv = String::from("y,w,delta,z\n");
    for i in 0..60 {
        let z = (i % 2) as f64;
        let x = 0.3 + 0.037 * ((i * 7) % 60) as f64;
        let delta = i % 3 != 0;
        let w = if delta { x } else { 0.6 * x };
        csv.push_str(&format!("{},{w},{},{z}\n", 1.0 + 0.5 * x + 0.25 * z + 0.1 * ((i % 5) as f64 - 2.0), u8::from(delta)));
    }
    let req = serde_json::json!({ "csv": csv }).to_string();
    let out = parse(&impute_json(&req).unwrap());
    assert_eq!(out["ranking"].as_array().unwrap().len(), 5);
    assert_eq!(out["family"], out["ranking"][0]["family"]);
    let observed = out["observed"].as_array().unwrap();
    let values = out["values"].as_array().unwrap();
    for (i, flag) in out["imputed"].as_array().unwrap().iter().enumerate() {
        if flag.as_bool().unwrap() {
            assert!(values[i].as_f64() > observed[i].as_f64());
        } else {
            assert_eq!(values[i], observed[i]);
        }
    }
    assert_eq!(out["coefficients"].as_array().unwrap().len(), 3);

    let req = serde_json::json!({ "csv": csv, "family": "weibull", "strategy": "stab-mean" }).to_string();
    let out = parse(&impute_json(&req).unwrap());
    assert_eq!(out["family"], "weibull");
    assert_eq!(out["strategy"], "stab-mean");
}

#[test]
fn impute_reports_csv_errors() {
    let err = impute_json(r#"{"csv": "y,w,delta\n1,2,1\n"}"#).unwrap_err();
    assert!(err.contains("'z'"), "{err}");
}
