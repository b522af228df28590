//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes and returns JSON strings. The work is done by plain
//! functions returning `Result<String, String>` so it can be tested natively;
//! the `#[wasm_bindgen]` wrappers only turn errors into JS exceptions.
//!
//! Everything here runs single-threaded and without clocks, since neither is
//! available on `wasm32-unknown-unknown`.

use censimpute::aftfit::{self, FitOptions, FittedImputationModel};
use censimpute::analysis;
use censimpute::condmean::{self, Method, Strategy};
use censimpute::imputation::{self, ColumnMap, Dataset};
use censimpute::{Family, FamilySpec};
use serde::Deserialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
struct CurveRequest {
    model: FamilySpec,
    #[serde(default)]
    z: Vec<f64>,
    x_max: f64,
    #[serde(default = "default_points")]
    points: usize,
}

fn default_points() -> usize {
    200
}

/// Survival, hazard and density of one subject on `[lower, x_max]`.
pub fn curves_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let params = req.model.resolve(&req.z).map_err(|e| e.to_string())?;
    if !(req.points >= 2 && req.points <= 5000) {
        return Err("points must be between 2 and 5000".into());
    }
    let lower = params.support_lower().max(-req.x_max.abs());
    if !(req.x_max > lower) {
        return Err("x_max must exceed the lower end of the support".into());
    }
    let step = (req.x_max - lower) / (req.points - 1) as f64;
    let x: Vec<f64> = (0..req.points).map(|i| lower + step * i as f64).collect();
    let out = json!({
        "family": req.model.family,
        "mean": params.mean(),
        "x": x,
        "survival": x.iter().map(|&v| params.survival(v)).collect::<Vec<_>>(),
        "hazard": x.iter().map(|&v| finite_or_null(params.hazard(v))).collect::<Vec<_>>(),
        "density": x.iter().map(|&v| finite_or_null(params.density(v))).collect::<Vec<_>>(),
    });
    Ok(out.to_string())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

#[derive(Debug, Deserialize)]
struct CompareRequest {
    model: FamilySpec,
    #[serde(default)]
    z: Vec<f64>,
    w: f64,
    /// Upper bound for an interval-censored value.
    #[serde(default)]
    upper: Option<f64>,
}

/// E(X | X > w) (or E(X | w < X ≤ upper)) by every strategy.
pub fn compare_json(request: &str) -> Result<String, String> {
    let req: CompareRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let params = req.model.resolve(&req.z).map_err(|e| e.to_string())?;
    let rows: Vec<_> = Method::ALL
        .iter()
        .map(|&m| match condmean::cm_observation(&params, req.w, req.upper, &Strategy::new(m)) {
            Ok(v) => json!({ "strategy": m.cli_name(), "value": v }),
            Err(e) => json!({ "strategy": m.cli_name(), "error": e.to_string() }),
        })
        .collect();
    Ok(json!({
        "w": req.w,
        "upper": req.upper,
        "survival_at_w": params.survival(req.w),
        "results": rows,
    })
    .to_string())
}

#[derive(Debug, Deserialize)]
struct ImputeRequest {
    csv: String,
    #[serde(default)]
    family: Option<Family>,
    #[serde(default)]
    strategy: Option<Method>,
    #[serde(default)]
    covariates: Option<Vec<String>>,
}

/// Rank families by AIC on a pasted CSV, impute with the chosen (or best)
/// family, and fit the outcome regression.
pub fn impute_json(request: &str) -> Result<String, String> {
    let req: ImputeRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let columns = ColumnMap {
        covariates: req.covariates.unwrap_or_else(|| ColumnMap::default().covariates),
        ..ColumnMap::default()
    };
    let data = Dataset::read_csv(req.csv.as_bytes(), columns).map_err(|e| e.to_string())?;
    let sample = data.censored_sample().map_err(|e| e.to_string())?;
    let options = FitOptions::default();
    let ranking: Vec<FittedImputationModel> =
        aftfit::select_model(&Family::ANALYTIC, &sample, aftfit::Criterion::Aic, &options).map_err(|e| e.to_string())?;
    let family = req.family.unwrap_or(ranking[0].spec.family);
    let strategy = req.strategy.map(Strategy::new).unwrap_or_else(|| Strategy::default_for(family));
    let (imputed, model) = imputation::impute_single(&data, family, &strategy, &options).map_err(|e| e.to_string())?;
    let fit = analysis::ols_imputed(&imputed).map_err(|e| e.to_string())?;
    let ci = fit.confidence_intervals(0.95).map_err(|e| e.to_string())?;
    let se = fit.se();
    Ok(json!({
        "ranking": ranking.iter().map(|m| json!({
            "family": m.spec.family, "k": m.k, "loglik": m.loglik, "aic": m.aic, "bic": m.bic,
        })).collect::<Vec<_>>(),
        "family": family,
        "strategy": strategy.method.cli_name(),
        "model": model.spec,
        "observed": imputed.original_w,
        "values": imputed.x(),
        "imputed": imputed.imputed,
        "coefficients": (0..fit.p).map(|j| json!({
            "name": fit.names[j], "estimate": fit.beta[j], "se": se[j],
            "ci_lower": ci[j].0, "ci_upper": ci[j].1,
        })).collect::<Vec<_>>(),
    })
    .to_string())
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn curves(request: &str) -> Result<String, JsValue> {
    to_js(curves_json(request))
}

#[wasm_bindgen]
pub fn compare(request: &str) -> Result<String, JsValue> {
    to_js(compare_json(request))
}

#[wasm_bindgen]
pub fn impute(request: &str) -> Result<String, JsValue> {
    to_js(impute_json(request))
}
