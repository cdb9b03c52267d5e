//! Browser bindings for the usage-oracle demo page.
//!
//! Every export takes plain numbers or text and returns a JSON string, so the
//! page needs no generated glue beyond `wasm-bindgen`'s own.

use serde_json::json;
use wasm_bindgen::prelude::*;

use usage_oracle::implicit::{refine, TransitionMatrix};
use usage_oracle::{fit_exponential, generate, run_evaluation, split, Builtin, Config, GeneratorSpec};

type Outcome = Result<String, String>;

fn to_js(outcome: Outcome) -> Result<String, JsValue> {
    outcome.map_err(|e| JsValue::from_str(&e))
}

fn encode(value: &serde_json::Value) -> Outcome {
    Ok(value.to_string())
}

/// Parses counts separated by commas or whitespace.
pub fn parse_counts(text: &str) -> Result<Vec<u64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().map_err(|_| format!("`{t}` is not a count")))
        .collect()
}

pub fn fit_report(counts: &str, coverage: f64) -> Outcome {
    let histogram = parse_counts(counts)?;
    let fit = fit_exponential(&histogram, coverage).map_err(|e| e.to_string())?;
    let total: u64 = histogram.iter().sum();
    let observed: Vec<f64> = histogram.iter().map(|&c| c as f64 / total as f64).collect();
    let fitted: Vec<f64> = (0..histogram.len()).map(|i| fit.alpha * (-fit.beta * i as f64).exp()).collect();
    encode(&json!({
        "alpha": fit.alpha,
        "beta": fit.beta,
        "buckets_used": fit.buckets_used,
        "observed": observed,
        "fitted": fitted,
    }))
}

pub fn refine_report(rows_json: &str, iters: usize) -> Outcome {
    let rows: Vec<Vec<f64>> = serde_json::from_str(rows_json).map_err(|e| e.to_string())?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("matrix must be square and non-empty".into());
    }
    let r = refine(&TransitionMatrix::from_rows(&rows), iters);
    encode(&json!({ "steps": r.steps, "implicit": r.implicit, "theta": r.theta }))
}

pub fn compare_report(users: usize, events_per_user: usize, seed: u64) -> Outcome {
    let mut spec = GeneratorSpec::desk();
    spec.n_users = users;
    spec.n_events_per_user = events_per_user;
    let cfg = Config::default();
    let data = generate(&spec, seed).and_then(|d| split(d, cfg.train_fraction)).map_err(|e| e.to_string())?;
    let report =
        run_evaluation(&data, &cfg, &[&Builtin::Mfu, &Builtin::Mru, &Builtin::Kap]).map_err(|e| e.to_string())?;
    let rows: Vec<_> = report
        .aggregate
        .iter()
        .map(|(name, s)| json!({ "predictor": name, "recall": s.recall, "ndcg": s.ndcg, "cases": s.n_cases }))
        .collect();
    encode(&json!({ "k": report.k, "users": report.per_user.len(), "rows": rows }))
}

/// Fits the interval decay to a histogram of per-minute counts.
#[wasm_bindgen(js_name = fitIntervals)]
pub fn fit_intervals(counts: &str, coverage: f64) -> Result<String, JsValue> {
    to_js(fit_report(counts, coverage))
}

/// Runs test-time refinement on a square matrix given as nested JSON arrays.
#[wasm_bindgen(js_name = refineTheta)]
pub fn refine_theta(rows_json: &str, iters: usize) -> Result<String, JsValue> {
    to_js(refine_report(rows_json, iters))
}

/// Generates a small synthetic log and scores MFU, MRU and KAP on it.
#[wasm_bindgen(js_name = comparePredictors)]
pub fn compare_predictors(users: usize, events_per_user: usize, seed: u32) -> Result<String, JsValue> {
    to_js(compare_report(users, events_per_user, u64::from(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(text: &str) -> Value {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn counts_accept_commas_and_spaces() {
        assert_eq!(parse_counts("8, 4 2\n1").unwrap(), vec![8, 4, 2, 1]);
        assert!(parse_counts("8, x").is_err());
    }

    #[test]
    fn halving_counts_fit_ln2() {
        let v = parse(&fit_report("64,32,16,8,4,2,1", 0.75).unwrap());
        assert!((v["beta"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-3);
        assert_eq!(v["fitted"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn refinement_reports_each_step() {
        let v = parse(&refine_report("[[0.49,0.6,0.01],[0,0,0.13],[0,0,0]]", 3).unwrap());
        let steps = v["steps"].as_array().unwrap();
        assert!(!steps.is_empty() && steps.len() <= 3);
        let theta: Vec<f64> = serde_json::from_value(v["theta"].clone()).unwrap();
        assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(refine_report("[[1,2],[3]]", 3).is_err());
    }

    #[test]
    fn comparison_lists_three_predictors() {
        let v = parse(&compare_report(1, 300, 7).unwrap());
        let names: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["predictor"].as_str().unwrap()).collect();
        assert_eq!(names, ["mfu", "mru", "kap"]);
        for r in v["rows"].as_array().unwrap() {
            assert!((0.0..=1.0).contains(&r["recall"].as_f64().unwrap()));
        }
    }
}
