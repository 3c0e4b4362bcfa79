use std::io::Write;
use std::process::{Command, Output};

use serde_json::Value;

fn epd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epd")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn csv_pairs(out: &Output) -> Vec<(String, String)> {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    r.records().map(|rec| {
        let rec = rec.unwrap();
        (rec[0].to_string(), rec[1].to_string())
    }).collect()
}

fn theta(doc: &Value) -> Vec<f64> {
    doc["result"]["theta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

const TELEPHONE_FIT: &[&str] = &["fit", "--data", "telephone-fault", "--alpha", "0.98", "--beta", "0.367", "--gamma", "0.146"];

#[test]
fn fit_output_round_trips_bit_exactly() {
    let a = epd(TELEPHONE_FIT);
    assert!(a.status.success());
    let b = epd(TELEPHONE_FIT);
    assert_eq!(a.stdout, b.stdout);
    let t = theta(&json(&a));

    let mut args = TELEPHONE_FIT.to_vec();
    args.extend(["--format", "csv"]);
    let c = epd(&args);
    let pairs = csv_pairs(&c);
    for (i, ti) in t.iter().enumerate() {
        let key = format!("result.theta.{i}");
        let v: f64 = pairs.iter().find(|(k, _)| *k == key).unwrap().1.parse().unwrap();
        assert_eq!(v.to_bits(), ti.to_bits());
    }

    // refitting from the printed estimate stays on the same root
    let init = format!("{},{}", t[0], t[1]);
    let mut args = TELEPHONE_FIT.to_vec();
    args.extend(["--init", &init]);
    let d = json(&epd(&args));
    let t2 = theta(&d);
    assert!((t2[0] - t[0]).abs() < 1e-9 * t[0].abs() && (t2[1] - t[1]).abs() < 1e-9 * t[1]);
}

#[test]
fn fit_document_carries_inputs_diagnostics_and_validation() {
    let doc = json(&epd(TELEPHONE_FIT));
    assert_eq!(doc["command"], "fit");
    assert_eq!(doc["inputs"]["triplet"]["beta"].as_f64(), Some(0.367));
    assert_eq!(doc["dataset"]["valid"], true);
    assert_eq!(doc["dataset"]["n"], 14);
    let r = &doc["result"];
    assert_eq!(r["converged"], true);
    assert!(r["diagnostics"]["ee_residual_norm"].as_f64().unwrap() < 1e-7);
    assert!(r["diagnostics"]["quadrature_error"].as_f64().is_some());
    let mu = r["estimates"]["mu"].as_f64().unwrap();
    let sigma = r["estimates"]["sigma"].as_f64().unwrap();
    assert!((mu / 122.205 - 1.0).abs() < 0.01);
    assert!((sigma / 136.962 - 1.0).abs() < 0.01);
    assert!(r.get("standard_errors").is_none());
}

#[test]
fn mle_matches_closed_form() {
    let doc = json(&epd(&["mle", "--data", "telephone-fault", "--variance"]));
    let r = &doc["result"];
    assert!((r["estimates"]["mu"].as_f64().unwrap() - 40.357142857142854).abs() < 1e-8);
    assert!((r["estimates"]["sigma"].as_f64().unwrap() / 311.332 - 1.0).abs() < 5e-3);
    let se = r["standard_errors"]["mu"].as_f64().unwrap();
    assert!(se > 0.0 && se.is_finite());
}

#[test]
fn exponential_model_from_dataset_default() {
    let doc = json(&epd(&["mle", "--data", "insulating-fluid"]));
    assert_eq!(doc["inputs"]["model"], "exponential");
    assert!((doc["result"]["estimates"]["mean"].as_f64().unwrap() / 14.3589 - 1.0).abs() < 5e-3);
}

#[test]
fn errors_are_structured_with_nonzero_exit() {
    let out = epd(&["fit", "--data", "no-such-dataset"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["error"]["kind"], "data");

    let out = epd(&["fit", "--data", "darwin", "--beta", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["error"]["kind"], "parameter");

    let out = epd(&["regress", "--data", "darwin"]);
    assert_eq!(json(&out)["error"]["kind"], "data");

    let out = epd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["error"]["kind"], "usage");

    let out = epd(&["--format", "csv", "fit", "--data", "no-such-dataset"]);
    let pairs = csv_pairs(&out);
    assert_eq!(pairs[0], ("error.kind".to_string(), "data".to_string()));
}

#[test]
fn external_files_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("x.csv");
    std::fs::File::create(&good).unwrap().write_all(b"x\n1.0\n2.5\n2.0\n3.5\n").unwrap();
    let doc = json(&epd(&["mle", "--data", good.to_str().unwrap()]));
    assert_eq!(doc["dataset"]["bundled"], false);
    assert_eq!(doc["dataset"]["validation"].as_array().unwrap().len(), 0);
    assert!((doc["result"]["estimates"]["mu"].as_f64().unwrap() - 2.25).abs() < 1e-12);

    let bad = dir.path().join("bad.csv");
    std::fs::File::create(&bad).unwrap().write_all(b"x\n1.0\nabc\n").unwrap();
    let out = epd(&["mle", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = &json(&out)["error"];
    assert_eq!(e["kind"], "parse");
    assert!(e["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn regression_fit_reports_sigma2_and_ols() {
    let doc = json(&epd(&[
        "regress", "--data", "star-cluster", "--intercept", "--alpha", "-4.8715", "--beta", "0.9897", "--gamma", "0.7558", "--variance",
    ]));
    let r = &doc["result"];
    let t = theta(&doc);
    for (got, want) in t.iter().zip([-8.1389, 2.9660, 0.1035]) {
        assert!((got / want - 1.0).abs() < 0.02);
    }
    assert!((r["ols"]["sigma2"].as_f64().unwrap() / 0.3188 - 1.0).abs() < 5e-3);
    assert_eq!(r["multiple_roots"], true);
    assert_eq!(r["covariance"].as_array().unwrap().len(), 3);
}

#[test]
fn weight_curve_table() {
    let out = epd(&["--format", "csv", "curve", "weight", "--alpha", "1", "--beta", "0,0.5,1", "--gamma", "1", "--grid", "0:3:13"]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(r.headers().unwrap().len(), 4);
    let rows: Vec<Vec<f64>> = r.records().map(|x| x.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 13);
    for row in &rows {
        let t = row[0];
        assert!((row[3] - t * t.exp()).abs() <= 1e-12 * (1.0 + t * t.exp()));
        assert!((row[1] - 2.0 * t).abs() <= 1e-12 * (1.0 + t));
    }
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
}

#[test]
fn influence_curve_json() {
    let doc = json(&epd(&["curve", "influence", "--gamma", "0.1", "--grid", "-4:4:9"]));
    let rows = doc["table"]["rows"].as_array().unwrap();
    assert_eq!(doc["table"]["columns"][1], "IF_mu");
    let mid = rows[4].as_array().unwrap();
    assert_eq!(mid[1].as_f64().unwrap(), 0.0);
    let first = rows[0].as_array().unwrap()[1].as_f64().unwrap();
    let last = rows[8].as_array().unwrap()[1].as_f64().unwrap();
    assert!((first + last).abs() < 1e-12);
    let out = epd(&["curve", "influence", "--beta", "0,1", "--grid", "-1:1:3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tune_small_grid() {
    let doc = json(&epd(&["tune", "--data", "newcomb", "--grid", "3,3,4", "--refine-cells", "1"]));
    let r = &doc["result"];
    let u = r["unrestricted"]["empirical_mse"].as_f64().unwrap();
    let d = r["dpd"]["empirical_mse"].as_f64().unwrap();
    assert!(u <= d);
    assert_eq!(r["dpd"]["triplet"]["beta"].as_f64(), Some(0.0));
    assert_eq!(doc["inputs"]["config"]["plugin"], "hybrid");

    let doc = json(&epd(&["tune", "--data", "newcomb", "--gamma-range", "0.1:0.6", "--grid", "3,3,6", "--dpd-only", "--surface"]));
    assert!(doc["result"].get("unrestricted").is_none());
    let g = doc["result"]["dpd"]["triplet"]["gamma"].as_f64().unwrap();
    assert!((0.1..=0.6).contains(&g));
    assert!(!doc["result"]["dpd"]["surface"].as_array().unwrap().is_empty());
}

#[test]
fn tune_regress_small_grid() {
    let doc = json(&epd(&["tune-regress", "--data", "belgian-phones", "--intercept", "--grid", "2,2,3", "--no-refine"]));
    let r = &doc["result"];
    assert!(r["unrestricted"]["empirical_mse"].as_f64().unwrap() <= r["dpd"]["empirical_mse"].as_f64().unwrap());
    assert_eq!(doc["inputs"]["config"]["plugin"], "model");
    assert!(r["pilot"].get("sigma2").is_some());
}

#[test]
fn mse_surface_table() {
    let out = epd(&["--format", "csv", "mse-surface", "--data", "darwin", "--grid", "2,3,2"]);
    assert!(out.status.success());
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let h: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(h, ["alpha", "beta", "gamma", "mse", "mu", "sigma2"]);
    assert_eq!(r.records().count(), 12);

    let doc = json(&epd(&["mse-surface", "--data", "star-cluster", "--intercept", "--grid", "1,2,2", "--alpha-range", "-1:-1"]));
    assert_eq!(doc["result"]["cells"], 4);
    assert_eq!(doc["table"]["columns"][4], "intercept");
}
