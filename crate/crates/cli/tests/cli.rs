use std::process::{Command, Output};

use serde_json::Value;

fn spiked(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spiked"))
        .args(args)
        .env_remove("SPIKED_WORKERS")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = spiked(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn threshold_fixtures() {
    for (p, k, l1, l2, ltr) in [
        ("3", "1", None, 1.732, 1.732),
        ("3", "2", None, 2.449, f64::NAN),
        ("3", "3", Some(3.464), 3.464, 3.619),
        ("4", "3", Some(4.000), 4.243, 4.243),
    ] {
        let d = json(&["thresholds", "-p", p, "-k", k]);
        assert_eq!(d["schema_version"], 1);
        assert_eq!(d["config"]["p"].as_u64().unwrap().to_string(), p);
        let r = &d["result"];
        assert!((r["lambda2"].as_f64().unwrap() - l2).abs() < 2e-3, "{r}");
        if let Some(l1) = l1 {
            assert!((r["lambda1"].as_f64().unwrap() - l1).abs() < 2e-3, "{r}");
        }
        if ltr.is_finite() {
            assert!((r["lambda_tr"].as_f64().unwrap() - ltr).abs() < 2e-3, "{r}");
        }
    }
}

#[test]
fn malformed_model_is_a_usage_error() {
    assert_eq!(code(&spiked(&["thresholds", "-p", "2", "-k", "1"])), 2);
    assert_eq!(code(&spiked(&["thresholds", "-p", "3"])), 2);
    assert_eq!(code(&spiked(&["gse", "-p", "3", "-k", "2", "--lambda", "1", "--sweep", "1:2:3"])), 2);
    assert_eq!(code(&spiked(&["bogus"])), 2);
}

#[test]
fn surface_shape_and_threshold_curves() {
    let d = json(&["surface", "-p", "3", "-k", "3", "-l", "3.5,3.619,4", "--grid", "400"]);
    let r = &d["result"];
    assert_eq!(r["rows"].as_array().unwrap().len(), 3 * 400);
    let band: Vec<f64> = r["curves"].as_array().unwrap().iter().map(|c| c["band_max"].as_f64().unwrap()).collect();
    assert!(band[0] > 1e-3 && band[1].abs() < 1e-3 && band[2] < -1e-3, "{band:?}");

    let d = json(&["surface", "-p", "3", "-k", "1", "-l", "1.732", "--grid", "400"]);
    let b = d["result"]["curves"][0]["band_max"].as_f64().unwrap();
    assert!(b.abs() < 1e-3, "{b}");
}

#[test]
fn count_reports_terms_and_constant() {
    let d = json(&["count", "-p", "3", "-k", "2", "-l", "6", "-n", "100", "--window", "0.9,0.99,-3.5,-3.0"]);
    let c = &d["result"]["count"];
    assert!((c["constant_c"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!((c["euler_char_exact"].as_f64().unwrap() - 0.99247).abs() < 1e-4, "{c}");
    assert!(c["rate"].as_f64().unwrap().abs() < 1e-10);

    let d = json(&["count", "-p", "3", "-k", "1", "-l", "3", "-n", "50", "--window", "0.5,0.95,-4.5,-3.7"]);
    assert_eq!(d["result"]["count"]["term_ii"].as_f64().unwrap(), 0.0);

    // rate < 0 away from the ground state: the sharp value is exponentially small
    let d = json(&["count", "-p", "3", "-k", "2", "-l", "6", "-n", "200", "--window", "0.6,0.85,-3.3,-3.0"]);
    let c = &d["result"]["count"];
    let rate = c["rate"].as_f64().unwrap();
    assert!(rate < 0.0 && c["constant_c"].is_null());
    if let Some(s) = c["sharp_value"].as_f64() {
        assert!(s < (100.0 * rate).exp());
    }
}

#[test]
fn count_window_violation_names_the_inequality() {
    let out = spiked(&["count", "-p", "3", "-k", "2", "-l", "6", "-n", "100", "--window", "0.5,0.9,-3,-1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sup E"));
}

#[test]
fn gse_prediction_and_simulation() {
    let d = json(&["gse", "-p", "3", "-k", "2", "-l", "10"]);
    let g = &d["result"]["prediction"];
    let x = g["x_star"].as_f64().unwrap();
    assert!((x + 5.15).abs() < 1e-9);
    assert!((x - g["gse_alt_form"].as_f64().unwrap()).abs() < 1e-12);
    assert!(d["result"]["simulation"].is_null());

    assert_eq!(code(&spiked(&["gse", "-p", "3", "-k", "2", "-l", "1"])), 2);

    let d = json(&["gse", "-p", "3", "-k", "2", "-l", "10", "--simulate", "-n", "24", "--instances", "2", "--restarts", "8"]);
    let s = &d["result"]["simulation"];
    assert_eq!(s["n"], 24);
    assert!(s["energy_discrepancy"].as_f64().unwrap().abs() < 0.5, "{s}");
}

#[test]
fn validate_pr_table_and_exit_codes() {
    let d = json(&["validate", "--suite", "pr"]);
    assert_eq!(d["result"]["pass"], true);
    let cases = d["result"]["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 6);
    for c in cases {
        let r = c["deviation"].as_f64().unwrap();
        assert!((0.3..=0.8).contains(&r));
    }
    assert_eq!(code(&spiked(&["validate", "--suite", "nope"])), 2);
    // an absurd tolerance must fail the suite with exit 1, output still written
    let out = spiked(&["validate", "--suite", "hermite", "--samples", "2000", "--sigmas", "1e-6"]);
    assert_eq!(code(&out), 1);
    let d: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(d["result"]["pass"], false);
}

#[test]
fn runs_are_deterministic_and_worker_independent() {
    let args = ["validate", "--suite", "rank1", "--samples", "5000", "--seed", "7", "--sigmas", "5", "--format", "csv"];
    let a = spiked(&args);
    let b = spiked(&[&args[..], &["--workers", "1"]].concat());
    let c = Command::new(env!("CARGO_BIN_EXE_spiked")).args(args).env("SPIKED_WORKERS", "3").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let other = spiked(&["validate", "--suite", "rank1", "--samples", "5000", "--seed", "8", "--format", "csv"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn sweep_c_tends_to_one_and_clips() {
    for k in ["1", "3"] {
        let out = spiked(&["sweep-c", "-p", "3", "-k", k, "--sweep", "1:1000:8"]);
        assert!(out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("clipped"));
        let d: Value = serde_json::from_slice(&out.stdout).unwrap();
        let rows = d["result"]["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 8);
        let last = rows.last().unwrap()["c"].as_f64().unwrap();
        assert!((last - 1.0).abs() < 0.05);
    }
}

#[test]
fn config_file_csv_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let csv_path = dir.path().join("out.csv");
    std::fs::write(&cfg, "p = 3\nk = 2\nlambda = 10\nformat = csv\n").unwrap();
    let out = spiked(&["gse", "--config", cfg.to_str().unwrap(), "--output", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let row = rdr.records().next().unwrap().unwrap();
    let gse: f64 = row[1].parse().unwrap();

    let d = json(&["gse", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(gse.to_bits(), d["result"]["prediction"]["x_star"].as_f64().unwrap().to_bits());
    assert_eq!(d["config"]["format"], "json");

    std::fs::write(&cfg, "p = 3\nq = 1\n").unwrap();
    assert_eq!(code(&spiked(&["thresholds", "--config", cfg.to_str().unwrap()])), 2);
}
