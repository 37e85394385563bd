//! Runs the `bmsim` binary end to end.

use std::path::Path as FsPath;
use std::process::{Command, Output};

use serde_json::Value;

fn bmsim(args: &[&str], dir: &FsPath) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "summary must be a single line");
    serde_json::from_str(&text).unwrap()
}

fn read_csv(path: &FsPath) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn sphere_bm_is_reproducible_and_on_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["bm", "--manifold", "sphere:3", "--T", "1", "--dt", "1e-3", "--paths", "10", "--seed", "1", "--out"];
    let first = summary(&bmsim(&[&args[..], &["a.csv"]].concat(), dir.path()));
    summary(&bmsim(&[&args[..], &["b.csv"]].concat(), dir.path()));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "identical flags must give identical bytes");

    let (header, rows) = read_csv(&dir.path().join("a.csv"));
    assert_eq!(header, ["path_id", "t", "c1", "c2", "c3"]);
    assert_eq!(rows.len(), 10 * 1001);
    for r in &rows {
        let norm = (r[2] * r[2] + r[3] * r[3] + r[4] * r[4]).sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
    }
    assert_eq!(first["config"]["grid"]["seed"], 1);
    assert_eq!(first["result"]["n_paths"], 10);

    // a different seed changes the output
    summary(&bmsim(&["bm", "--manifold", "sphere:3", "--paths", "10", "--seed", "2", "--out", "c.csv"], dir.path()));
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());
}

#[test]
fn per_path_layout_and_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(
        &["bm", "--manifold", "so:3", "--dt", "0.1", "--paths", "3", "--layout", "per-path", "--out", "p.csv"],
        dir.path(),
    ));
    assert_eq!(s["outputs"].as_array().unwrap().len(), 3);
    let (header, rows) = read_csv(&dir.path().join("p_2.csv"));
    assert_eq!(header.len(), 10);
    assert_eq!(rows.len(), 11);

    summary(&bmsim(&["bm", "--manifold", "euclidean:2", "--dt", "0.5", "--paths", "2", "--format", "json", "--out", "p.json"], dir.path()));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[1]["t"].as_array().unwrap().len(), 3);
}

#[test]
fn sample_then_estimate_recovers_so2_variance() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(
        &["sample", "--group", "so:2", "--sigma2", "0.25", "--m", "100000", "--delta", "1e-3", "--seed", "7", "--out", "s.csv"],
        dir.path(),
    ));
    assert_eq!(s["outputs"].as_array().unwrap().len(), 2);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    for key in ["n", "g", "C", "delta", "seed", "m"] {
        assert!(meta.get(key).is_some(), "metadata lacks {key}");
    }
    let (header, _) = read_csv(&dir.path().join("s.csv"));
    assert_eq!(header, ["m11", "m21", "m12", "m22"]);

    let e = summary(&bmsim(&["estimate", "--group", "so:2", "--in", "s.csv", "--out", "r.json"], dir.path()));
    let sigma2 = e["result"]["sigma2_hat"].as_f64().unwrap();
    assert!((sigma2 - 0.25).abs() <= 0.02, "σ̂² = {sigma2}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    for key in ["g_hat", "Z_hat", "C_hat", "C_hat_psd", "sigma2_hat", "m", "clamped", "residual"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(report["m"], 100000);
}

#[test]
fn estimate_rejects_group_mismatch_and_full_c_on_so4() {
    let dir = tempfile::tempdir().unwrap();
    summary(&bmsim(&["sample", "--group", "so:4", "--C", "iso:0.1", "--m", "50", "--delta", "0.1", "--out", "s4.csv"], dir.path()));
    let out = bmsim(&["estimate", "--group", "so:3", "--in", "s4.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = bmsim(&["estimate", "--in", "s4.csv", "--structure", "full"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not identifiable"));
    let s = summary(&bmsim(&["estimate", "--in", "s4.csv", "--structure", "diagonal"], dir.path()));
    assert_eq!(s["result"]["underdetermined"], true);
}

#[test]
fn quadratic_variation_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(&["integrate", "--experiment", "qv", "--N", "100000", "--seeds", "100", "--out", "qv.csv"], dir.path()));
    assert_eq!(s["result"]["count"], 100);
    assert!(s["result"]["in_band"].as_u64().unwrap() >= 95);
    let text = std::fs::read_to_string(dir.path().join("qv.csv")).unwrap();
    assert!(text.starts_with("name,N,seed,value\n"));
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn endpoint_experiment_for_time_integrand_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(
        &["integrate", "--experiment", "endpoint", "--integrand", "time", "--N", "100000", "--seeds", "5", "--format", "json", "--out", "e.json"],
        dir.path(),
    ));
    assert!(s["result"]["max"].as_f64().unwrap().abs() < 1e-2);
    let recs: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(recs[0]["name"], "endpoint:t");
    assert_eq!(recs[0]["N"], 100000);
}

#[test]
fn develop_and_antidevelop_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    summary(&bmsim(&["bm", "--manifold", "euclidean:2", "--dt", "1e-2", "--paths", "3", "--seed", "5", "--out", "plane.csv"], dir.path()));
    let d = summary(&bmsim(&["develop", "--manifold", "sphere:3", "--in", "plane.csv", "--out", "sphere.csv"], dir.path()));
    assert!(d["result"]["max_membership_defect"].as_f64().unwrap() <= 1e-9);
    summary(&bmsim(&["antidevelop", "--manifold", "sphere:3", "--in", "sphere.csv", "--out", "back.csv"], dir.path()));
    let (_, a) = read_csv(&dir.path().join("plane.csv"));
    let (_, b) = read_csv(&dir.path().join("back.csv"));
    assert_eq!(a.len(), b.len());
    let worst = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "round-trip error {worst}");
}

#[test]
fn sde_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(&["sde", "--scheme", "em", "--model", "gbm", "--mu", "0.5", "--sigma", "0.5", "--dt", "1e-3", "--paths", "200"], dir.path()));
    assert!(s["result"]["strong_error"].as_f64().unwrap() < 0.05);
    let s = summary(&bmsim(&["sde", "--scheme", "heun", "--model", "gbm", "--sigma", "1", "--dt", "1e-3", "--paths", "200"], dir.path()));
    assert!(s["result"]["strong_error"].as_f64().unwrap() < 0.05);
    assert_eq!(bmsim(&["sde", "--scheme", "heun", "--mu", "1"], dir.path()).status.code(), Some(2));
}

#[test]
fn lie_bm_writes_flattened_rotations() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(
        &["lie-bm", "--group", "so:3", "--C", "diag:0.3,0.2,0.1", "--g", "axis:0,0,0.5", "--dt", "0.01", "--paths", "4", "--out", "w.csv"],
        dir.path(),
    ));
    assert!(s["result"]["max_membership_defect"].as_f64().unwrap() <= 1e-9);
    let (header, rows) = read_csv(&dir.path().join("w.csv"));
    assert_eq!(header.len(), 2 + 9);
    // first row is g = rotation by 0.5 about e₃, column-major
    let r0 = &rows[0];
    assert!((r0[2] - 0.5f64.cos()).abs() < 1e-15 && (r0[3] - 0.5f64.sin()).abs() < 1e-15);
}

#[test]
fn series_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(&bmsim(&["series", "--mode", "target", "--target", "5", "--N", "1000000", "--out", "t.csv"], dir.path()));
    assert!(s["result"]["error_vs_target"].as_f64().unwrap() <= 0.01);
    let s = summary(&bmsim(&["series", "--mode", "random", "--N", "100000", "--seeds", "4", "--format", "json", "--out", "r.json"], dir.path()));
    assert_eq!(s["result"]["agree_within_tol"], 4);
    let recs: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(recs.as_array().unwrap().len(), 8);
}

#[test]
fn usage_and_numeric_errors_set_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bmsim(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(bmsim(&["bm", "--paths", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(bmsim(&["estimate", "--in", "missing.csv"], dir.path()).status.code(), Some(2));

    // two antipodal planar rotations average to zero: nothing to decompose
    std::fs::write(dir.path().join("bad.csv"), "m11,m21,m12,m22\n0,1,-1,0\n0,-1,1,0\n").unwrap();
    let out = bmsim(&["estimate", "--in", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
}
