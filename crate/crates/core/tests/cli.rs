mod common;

use std::path::Path;
use std::process::{Command, Output};

use boostpc::RgbImage;
use common::BIN;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok_json(out: Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

/// Three sets of six methods; method k adds k grey levels everywhere and 3k
/// inside a square, so item0 is best.
fn write_manifest(dir: &Path) {
    let mut sets = Vec::new();
    for s in 0..3 {
        let gt = RgbImage::from_fn(64, 48, |x, y| [(x * 3 + s * 20) as u8, (y * 4) as u8, 100]);
        gt.save_png(dir.join(format!("gt{s}.png"))).unwrap();
        let mut methods = Vec::new();
        for k in 0..6u8 {
            let img = RgbImage::from_fn(64, 48, |x, y| {
                let bump = if (20..40).contains(&x) && (10..30).contains(&y) { 3 * k } else { k };
                gt.pixel(x, y).map(|c| c.saturating_add(bump))
            });
            let name = format!("s{s}_item{k}.png");
            img.save_png(dir.join(&name)).unwrap();
            methods.push(serde_json::json!({ "method": format!("item{k}"), "path": name }));
        }
        sets.push(serde_json::json!({ "set_id": format!("set{s}"), "ground_truth": format!("gt{s}.png"), "interpolated": methods }));
    }
    let cfg = serde_json::json!({ "sets": sets, "degree": 3, "votes_target": 4, "alpha": 3.0 });
    std::fs::write(dir.join("study.json"), cfg.to_string()).unwrap();
    let mut mos = String::from("set_id,method,mos\n");
    for s in 0..3 {
        for k in 0..6 {
            mos.push_str(&format!("set{s},item{k},{}\n", 5.0 - k as f64 + 0.01 * s as f64));
        }
    }
    std::fs::write(dir.join("mos.csv"), mos).unwrap();
}

#[test]
fn full_pipeline_writes_every_artefact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_manifest(d);

    let boost = ok_json(run(d, &["--config", "study.json", "--out", "stim", "boost", "--zoom", "2"]));
    assert_eq!(boost["images"], 18);
    // Flag wins over config; config wins over default.
    assert_eq!(boost["zoom"], 2.0);
    assert_eq!(boost["alpha"], 3.0);
    for f in ["gt.png", "gt_zoom.png", "0.png", "5_zoom.png", "rois.json"] {
        assert!(d.join("stim/set1").join(f).exists(), "{f}");
    }
    let rois: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("stim/set0/rois.json")).unwrap()).unwrap();
    assert!(!rois["rois"].as_array().unwrap().is_empty());

    let design = ok_json(run(d, &["--config", "study.json", "--out", "design", "sample-pairs"]));
    assert_eq!(design["edges"], 27);
    assert_eq!(design["votes_needed"], 108);
    assert!(d.join("design/trials.csv").exists());

    let m = ok_json(run(d, &["--config", "study.json", "--out", "m", "metrics"]));
    assert_eq!(m["rows"], 18);
    let table = std::fs::read_to_string(d.join("m/metrics.csv")).unwrap();
    assert!(table.starts_with("set_id,method,rmse,gn_rmse,wae"));

    let fit = ok_json(run(d, &["--config", "study.json", "--out", "fit", "fit-wae", "--mos", "mos.csv", "--samples", "100"]));
    assert_eq!(fit["folds"], 3);
    assert!((fit["mean_test_srocc"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let loo = std::fs::read_to_string(d.join("fit/loo_srocc.csv")).unwrap();
    assert!(loo.starts_with("metric,Average,set0,set1,set2"));
    assert_eq!(loo.lines().count(), 5);
    let params = ok_json(run(d, &["--config", "study.json", "--out", "m2", "metrics", "--params", "fit/wae_params.json"]));
    assert_eq!(params["wae_params"], fit["params"]);

    let crowd = ok_json(run(
        d,
        &["--seed", "4", "--out", "crowd", "simulate", "crowd", "--sets", "3", "--items", "6", "--spacing", "0.5", "--good", "6", "--spammers", "2", "--votes-per-worker", "40"],
    ));
    assert_eq!(crowd["votes"], 3 * 8 * 40);

    let report = ok_json(run(
        d,
        &["--out", "rep", "analyze", "--votes", "crowd/votes.jsonl", "--study", "crowd/study.json", "--metrics", "m/metrics.csv", "--retain-fraction", "0.8", "--bootstrap", "100"],
    ));
    assert_eq!(report["methods"], 6);
    for f in ["screening.json", "retained.jsonl", "worker_tpr.svg", "scales.csv", "ranking.csv", "ranking.svg", "correlations.csv", "rank_differences_wae.csv", "rank_differences_rmse.svg", "summary.json"] {
        assert!(d.join("rep").join(f).exists(), "{f}");
    }
    // Lower error is better on both sides, so the metric ranking agrees.
    assert!(report["metrics"]["rmse"]["ranking_srocc"].as_f64().unwrap() > 0.8);
    let mut r = csv::Reader::from_path(d.join("rep/correlations.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 3 * 3);
}

#[test]
fn screen_and_reconstruct_standalone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_json(run(d, &["--out", "sim", "simulate", "crowd", "--items", "8", "--good", "4"]));
    let s = ok_json(run(d, &["--out", "scr", "screen", "--votes", "sim/votes.jsonl", "--retain-fraction", "0.75"]));
    assert_eq!(s["removed_workers"].as_array().unwrap().len(), 1);
    let r = ok_json(run(d, &["--out", "rec", "reconstruct", "--votes", "scr/retained.jsonl", "--study", "sim/study.json"]));
    assert_eq!(r["methods"], 8);
    let mut rdr = csv::Reader::from_path(d.join("rec/ranking.csv")).unwrap();
    let first: Vec<String> = rdr.records().next().unwrap().unwrap().iter().map(String::from).collect();
    assert_eq!(first[0], "item0");
}

#[test]
fn pilot_reports_srocc_and_tpr() {
    let dir = tempfile::tempdir().unwrap();
    let p = ok_json(run(dir.path(), &["--out", "p", "simulate", "pilot", "--replications", "5"]));
    assert!(p["mean_srocc_boosted"].as_f64().unwrap() >= p["mean_srocc_plain"].as_f64().unwrap());
    assert!(p["tpr_boosted"]["tpr"].as_f64().unwrap() > p["tpr_plain"]["tpr"].as_f64().unwrap());
    assert!(dir.path().join("p/pilot_tpr.svg").exists());
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(d, &["screen", "--votes", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(err_json(&out)["kind"], "input");

    let out = run(d, &["boost"]);
    assert_eq!(err_json(&out)["kind"], "usage");

    let out = run(d, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(err_json(&out)["kind"], "usage");

    write_manifest(d);
    let out = run(d, &["--config", "study.json", "boost", "--alpha", "0.5"]);
    assert_eq!(err_json(&out)["kind"], "stimuli");

    std::fs::remove_file(d.join("s1_item2.png")).unwrap();
    let out = run(d, &["--config", "study.json", "metrics"]);
    let e = err_json(&out);
    assert_eq!(e["kind"], "input");
    assert!(e["error"].as_str().unwrap().contains("s1_item2.png"));

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let out = run(d, &["reconstruct", "--votes", "empty.jsonl"]);
    assert_eq!(err_json(&out)["kind"], "no-votes");
}

#[test]
fn constant_error_falls_back_to_full_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gt = RgbImage::filled(32, 32, [90, 90, 90]);
    gt.save_png(d.join("gt.png")).unwrap();
    gt.save_png(d.join("same.png")).unwrap();
    let cfg = serde_json::json!({ "sets": [{ "set_id": "flat", "ground_truth": "gt.png", "interpolated": [{ "method": "copy", "path": "same.png" }] }] });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    ok_json(run(d, &["--config", "cfg.json", "--out", "o", "boost"]));
    let rois: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("o/flat/rois.json")).unwrap()).unwrap();
    assert_eq!(rois["zoomed"], serde_json::json!({ "x": 0, "y": 0, "w": 32, "h": 32 }));
}
