use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spade_core::dataset::{ground_truth, scan_dataset};
use spade_core::scoring::write_heatmap;
use spade_core::AnomalyMap;

fn spade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spade"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("run spade")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(root: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(root), "--size", "64", "--anomalous", "3", "--normal", "2"];
    if !extra.contains(&"--train") {
        args.extend(["--train", "6"]);
    }
    args.extend_from_slice(extra);
    ok(&spade(&args));
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn base_args<'a>(data: &'a Path, out: &'a Path) -> Vec<&'a str> {
    with_k(data, out, "2")
}

fn with_k<'a>(data: &'a Path, out: &'a Path, k: &'a str) -> Vec<&'a str> {
    vec!["--data-root", s(data), "--out", s(out), "--resolution", "64", "--k", k]
}

#[test]
fn empty_train_dir_is_a_usage_error_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("data/widget/train/good");
    fs::create_dir_all(&train).unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    let mut args = vec!["index"];
    args.extend(base_args(&data, &out));
    let res = spade(&args);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains(s(&train)), "{err}");
}

#[test]
fn index_is_cached_and_archives_every_image() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--train", "10"]);
    let out = tmp.path().join("out");
    let mut args = vec!["index"];
    args.extend(base_args(&data, &out));
    ok(&spade(&args));

    let archive = out.join("synth/index/archive");
    let sidecars = files_under(&archive)
        .into_iter()
        .filter(|p| p.file_name().unwrap() == "sidecar.json")
        .count();
    assert_eq!(sidecars, 10);

    let before: Vec<(PathBuf, Vec<u8>)> = files_under(&out.join("synth/index"))
        .into_iter()
        .map(|p| (p.clone(), fs::read(&p).unwrap()))
        .collect();
    let second = spade(&args);
    ok(&second);
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit"));
    let after: Vec<(PathBuf, Vec<u8>)> = files_under(&out.join("synth/index"))
        .into_iter()
        .map(|p| (p.clone(), fs::read(&p).unwrap()))
        .collect();
    assert_eq!(before, after);

    args.push("--force");
    let third = spade(&args);
    ok(&third);
    assert!(!String::from_utf8_lossy(&third.stderr).contains("cache hit"));
}

#[test]
fn score_needs_an_index() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("out");
    let mut args = vec!["score"];
    args.extend(base_args(&data, &out));
    let res = spade(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("spade index"));
}

#[test]
fn test_set_equal_to_train_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--test-equals-train"]);
    let out = tmp.path().join("out");
    for cmd in ["index", "score"] {
        let mut args = vec![cmd];
        args.extend(with_k(&data, &out, "1"));
        ok(&spade(&args));
    }
    let mut rdr = csv::Reader::from_path(out.join("synth/scores.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["image_id", "defect_type", "image_score"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0, "{r:?}");
    }
}

#[test]
fn random_retrieval_is_reproducible_and_config_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("out");
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(base_args(&data, &out));
        args.extend(["--retrieval", "random", "--seed", "7"]);
        args.extend_from_slice(extra);
        ok(&spade(&args));
    };
    run("index", &[]);
    run("score", &[]);
    let csv1 = fs::read(out.join("synth/scores.csv")).unwrap();
    let maps1: Vec<Vec<u8>> = files_under(&out.join("synth/maps")).iter().map(|p| fs::read(p).unwrap()).collect();

    run("score", &[]);
    assert_eq!(fs::read(out.join("synth/scores.csv")).unwrap(), csv1);

    // replay from the recorded effective config
    let config = out.join("config.json");
    let replay = tmp.path().join("replay.json");
    fs::copy(&config, &replay).unwrap();
    ok(&spade(&["score", "--config", s(&replay)]));
    let maps2: Vec<Vec<u8>> = files_under(&out.join("synth/maps")).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(maps1, maps2);
    assert_eq!(fs::read(out.join("synth/scores.csv")).unwrap(), csv1);
}

#[test]
fn eval_reports_each_class_and_perfect_maps_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--class", "alpha"]);
    synth(&data, &["--class", "beta", "--seed", "3"]);
    let out = tmp.path().join("out");

    // maps identical to the masks
    for class in ["alpha", "beta"] {
        let m = scan_dataset(&data, class).unwrap();
        for item in &m.test_items {
            let gt = ground_truth(item, (64, 64)).unwrap();
            let map = AnomalyMap {
                image_id: item.image_id.clone(),
                scores: gt.data.map(f64::from),
                image_score: if item.is_anomalous() { 1.0 } else { 0.0 },
            };
            write_heatmap(&out.join(class).join("maps"), &map).unwrap();
        }
    }
    let mut args = vec!["eval"];
    args.extend(base_args(&data, &out));
    let res = spade(&args);
    ok(&res);
    let table = String::from_utf8_lossy(&res.stdout);
    for row in ["alpha", "beta", "mean"] {
        let line = table.lines().find(|l| l.starts_with(row)).unwrap_or_else(|| panic!("{table}"));
        assert_eq!(line.split_whitespace().skip(1).collect::<Vec<_>>(), ["100.0", "100.0", "100.0"]);
    }
    assert!(out.join("alpha/report.json").is_file());
    assert!(out.join("beta/sweep.csv").is_file());
    assert!(out.join("summary.json").is_file());
}

#[test]
fn eval_without_maps_fails_with_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("out");
    let mut args = vec!["eval"];
    args.extend(base_args(&data, &out));
    let res = spade(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("spade score"));
}

#[test]
fn ablate_emits_one_report_per_layer_set() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = tmp.path().join("out");
    let mut args = vec!["ablate"];
    args.extend(base_args(&data, &out));
    let res = spade(&args);
    ok(&res);
    for set in ["layer3", "layer2", "layer1", "layer1+layer2+layer3"] {
        assert!(out.join("ablate").join(set).join("synth/report.json").is_file(), "{set}");
    }
    let table = fs::read_to_string(out.join("ablate/table.txt")).unwrap();
    assert!(table.contains("layer3 (4)") && table.contains("layer1 (16)"), "{table}");
    assert_eq!(table.lines().filter(|l| l.starts_with("mean")).count(), 3);
}

#[test]
fn bad_config_and_flags_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"data_root": "x", "not_a_field": true}"#).unwrap();
    assert_eq!(spade(&["index", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(spade(&["index", "--data-root", "x", "--k", "0"]).status.code(), Some(1));
    assert_eq!(spade(&["index", "--bogus"]).status.code(), Some(1));
    assert_eq!(spade(&["--help"]).status.code(), Some(0));
}
