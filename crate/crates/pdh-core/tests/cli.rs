//! End-to-end tests of the pdh binary: synth -> train -> encode -> eval,
//! determinism of checkpoints, config file handling, and exit codes.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pdh");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn pdh")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

/// Every regular file under `dir`, keyed by its relative path.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read_dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    out
}

#[test]
fn full_pipeline_and_determinism() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();

    // synth twice into different directories: must be bit-identical
    let data = root.join("data");
    let data2 = root.join("data2");
    for dir in [&data, &data2] {
        let out = run(&[
            "synth", "--out", dir.to_str().unwrap(),
            "--ids", "6", "--per-cam", "2", "--cams", "2", "--sigma", "0.05", "--seed", "7",
        ]);
        assert_ok(&out, "synth");
    }
    assert_eq!(dir_bytes(&data), dir_bytes(&data2), "synth output not deterministic");
    for sub in ["bounding_box_train", "bounding_box_test", "query"] {
        assert!(data.join(sub).is_dir(), "missing {sub}");
    }

    // train twice with identical settings: checkpoints must be bit-identical
    let bank = root.join("bank");
    let bank2 = root.join("bank2");
    for dir in [&bank, &bank2] {
        let out = run(&[
            "train", "--data", data.to_str().unwrap(),
            "--scheme", "EQL4", "--bits", "4", "--arch", "mlp:8",
            "--epochs", "2", "--lr", "0.1", "--seed", "5",
            "--out", dir.to_str().unwrap(),
        ]);
        assert_ok(&out, "train");
    }
    let bank_files = dir_bytes(&bank);
    assert_eq!(bank_files, dir_bytes(&bank2), "training not deterministic");
    assert!(bank_files.contains_key("manifest.txt"));
    for k in 0..4 {
        assert!(bank_files.contains_key(&format!("part_{k}.pdhnet")));
        assert!(bank_files.contains_key(&format!("part_{k}_loss.csv")));
    }

    // encode twice: code files must be bit-identical
    let codes = root.join("codes");
    let codes2 = root.join("codes2");
    for dir in [&codes, &codes2] {
        let out = run(&[
            "encode", "--bank", bank.to_str().unwrap(),
            "--data", data.to_str().unwrap(), "--out", dir.to_str().unwrap(),
        ]);
        assert_ok(&out, "encode");
    }
    assert_eq!(dir_bytes(&codes), dir_bytes(&codes2), "encoding not deterministic");
    for name in ["query.pdhcode", "gallery.pdhcode", "query.pdhrelx"] {
        assert!(codes.join(name).is_file(), "missing {name}");
    }

    // single-query evaluation
    let report_dir = root.join("eval");
    let out = run(&[
        "eval",
        "--query-codes", codes.join("query.pdhcode").to_str().unwrap(),
        "--gallery-codes", codes.join("gallery.pdhcode").to_str().unwrap(),
        "--out", report_dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval");
    let report = std::fs::read_to_string(report_dir.join("report.txt")).expect("report");
    for key in ["queries=", "skipped=", "rank1=", "rank5=", "rank10=", "rank20=", "mAP="] {
        assert!(report.contains(key), "report missing {key}: {report}");
    }
    let cmc = std::fs::read_to_string(report_dir.join("cmc.csv")).expect("cmc");
    assert!(cmc.starts_with("rank,cmc\n"));

    // pooled evaluation picks up query.pdhrelx automatically
    for mode in ["avg", "max"] {
        let out_dir = root.join(format!("eval_{mode}"));
        let out = run(&[
            "eval",
            "--query-codes", codes.join("query.pdhcode").to_str().unwrap(),
            "--gallery-codes", codes.join("gallery.pdhcode").to_str().unwrap(),
            "--pooling", mode,
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert_ok(&out, "pooled eval");
        assert!(out_dir.join("report.txt").is_file());
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let config = root.join("train.conf");
    let bank = root.join("bank");
    std::fs::write(
        &config,
        "scheme=EQL3\nbits=4\narch=mlp:8\nepochs=1\nseed=9\nsynth=ids=4,per=2,cams=2,sigma=0.05,seed=3\n",
    )
    .unwrap();
    // --scheme overrides the file's EQL3
    let out = run(&[
        "train", "--config", config.to_str().unwrap(),
        "--scheme", "WHOLE", "--out", bank.to_str().unwrap(),
    ]);
    assert_ok(&out, "train with config");
    let manifest = std::fs::read_to_string(bank.join("manifest.txt")).unwrap();
    assert!(manifest.contains("scheme=WHOLE"), "override ignored: {manifest}");
    assert!(manifest.contains("bits=4"));
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();

    // unknown scheme -> configuration error
    let out = run(&[
        "train", "--synth", "ids=4,per=2", "--scheme", "NOPE",
        "--out", root.join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // unknown config key -> configuration error
    let bad_conf = root.join("bad.conf");
    std::fs::write(&bad_conf, "bogus_key=1\n").unwrap();
    let out = run(&[
        "train", "--config", bad_conf.to_str().unwrap(),
        "--out", root.join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);

    // missing dataset directory -> ingestion error
    let out = run(&[
        "train", "--data", root.join("nope").to_str().unwrap(),
        "--out", root.join("x").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // corrupt code file -> evaluation-stage ingestion failure surfaces as format error
    let bad_codes = root.join("bad.pdhcode");
    std::fs::write(&bad_codes, b"not a code file").unwrap();
    let out = run(&[
        "eval", "--query-codes", bad_codes.to_str().unwrap(),
        "--gallery-codes", bad_codes.to_str().unwrap(),
        "--out", root.join("r").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // bad pooling mode -> configuration error
    let out = run(&[
        "eval", "--query-codes", bad_codes.to_str().unwrap(),
        "--gallery-codes", bad_codes.to_str().unwrap(),
        "--pooling", "median",
        "--out", root.join("r").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let csv = tmp.path().join("bench.csv");
    let out = run(&[
        "bench", "--n", "2000", "--bits", "256", "--repeats", "1",
        "--out", csv.to_str().unwrap(),
    ]);
    assert_ok(&out, "bench");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("pipeline,feature_extraction_ms,distance_ms,sorting_ms,total_ms\n"));
    assert!(text.contains("hamming_counting,"));
    assert!(text.contains("euclidean_comparison,"));
}
